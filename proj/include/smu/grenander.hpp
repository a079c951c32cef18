#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "smu/error.hpp"

namespace smu {

/// Grenander estimator: left derivative of the least concave majorant of the
/// empirical distribution function, evaluated at each observation (returned
/// in input order). Ties are handled through the ECDF jump sizes.
inline std::vector<double> grenander_1d(std::span<const double> data)
{
    if (data.empty()) throw Error("grenander_1d: empty sample");
    for (double x : data)
        if (!(x > 0.0)) throw Error("grenander_1d: observations must be > 0");

    const auto n = static_cast<double>(data.size());
    std::vector<double> sorted(data.begin(), data.end());
    std::sort(sorted.begin(), sorted.end());

    // ECDF knots (0, 0), (u_k, F_n(u_k)) over unique values.
    std::vector<double> kx{0.0}, ky{0.0};
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
        kx.push_back(sorted[i]);
        ky.push_back(static_cast<double>(i + 1) / n);
    }

    // Upper hull, scanning left to right.
    std::vector<std::size_t> hull;
    for (std::size_t k = 0; k < kx.size(); ++k) {
        while (hull.size() >= 2) {
            const std::size_t a = hull[hull.size() - 2], b = hull.back();
            // Drop b when it lies on or below the chord from a to k.
            const double cross = (kx[b] - kx[a]) * (ky[k] - ky[a]) - (ky[b] - ky[a]) * (kx[k] - kx[a]);
            if (cross >= 0.0)
                hull.pop_back();
            else
                break;
        }
        hull.push_back(k);
    }

    std::vector<double> seg_end, seg_slope;
    for (std::size_t s = 1; s < hull.size(); ++s) {
        const std::size_t a = hull[s - 1], b = hull[s];
        seg_end.push_back(kx[b]);
        seg_slope.push_back((ky[b] - ky[a]) / (kx[b] - kx[a]));
    }

    std::vector<double> out;
    out.reserve(data.size());
    for (double x : data) {
        // Segment (start, end] containing x.
        auto it = std::lower_bound(seg_end.begin(), seg_end.end(), x);
        out.push_back(seg_slope[static_cast<std::size_t>(it - seg_end.begin())]);
    }
    return out;
}

} // namespace smu
