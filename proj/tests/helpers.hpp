#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "smu/smu.hpp"

namespace smu::testing {

/// Random mixing measure with k atoms whose coordinates lie in (lo, hi).
inline MixingMeasure random_mixing(Rng& rng, std::size_t d, std::size_t k, double lo = 0.2, double hi = 4.0)
{
    std::vector<double> atoms(d * k), weights(k);
    for (auto& a : atoms) a = lo + (hi - lo) * rng.uniform();
    for (auto& w : weights) w = 0.05 + rng.uniform();
    return MixingMeasure::make(d, atoms, weights);
}

/// Random probability vector of length k (flat Dirichlet).
inline std::vector<double> random_simplex(Rng& rng, std::size_t k)
{
    std::vector<double> w(k);
    double s = 0.0;
    for (auto& v : w) s += (v = rng.exponential());
    for (auto& v : w) v /= s;
    return w;
}

/// Sorted distinct breakpoints 0, atom coordinates of every measure.
inline std::vector<std::vector<double>> breakpoints(std::initializer_list<const MixingMeasure*> gs, std::size_t d)
{
    std::vector<std::vector<double>> b(d, std::vector<double>{0.0});
    for (const auto* g : gs)
        for (std::size_t a = 0; a < g->size(); ++a)
            for (std::size_t j = 0; j < d; ++j) b[j].push_back(g->atom(a)[j]);
    for (auto& v : b) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return b;
}

/// Sum of term(x_mid, vol) over the cells of the partition, evaluating the
/// densities directly at cell midpoints. Independent of CellPartition.
template <class Term>
double midpoint_cell_sum(const std::vector<std::vector<double>>& b, Term term)
{
    const std::size_t d = b.size();
    std::vector<std::size_t> idx(d, 0);
    std::vector<double> x(d);
    double acc = 0.0;
    while (true) {
        double vol = 1.0;
        for (std::size_t j = 0; j < d; ++j) {
            x[j] = 0.5 * (b[j][idx[j]] + b[j][idx[j] + 1]);
            vol *= b[j][idx[j] + 1] - b[j][idx[j]];
        }
        acc += term(std::span<const double>(x), vol);
        std::size_t j = d;
        while (j-- > 0) {
            if (++idx[j] + 1 < b[j].size()) break;
            idx[j] = 0;
        }
        if (j == static_cast<std::size_t>(-1)) break;
    }
    return acc;
}

} // namespace smu::testing
