#pragma once

// Tensor-product midpoint quadrature over boxes split at user breakpoints.
//
// Each dimension is cut into pieces at the given breakpoints; level L puts
// 2^L midpoint nodes in every piece. Successive levels are combined in a
// Romberg table, which is exact for integrands that are polynomial on every
// piece and fast for piecewise smooth ones.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "smu/error.hpp"

namespace smu {

struct QuadOptions {
    double rel_tol = 1e-8;
    /// Absolute floor for the convergence test, for integrals near zero.
    double abs_tol = 0.0;
    std::uint64_t max_nodes = std::uint64_t{1} << 24;
};

struct QuadResult {
    double value = 0.0;
    double error_estimate = 0.0;
    std::uint64_t nodes = 0;
    int level = 0;
    bool converged = false;
};

/// Sum with pairwise reduction; the result depends only on the input order.
inline double pairwise_sum(std::span<const double> v)
{
    if (v.size() <= 16) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

namespace detail {

/// Midpoint rule at one level. pieces[j] holds the breakpoints of dimension j.
inline double midpoint_level(const std::function<double(std::span<const double>)>& f,
                             const std::vector<std::vector<double>>& pieces, int level)
{
    const std::size_t d = pieces.size();
    const auto per_piece = std::size_t{1} << level;
    std::vector<std::vector<double>> nodes(d), weights(d);
    for (std::size_t j = 0; j < d; ++j) {
        const auto& b = pieces[j];
        for (std::size_t p = 0; p + 1 < b.size(); ++p) {
            const double h = (b[p + 1] - b[p]) / static_cast<double>(per_piece);
            for (std::size_t k = 0; k < per_piece; ++k) {
                nodes[j].push_back(b[p] + (static_cast<double>(k) + 0.5) * h);
                weights[j].push_back(h);
            }
        }
    }
    // Innermost dimension is summed in a row buffer; rows are then reduced
    // pairwise in lexicographic order.
    std::vector<std::size_t> idx(d, 0);
    std::vector<double> x(d);
    const std::size_t inner = nodes[d - 1].size();
    std::size_t outer = 1;
    for (std::size_t j = 0; j + 1 < d; ++j) outer *= nodes[j].size();
    std::vector<double> row(inner), rows(outer);
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t rem = o;
        double w = 1.0;
        for (std::size_t j = d - 1; j-- > 0;) {
            idx[j] = rem % nodes[j].size();
            rem /= nodes[j].size();
        }
        for (std::size_t j = 0; j + 1 < d; ++j) {
            x[j] = nodes[j][idx[j]];
            w *= weights[j][idx[j]];
        }
        for (std::size_t k = 0; k < inner; ++k) {
            x[d - 1] = nodes[d - 1][k];
            row[k] = f(x) * weights[d - 1][k];
        }
        rows[o] = w * pairwise_sum(row);
    }
    return pairwise_sum(rows);
}

} // namespace detail

/// Integrates f over the box whose per-dimension breakpoints (including both
/// ends, strictly increasing) are given in `pieces`.
inline QuadResult integrate(const std::function<double(std::span<const double>)>& f,
                            std::vector<std::vector<double>> pieces, const QuadOptions& opt = {})
{
    if (pieces.empty()) throw Error("integrate: dimension must be >= 1");
    std::uint64_t base = 1;
    for (auto& b : pieces) {
        if (b.size() < 2) throw Error("integrate: each dimension needs at least two breakpoints");
        for (std::size_t k = 0; k + 1 < b.size(); ++k)
            if (!(b[k] < b[k + 1])) throw Error("integrate: breakpoints must be strictly increasing");
        base *= b.size() - 1;
    }
    const auto d = static_cast<int>(pieces.size());

    // Romberg table over the even error expansion of the midpoint rule.
    QuadResult out;
    std::vector<double> prev_row;
    for (int level = 0;; ++level) {
        const std::uint64_t count = base << (level * d);
        if (level > 0 && (count > opt.max_nodes || (count >> (level * d)) != base)) break;
        std::vector<double> row{detail::midpoint_level(f, pieces, level)};
        double factor = 4.0;
        for (std::size_t k = 0; k < prev_row.size(); ++k, factor *= 4.0)
            row.push_back(row[k] + (row[k] - prev_row[k]) / (factor - 1.0));
        out.nodes += count;
        out.level = level;
        out.value = row.back();
        if (level > 0) {
            const double err = std::abs(row.back() - row[row.size() - 2]);
            out.error_estimate = err;
            if (err <= std::max(opt.rel_tol * std::abs(row.back()), opt.abs_tol)) {
                out.converged = true;
                return out;
            }
        }
        prev_row = std::move(row);
    }
    return out;
}

} // namespace smu
