#pragma once

// Distances between piecewise-constant SMU densities, computed exactly on the
// common cell partition, plus a semi-analytic Hellinger distance to the
// exp-product truth and a Monte Carlo fallback.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "smu/error.hpp"
#include "smu/quadrature.hpp"
#include "smu/random.hpp"
#include "smu/rect_geometry.hpp"
#include "smu/smu_core.hpp"

namespace smu {

/// Cells (b_k, b_{k+1}] per dimension from merged atom coordinates plus 0.
/// Every SMU density built from those atoms is constant on each cell.
class CellPartition {
public:
    static constexpr std::uint64_t max_cells = 10'000'000;

    static CellPartition of(const SmuDensity& f) { return CellPartition(f.dim(), {&f}); }
    static CellPartition of(const SmuDensity& f, const SmuDensity& g)
    {
        if (f.dim() != g.dim()) throw Error("CellPartition: dimension mismatch");
        return CellPartition(f.dim(), {&f, &g});
    }

    std::size_t dim() const { return breaks_.size(); }
    /// Breakpoints of dimension j, starting at 0 and ending at the bound.
    const std::vector<double>& breaks(std::size_t j) const { return breaks_[j]; }
    std::size_t extent(std::size_t j) const { return breaks_[j].size() - 1; }
    std::uint64_t cell_count() const { return count_; }
    Coords bound() const
    {
        Coords b;
        for (const auto& v : breaks_) b.push_back(v.back());
        return b;
    }

    /// Sum of cell volumes, reduced like every other cell sum.
    double total_volume() const
    {
        return sum([](std::uint64_t, double vol) { return vol; });
    }

    /// Value of f on every cell, lexicographic with dimension 0 most
    /// significant. f must be built from atoms on the partition.
    std::vector<double> values(const SmuDensity& f) const
    {
        const std::size_t d = dim();
        std::vector<std::uint64_t> stride(d, 1);
        for (std::size_t j = d - 1; j-- > 0;) stride[j] = stride[j + 1] * extent(j + 1);
        std::vector<double> v(count_, 0.0);
        const auto& g = f.mixing();
        for (std::size_t a = 0; a < g.size(); ++a) {
            auto y = g.atom(a);
            std::uint64_t k = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const auto& b = breaks_[j];
                const auto it = std::lower_bound(b.begin() + 1, b.end(), y[j]);
                if (it == b.end() || *it != y[j]) throw Error("CellPartition: atom is not on the partition");
                k += static_cast<std::uint64_t>(it - b.begin() - 1) * stride[j];
            }
            v[k] += g.weight(a) / volume(y);
        }
        // Suffix sums: the cell value collects every atom at or above it.
        for (std::size_t j = 0; j < d; ++j) {
            const std::uint64_t s = stride[j], block = s * extent(j);
            for (std::uint64_t base = 0; base < count_; base += block)
                for (std::uint64_t m = base + block - s; m-- > base;) v[m] += v[m + s];
        }
        return v;
    }

    /// Pairwise-reduced sum of term(cell index, cell volume) in cell order.
    template <class Term>
    double sum(Term term) const
    {
        const std::size_t d = dim();
        const std::size_t inner = extent(d - 1);
        const std::uint64_t outer = count_ / inner;
        std::vector<double> widths_last(inner);
        for (std::size_t k = 0; k < inner; ++k) widths_last[k] = breaks_[d - 1][k + 1] - breaks_[d - 1][k];
        std::vector<double> row(inner), rows(outer);
        for (std::uint64_t o = 0; o < outer; ++o) {
            std::uint64_t rem = o;
            double w = 1.0;
            for (std::size_t j = d - 1; j-- > 0;) {
                const std::uint64_t r = rem % extent(j);
                rem /= extent(j);
                w *= breaks_[j][r + 1] - breaks_[j][r];
            }
            for (std::size_t k = 0; k < inner; ++k) row[k] = term(o * inner + k, w * widths_last[k]);
            rows[o] = pairwise_sum(row);
        }
        return pairwise_sum(rows);
    }

private:
    CellPartition(std::size_t d, std::vector<const SmuDensity*> fs) : breaks_(d)
    {
        for (std::size_t j = 0; j < d; ++j) {
            auto& b = breaks_[j];
            b.push_back(0.0);
            for (const auto* f : fs) {
                const auto& g = f->mixing();
                for (std::size_t a = 0; a < g.size(); ++a) b.push_back(g.atom(a)[j]);
            }
            std::sort(b.begin(), b.end());
            b.erase(std::unique(b.begin(), b.end()), b.end());
        }
        long double count = 1.0L;
        for (std::size_t j = 0; j < d; ++j) count *= static_cast<long double>(extent(j));
        if (count > static_cast<long double>(max_cells))
            throw Error("exact distance needs " + std::to_string(static_cast<double>(count)) +
                        " cells, above the limit of 1e7; use mc_distance instead");
        count_ = static_cast<std::uint64_t>(count);
    }

    std::vector<std::vector<double>> breaks_;
    std::uint64_t count_ = 0;
};

/// Exact L1 distance, in [0, 2].
inline double l1_distance(const SmuDensity& f, const SmuDensity& g)
{
    const auto part = CellPartition::of(f, g);
    const auto vf = part.values(f), vg = part.values(g);
    return part.sum([&](std::uint64_t k, double vol) { return vol * std::abs(vf[k] - vg[k]); });
}

/// Exact Hellinger distance h with h^2 = (1/2) int (sqrt f - sqrt g)^2.
inline double hellinger(const SmuDensity& f, const SmuDensity& g)
{
    const auto part = CellPartition::of(f, g);
    const auto vf = part.values(f), vg = part.values(g);
    const double h2 = 0.5 * part.sum([&](std::uint64_t k, double vol) {
        const double r = std::sqrt(vf[k]) - std::sqrt(vg[k]);
        return vol * r * r;
    });
    return std::sqrt(std::clamp(h2, 0.0, 1.0));
}

/// Hellinger distance to prod exp(-x_i): h^2 = 1 - int sqrt(f f0), where
/// sqrt f0 integrates in closed form over each cell. Outside the support of
/// f the overlap vanishes.
inline double hellinger_vs_exp_truth(const SmuDensity& f)
{
    const auto part = CellPartition::of(f);
    const auto vf = part.values(f);
    const std::size_t d = part.dim();
    // Per-dimension overlap factors int_a^b exp(-x/2) dx.
    std::vector<std::vector<double>> factor(d);
    for (std::size_t j = 0; j < d; ++j) {
        const auto& b = part.breaks(j);
        for (std::size_t k = 0; k + 1 < b.size(); ++k)
            factor[j].push_back(-2.0 * std::exp(-0.5 * b[k]) * std::expm1(-0.5 * (b[k + 1] - b[k])));
    }
    std::vector<std::uint64_t> stride(d, 1);
    for (std::size_t j = d - 1; j-- > 0;) stride[j] = stride[j + 1] * part.extent(j + 1);
    const double overlap = part.sum([&](std::uint64_t k, double) {
        double w = std::sqrt(vf[k]);
        for (std::size_t j = 0; j < d; ++j) w *= factor[j][(k / stride[j]) % part.extent(j)];
        return w;
    });
    return std::sqrt(std::clamp(1.0 - overlap, 0.0, 1.0));
}

enum class Metric { l1, hellinger_squared };

struct McEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
};

/// Monte Carlo estimate of L1 or squared Hellinger distance by importance
/// sampling from m = (f + g)/2, drawn through the mixing measures.
inline McEstimate mc_distance(const SmuDensity& f, const SmuDensity& g, Metric metric, std::size_t n_mc,
                              std::uint64_t seed)
{
    if (f.dim() != g.dim()) throw Error("mc_distance: dimension mismatch");
    if (n_mc < 1000) throw Error("mc_distance: need at least 1000 draws");
    const std::size_t d = f.dim();
    auto cumulative = [](const MixingMeasure& m) {
        std::vector<double> c;
        double acc = 0.0;
        for (double w : m.weights()) c.push_back(acc += w);
        return c;
    };
    const auto cf = cumulative(f.mixing()), cg = cumulative(g.mixing());
    Rng rng(seed);
    Coords x(d);
    std::vector<double> terms(n_mc);
    for (std::size_t s = 0; s < n_mc; ++s) {
        const bool from_f = rng.uniform() < 0.5;
        const auto& mix = from_f ? f.mixing() : g.mixing();
        const auto& cum = from_f ? cf : cg;
        const double u = rng.uniform() * cum.back();
        const auto j = std::min<std::size_t>(
            static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin()), cum.size() - 1);
        auto y = mix.atom(j);
        for (std::size_t i = 0; i < d; ++i) x[i] = rng.uniform() * y[i];
        const double a = f.density(x), b = g.density(x);
        const double m = 0.5 * (a + b);
        if (metric == Metric::l1) {
            terms[s] = std::abs(a - b) / m;
        } else {
            const double r = std::sqrt(a) - std::sqrt(b);
            terms[s] = 0.5 * r * r / m;
        }
    }
    const double mean = pairwise_sum(terms) / static_cast<double>(n_mc);
    for (double& t : terms) t = (t - mean) * (t - mean);
    const double var = pairwise_sum(terms) / static_cast<double>(n_mc - 1);
    return {mean, std::sqrt(var / static_cast<double>(n_mc))};
}

/// max over probes of |f(x) - truth(x)|.
inline double pointwise_error(const SmuDensity& f, const TruthModel& truth, std::span<const Point> probes)
{
    double worst = 0.0;
    for (const auto& p : probes) worst = std::max(worst, std::abs(f.density(p.coords()) - truth.density(p.coords())));
    return worst;
}

} // namespace smu
