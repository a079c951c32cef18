#pragma once

// Scale mixtures of uniforms: f_G(x) = sum_j pi_j 1[x <= y_j] / |y_j| for a
// discrete mixing measure G, its distribution function, inversion from
// gridded values, membership testing and Khintchine sampling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smu/error.hpp"
#include "smu/random.hpp"
#include "smu/rect_geometry.hpp"

namespace smu {

/// Discrete probability measure on (0, inf)^d. Atoms are kept sorted
/// lexicographically, pairwise distinct and with strictly positive weights.
class MixingMeasure {
public:
    static constexpr double prune_threshold = 1e-12;

    MixingMeasure() = default;

    /// Merges duplicate atoms (summing weights), normalizes, drops weights
    /// below prune_threshold and renormalizes.
    static MixingMeasure make(std::size_t d, std::span<const double> atoms, std::span<const double> weights)
    {
        if (d == 0) throw Error("MixingMeasure: dimension must be >= 1");
        if (atoms.size() != weights.size() * d) throw Error("MixingMeasure: atom/weight count mismatch");
        if (weights.empty()) throw Error("MixingMeasure: no atoms");
        for (double a : atoms)
            if (!std::isfinite(a) || !(a > 0.0)) throw Error("MixingMeasure: atom coordinates must be finite and > 0");
        double total = 0.0;
        for (double w : weights) {
            if (!std::isfinite(w) || w < 0.0) throw Error("MixingMeasure: weights must be finite and >= 0");
            total += w;
        }
        if (!(total > 0.0)) throw Error("MixingMeasure: weights sum to zero");

        std::vector<std::size_t> order(weights.size());
        std::iota(order.begin(), order.end(), 0);
        auto atom = [&](std::size_t j) { return atoms.subspan(j * d, d); };
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            auto x = atom(a), y = atom(b);
            return std::lexicographical_compare(x.begin(), x.end(), y.begin(), y.end());
        });

        std::vector<double> merged_atoms;
        std::vector<double> merged_weights;
        for (std::size_t k = 0; k < order.size(); ++k) {
            auto a = atom(order[k]);
            const double w = weights[order[k]] / total;
            if (!merged_weights.empty() &&
                std::equal(a.begin(), a.end(), merged_atoms.end() - static_cast<std::ptrdiff_t>(d))) {
                merged_weights.back() += w;
            } else {
                merged_atoms.insert(merged_atoms.end(), a.begin(), a.end());
                merged_weights.push_back(w);
            }
        }

        MixingMeasure out;
        out.d_ = d;
        for (std::size_t j = 0; j < merged_weights.size(); ++j) {
            if (merged_weights[j] < prune_threshold) continue;
            out.atoms_.insert(out.atoms_.end(), merged_atoms.begin() + static_cast<std::ptrdiff_t>(j * d),
                              merged_atoms.begin() + static_cast<std::ptrdiff_t>((j + 1) * d));
            out.weights_.push_back(merged_weights[j]);
        }
        if (out.weights_.empty()) throw Error("MixingMeasure: every weight was pruned");
        const double kept = std::accumulate(out.weights_.begin(), out.weights_.end(), 0.0);
        for (double& w : out.weights_) w /= kept;
        return out;
    }

    static MixingMeasure point_mass(std::span<const double> y)
    {
        const double one = 1.0;
        return make(y.size(), y, std::span<const double>(&one, 1));
    }

    std::size_t dim() const { return d_; }
    std::size_t size() const { return weights_.size(); }
    std::span<const double> atom(std::size_t j) const { return {atoms_.data() + j * d_, d_}; }
    double weight(std::size_t j) const { return weights_[j]; }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<double>& atoms() const { return atoms_; }

    /// Componentwise maximum over atoms.
    Coords join() const
    {
        Coords out(atom(0).begin(), atom(0).end());
        for (std::size_t j = 1; j < size(); ++j)
            for (std::size_t i = 0; i < d_; ++i) out[i] = std::max(out[i], atoms_[j * d_ + i]);
        return out;
    }

private:
    std::size_t d_ = 0;
    std::vector<double> atoms_;
    std::vector<double> weights_;
};

/// f_G for a discrete G. Upper-semicontinuous version: 1[x <= y] is closed
/// at the upper boundary.
class SmuDensity {
public:
    SmuDensity() = default;
    explicit SmuDensity(MixingMeasure g) : g_(std::move(g)) {}

    std::size_t dim() const { return g_.dim(); }
    const MixingMeasure& mixing() const { return g_; }

    double density(std::span<const double> x) const
    {
        if (x.size() != dim()) throw Error("SmuDensity: dimension mismatch");
        double f = 0.0;
        for (std::size_t j = 0; j < g_.size(); ++j) {
            auto y = g_.atom(j);
            if (dominated_by(x, y)) f += g_.weight(j) / volume(y);
        }
        return f;
    }

    /// F_G(x) = sum_j pi_j |x ^ y_j| / |y_j|.
    double cdf(std::span<const double> x) const
    {
        if (x.size() != dim()) throw Error("SmuDensity: dimension mismatch");
        double acc = 0.0;
        for (std::size_t j = 0; j < g_.size(); ++j) {
            auto y = g_.atom(j);
            double ratio = 1.0;
            for (std::size_t i = 0; i < dim(); ++i) ratio *= std::min(x[i], y[i]) / y[i];
            acc += g_.weight(j) * ratio;
        }
        return acc;
    }

private:
    MixingMeasure g_;
};

inline double eval_density(const SmuDensity& f, std::span<const double> x) { return f.density(x); }
inline double eval_cdf(const SmuDensity& f, std::span<const double> x) { return f.cdf(x); }

/// Closed form of the built-in continuous truth, f0(x) = prod_i exp(-x_i).
inline double exp_truth_density(std::span<const double> x)
{
    double s = 0.0;
    for (double v : x) s += v;
    return std::exp(-s);
}

/// Density constant on the cells (previous coordinate, grid coordinate] of the
/// partition induced by a grid and the origin, and zero beyond the grid's
/// largest coordinates. values[k] is the value at grid point k, i.e. on the
/// cell whose upper corner is that point.
struct GriddedDensity {
    Grid grid;
    std::vector<double> values;

    GriddedDensity(Grid g, std::vector<double> v) : grid(std::move(g)), values(std::move(v))
    {
        if (values.size() != grid.size()) throw Error("GriddedDensity: value count does not match grid size");
        for (double x : values)
            if (!std::isfinite(x) || x < 0.0) throw Error("GriddedDensity: values must be finite and >= 0");
    }

    /// Integral over (0, support bound].
    double integral() const
    {
        double acc = 0.0;
        grid.for_each([&](std::uint64_t k, std::span<const double>) {
            const auto r = grid.ranks_of(k);
            double vol = 1.0;
            for (std::size_t j = 0; j < grid.dim(); ++j) {
                const auto& c = grid.coords(j);
                vol *= c[r[j]] - (r[j] ? c[r[j] - 1] : 0.0);
            }
            acc += vol * values[k];
        });
        return acc;
    }
};

/// Values of f at every grid point.
inline GriddedDensity render(const SmuDensity& f, const Grid& grid)
{
    std::vector<double> v(grid.size());
    grid.for_each([&](std::uint64_t k, std::span<const double> x) { v[k] = f.density(x); });
    return GriddedDensity(grid, std::move(v));
}

inline GriddedDensity render_exp_truth(const Grid& grid)
{
    std::vector<double> v(grid.size());
    grid.for_each([&](std::uint64_t k, std::span<const double> x) { v[k] = exp_truth_density(x); });
    return GriddedDensity(grid, std::move(v));
}

namespace detail {

/// Stride of dimension j in the lexicographic flat layout.
inline std::vector<std::uint64_t> strides(const Grid& grid)
{
    std::vector<std::uint64_t> s(grid.dim(), 1);
    for (std::size_t j = grid.dim() - 1; j-- > 0;) s[j] = s[j + 1] * grid.extent(j + 1);
    return s;
}

/// (-1)^d V_f[W, W+) for every grid point W, where W+ is the next grid point
/// up in every coordinate and f is extended by zero beyond the grid.
inline std::vector<double> unit_mixed_differences(const Grid& grid, std::span<const double> values)
{
    std::vector<double> diff(values.begin(), values.end());
    const auto stride = strides(grid);
    for (std::size_t j = 0; j < grid.dim(); ++j) {
        const std::uint64_t ext = grid.extent(j);
        for (std::uint64_t k = 0; k < diff.size(); ++k) {
            const std::uint64_t r = (k / stride[j]) % ext;
            diff[k] -= (r + 1 < ext) ? diff[k + stride[j]] : 0.0;
        }
    }
    return diff;
}

} // namespace detail

/// Inverts a gridded SMU density into its mixing measure:
/// pi_j = (-1)^d V_f[W_j, W_j+) |W_j|, with f extended by zero beyond the grid.
inline MixingMeasure weights_from_density(std::span<const double> values, const Grid& grid)
{
    if (values.size() != grid.size()) throw Error("weights_from_density: value count does not match grid size");
    const auto diff = detail::unit_mixed_differences(grid, values);
    std::vector<double> atoms;
    std::vector<double> weights;
    double total = 0.0;
    grid.for_each([&](std::uint64_t k, std::span<const double> w) {
        const double pi = diff[k] * volume(w);
        if (pi < -1e-9) throw Error("not an SMU density on this grid: negative weight at " + format_coords(w));
        if (pi <= 0.0) return;
        atoms.insert(atoms.end(), w.begin(), w.end());
        weights.push_back(pi);
        total += pi;
    });
    if (weights.empty()) throw Error("weights_from_density: density vanishes on the grid");
    if (std::abs(total - 1.0) > 1e-9)
        throw Error("weights_from_density: recovered weights sum to " + std::to_string(total) + ", not 1");
    return MixingMeasure::make(grid.dim(), atoms, weights);
}

struct MembershipResult {
    bool accepted = true;
    std::optional<Rect> witness;
    /// Smallest (-1)^d V_f over the scanned rectangles.
    double worst = 0.0;
};

/// Scans (-1)^d V_f[x, y) over all adjacent-cell rectangles of the grid,
/// including the ones reaching into the zero extension. Rectangles that
/// extend past the support bound report an upper corner of twice the bound.
inline MembershipResult is_smu(const GriddedDensity& f, double tol = 1e-12)
{
    const auto diff = detail::unit_mixed_differences(f.grid, f.values);
    MembershipResult out;
    out.worst = diff.empty() ? 0.0 : diff[0];
    std::uint64_t worst_k = 0;
    for (std::uint64_t k = 0; k < diff.size(); ++k)
        if (diff[k] < out.worst) {
            out.worst = diff[k];
            worst_k = k;
        }
    if (out.worst >= -tol) return out;

    out.accepted = false;
    const auto r = f.grid.ranks_of(worst_k);
    Coords lo(f.grid.dim()), hi(f.grid.dim());
    for (std::size_t j = 0; j < f.grid.dim(); ++j) {
        const auto& c = f.grid.coords(j);
        lo[j] = c[r[j]];
        hi[j] = (r[j] + 1 < c.size()) ? c[r[j] + 1] : 2.0 * c.back();
    }
    out.witness = Rect(lo, hi, Closure::lower_closed_upper_open);
    return out;
}

/// max over probes of f(x) |x|; bounded by 1 for every SMU density.
inline double pointwise_bound_check(const SmuDensity& f, std::span<const Point> probes)
{
    double worst = 0.0;
    for (const auto& p : probes) worst = std::max(worst, f.density(p.coords()) * p.volume());
    return worst;
}

/// Simulation truth: either a discrete mixing measure or the exp-product
/// density prod exp(-x_i), whose mixing law is a product of Gamma(2, 1).
class TruthModel {
public:
    enum class Kind { discrete, exp_product };

    static TruthModel discrete(MixingMeasure g)
    {
        TruthModel t;
        t.kind_ = Kind::discrete;
        t.d_ = g.dim();
        t.density_ = SmuDensity(std::move(g));
        double c = 0.0;
        for (double w : t.density_.mixing().weights()) t.cumulative_.push_back(c += w);
        return t;
    }

    static TruthModel exp_product(std::size_t d)
    {
        if (d == 0) throw Error("TruthModel: dimension must be >= 1");
        TruthModel t;
        t.kind_ = Kind::exp_product;
        t.d_ = d;
        return t;
    }

    Kind kind() const { return kind_; }
    std::size_t dim() const { return d_; }
    const SmuDensity& discrete_density() const
    {
        if (kind_ != Kind::discrete) throw Error("TruthModel: not a discrete truth");
        return density_;
    }

    double density(std::span<const double> x) const
    {
        return kind_ == Kind::exp_product ? exp_truth_density(x) : density_.density(x);
    }

    double cdf(std::span<const double> x) const
    {
        if (kind_ == Kind::discrete) return density_.cdf(x);
        double acc = 1.0;
        for (double v : x) acc *= -std::expm1(-std::max(v, 0.0));
        return acc;
    }

    std::string describe() const
    {
        if (kind_ == Kind::exp_product) return "exp-product d=" + std::to_string(d_);
        return "discrete d=" + std::to_string(d_) + " atoms=" + std::to_string(density_.mixing().size());
    }

    /// Draws Y from G, then a scale vector U of i.i.d. uniforms, returning
    /// (U_1 Y_1, ..., U_d Y_d). Deterministic given the seed.
    Dataset sample(std::size_t n, std::uint64_t seed) const
    {
        if (n == 0) throw Error("sample: n must be >= 1");
        Rng rng(seed);
        Dataset out(d_);
        Coords y(d_), x(d_);
        for (std::size_t k = 0; k < n; ++k) {
            draw_scale(rng, y);
            for (std::size_t i = 0; i < d_; ++i) x[i] = rng.uniform() * y[i];
            out.push_back(x);
        }
        return out;
    }

    void draw_scale(Rng& rng, std::span<double> y) const
    {
        if (kind_ == Kind::exp_product) {
            for (auto& v : y) v = rng.exponential() + rng.exponential();
            return;
        }
        const double u = rng.uniform() * cumulative_.back();
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        std::size_t j = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
        auto a = density_.mixing().atom(j);
        std::copy(a.begin(), a.end(), y.begin());
    }

private:
    Kind kind_ = Kind::exp_product;
    std::size_t d_ = 0;
    SmuDensity density_;
    std::vector<double> cumulative_;
};

inline Dataset sample(const TruthModel& truth, std::size_t n, std::uint64_t seed) { return truth.sample(n, seed); }

} // namespace smu
