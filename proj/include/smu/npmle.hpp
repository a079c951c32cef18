#pragma once

// Nonparametric maximum likelihood over scale mixtures of uniforms.
//
// The estimator's mixing measure lives on the data grid. Optimality is
// certified through the Fenchel conditions
//     c(x) = (1/n) sum_i 1[X_i <= x] / f(X_i) <= |x|   for all x,
// with equality at every atom. For a fixed set of dominated observations |x|
// is smallest at their componentwise join, which is a grid point, so scanning
// the grid is enough.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "smu/error.hpp"
#include "smu/random.hpp"
#include "smu/rect_geometry.hpp"
#include "smu/smu_core.hpp"

namespace smu {

/// Columns a[., j] = 1[X_i <= W_j] / |W_j| stored sparsely as the list of
/// dominated observations.
struct LikelihoodCache {
    struct Column {
        Coords point;
        double inv_volume = 0.0;
        std::vector<std::uint32_t> rows;
    };

    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<Column> columns;
    /// Candidates that dominate no observation; not part of the cache.
    std::vector<Coords> dropped;

    std::size_t size() const { return columns.size(); }

    double entry(std::size_t i, std::size_t j) const
    {
        const auto& r = columns[j].rows;
        return std::binary_search(r.begin(), r.end(), static_cast<std::uint32_t>(i)) ? columns[j].inv_volume : 0.0;
    }

    /// f_i = sum_j w_j a[i][j].
    std::vector<double> mixture(std::span<const double> weights) const
    {
        if (weights.size() != columns.size()) throw Error("LikelihoodCache: weight count mismatch");
        std::vector<double> f(n, 0.0);
        for (std::size_t j = 0; j < columns.size(); ++j) {
            if (weights[j] == 0.0) continue;
            const double v = weights[j] * columns[j].inv_volume;
            for (auto i : columns[j].rows) f[i] += v;
        }
        return f;
    }
};

inline LikelihoodCache::Column make_column(const Dataset& data, std::span<const double> point)
{
    if (point.size() != data.dim()) throw Error("make_column: dimension mismatch");
    LikelihoodCache::Column c;
    c.point.assign(point.begin(), point.end());
    c.inv_volume = 1.0 / volume(point);
    for (std::size_t i = 0; i < data.size(); ++i)
        if (dominated_by(data.row(i), point)) c.rows.push_back(static_cast<std::uint32_t>(i));
    return c;
}

inline LikelihoodCache build_cache(const Dataset& data, std::span<const Coords> candidates)
{
    if (data.empty()) throw Error("build_cache: empty dataset");
    if (data.size() > std::numeric_limits<std::uint32_t>::max()) throw Error("build_cache: too many observations");
    LikelihoodCache cache;
    cache.n = data.size();
    cache.d = data.dim();
    for (const auto& w : candidates) {
        auto col = make_column(data, w);
        if (col.rows.empty())
            cache.dropped.push_back(w);
        else
            cache.columns.push_back(std::move(col));
    }
    return cache;
}

inline double log_likelihood(std::span<const double> fitted)
{
    double acc = 0.0;
    for (double f : fitted) acc += std::log(f);
    return acc;
}

/// One EM update pi_j <- pi_j (1/n) sum_i a[i][j] / f_i.
inline std::vector<double> em_step(std::span<const double> weights, const LikelihoodCache& cache)
{
    const auto f = cache.mixture(weights);
    for (std::size_t i = 0; i < f.size(); ++i)
        if (!(f[i] > 0.0)) throw Error("em_step: data point uncovered (observation " + std::to_string(i) + ")");
    std::vector<double> out(weights.size(), 0.0);
    const auto n = static_cast<double>(cache.n);
    double total = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (weights[j] == 0.0) continue;
        double s = 0.0;
        for (auto i : cache.columns[j].rows) s += 1.0 / f[i];
        out[j] = weights[j] * cache.columns[j].inv_volume * s / n;
        total += out[j];
    }
    for (double& w : out) w /= total;
    return out;
}

/// D(y) = (1/n) sum_i 1[X_i <= y] / (|y| f(X_i)) - 1.
inline double directional_derivative(std::span<const double> y, std::span<const double> fitted, const Dataset& data)
{
    if (fitted.size() != data.size()) throw Error("directional_derivative: fitted/data size mismatch");
    double c = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (dominated_by(data.row(i), y)) c += 1.0 / fitted[i];
    return c / (static_cast<double>(data.size()) * volume(y)) - 1.0;
}

struct FenchelCertificate {
    /// max over grid points of c(x)/|x| - 1.
    double max_ineq_gap = 0.0;
    /// Grid point attaining max_ineq_gap (smallest |x| among ties).
    Coords argmax;
    /// |c(y_j)/|y_j| - 1| per atom, in atom order.
    std::vector<double> atom_eq_gaps;
    /// max of c(x)/|x| - 1 over random off-grid probes.
    double probe_gap = -1.0;
    double tol = 0.0;

    double worst_atom_gap() const
    {
        double w = 0.0;
        for (double g : atom_eq_gaps) w = std::max(w, g);
        return w;
    }
    bool passed() const { return max_ineq_gap <= tol && probe_gap <= tol && worst_atom_gap() <= tol; }
};

struct GridScanResult {
    double max_ratio = -std::numeric_limits<double>::infinity();
    std::uint64_t argmax = 0;
    Coords point;
    /// Best (ratio, flat index) within each slice of the first coordinate.
    std::vector<std::pair<double, std::uint64_t>> slice_best;
};

/// Maximizes c(x)/|x| over the grid with c(x) = sum_{i: X_i <= x} w_i.
///
/// Streams over the first coordinate: for each of its ranks the weights of
/// observations at or below that rank are prefix-summed over the remaining
/// dimensions, so memory is N / n_1 and time O(N d).
inline GridScanResult scan_grid(const Grid& grid, std::span<const std::size_t> ranks, std::span<const double> w)
{
    const std::size_t d = grid.dim();
    const std::size_t n = w.size();
    if (ranks.size() != n * d) throw Error("scan_grid: rank table size mismatch");

    std::size_t rest = 1;
    for (std::size_t j = 1; j < d; ++j) rest *= grid.extent(j);
    std::vector<std::size_t> rest_stride(d, 1);
    for (std::size_t j = d - 1; j >= 2; --j) rest_stride[j - 1] = rest_stride[j] * grid.extent(j);

    std::vector<double> rest_volume(rest, 1.0);
    for (std::size_t m = 0; m < rest; ++m)
        for (std::size_t j = 1; j < d; ++j)
            rest_volume[m] *= grid.coords(j)[(m / rest_stride[j]) % grid.extent(j)];

    std::vector<std::vector<std::pair<std::size_t, double>>> bucket(grid.extent(0));
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t m = 0;
        for (std::size_t j = 1; j < d; ++j) m += ranks[i * d + j] * rest_stride[j];
        bucket[ranks[i * d]].emplace_back(m, w[i]);
    }

    GridScanResult best;
    double best_volume = std::numeric_limits<double>::infinity();
    std::vector<double> raw(rest, 0.0), cum(rest, 0.0);
    const auto& c0 = grid.coords(0);
    best.slice_best.reserve(c0.size());
    for (std::size_t k = 0; k < c0.size(); ++k) {
        double slice_ratio = -std::numeric_limits<double>::infinity(), slice_volume = 0.0;
        std::uint64_t slice_arg = 0;
        for (const auto& [m, wi] : bucket[k]) raw[m] += wi;
        std::copy(raw.begin(), raw.end(), cum.begin());
        for (std::size_t j = 1; j < d; ++j) {
            const std::size_t s = rest_stride[j], block = s * grid.extent(j);
            for (std::size_t b = 0; b < rest; b += block)
                for (std::size_t m = b + s; m < b + block; ++m) cum[m] += cum[m - s];
        }
        for (std::size_t m = 0; m < rest; ++m) {
            const double vol = c0[k] * rest_volume[m];
            const double ratio = cum[m] / vol;
            if (ratio > slice_ratio || (ratio == slice_ratio && vol < slice_volume)) {
                slice_ratio = ratio;
                slice_arg = static_cast<std::uint64_t>(k) * rest + m;
                slice_volume = vol;
            }
            if (ratio > best.max_ratio || (ratio == best.max_ratio && vol < best_volume)) {
                best.max_ratio = ratio;
                best.argmax = static_cast<std::uint64_t>(k) * rest + m;
                best_volume = vol;
            }
        }
        best.slice_best.emplace_back(slice_ratio, slice_arg);
    }
    best.point = grid.point_at(best.argmax);
    return best;
}

/// Checks the Fenchel conditions for a candidate mixing measure.
/// Throws when the density vanishes at an observation.
inline FenchelCertificate certify(const MixingMeasure& g, const Dataset& data, double tol)
{
    if (data.empty()) throw Error("certify: empty dataset");
    if (g.dim() != data.dim()) throw Error("certify: dimension mismatch");
    const SmuDensity f(g);
    const std::size_t n = data.size();
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double fi = f.density(data.row(i));
        if (!(fi > 0.0))
            throw Error("certify: mixing density is zero at observation " + std::to_string(i) + " " +
                        format_coords(data.row(i)));
        w[i] = 1.0 / (static_cast<double>(n) * fi);
    }
    auto c_over_volume = [&](std::span<const double> x) {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (dominated_by(data.row(i), x)) c += w[i];
        return c / volume(x);
    };

    FenchelCertificate cert;
    cert.tol = tol;
    const Grid grid = make_grid(data);
    const auto ranks = grid_ranks(grid, data);
    auto scan = scan_grid(grid, ranks, w);
    cert.max_ineq_gap = scan.max_ratio - 1.0;
    cert.argmax = std::move(scan.point);
    for (std::size_t j = 0; j < g.size(); ++j) cert.atom_eq_gaps.push_back(std::abs(c_over_volume(g.atom(j)) - 1.0));

    const Coords top = grid_join(data);
    Rng rng(0x5eedf00dULL);
    Coords x(data.dim());
    for (int k = 0; k < 1000; ++k) {
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = 1.25 * top[j] * rng.uniform();
        cert.probe_gap = std::max(cert.probe_gap, c_over_volume(x) - 1.0);
    }
    return cert;
}

enum class CandidatePolicy { automatic, full_grid, vertex_direction };

struct FitOptions {
    double tol = 1e-8;
    std::size_t max_iter = 100000;
    CandidatePolicy policy = CandidatePolicy::automatic;
    /// automatic uses the full grid up to this many grid points.
    std::uint64_t full_grid_limit = 200000;
};

struct FitResult {
    MixingMeasure mixing;
    std::vector<double> fitted;
    double loglik = 0.0;
    std::size_t iterations = 0;
    FenchelCertificate certificate;
    bool certified = false;
    CandidatePolicy policy = CandidatePolicy::automatic;
};

namespace detail {

/// Lawson-Hanson active-set solver for min ||S x - b|| over the simplex
/// (x >= 0, sum x = 1), where column j of S is inv_volume_j / f_i on its
/// dominated rows. Warm-starts from a feasible x.
class SimplexLsq {
public:
    SimplexLsq(const std::vector<const LikelihoodCache::Column*>& cols, std::span<const double> f,
               std::span<const double> b)
        : cols_(cols), f_(f), b_(b), n_(f.size())
    {}

    std::vector<double> solve(std::vector<double> x)
    {
        const std::size_t k = cols_.size();
        std::vector<char> passive(k, 0), excluded(k, 0);
        for (std::size_t j = 0; j < k; ++j) passive[j] = x[j] > 0.0;
        x = step_towards(x, least_squares(passive, x), passive);

        double tol = -1.0;
        const std::size_t max_outer = 3 * (k + n_) + 50;
        for (std::size_t outer = 0; outer < max_outer; ++outer) {
            const auto grad = gradient(x);
            double mu = 0.0;
            std::size_t np = 0;
            for (std::size_t j = 0; j < k; ++j)
                if (passive[j]) {
                    mu += grad[j];
                    ++np;
                }
            mu /= static_cast<double>(np);
            if (tol < 0.0) {
                double scale = 1.0;
                for (double g : grad) scale = std::max(scale, std::abs(g));
                tol = 1e-12 * scale;
            }
            std::size_t t = k;
            double best = tol;
            for (std::size_t j = 0; j < k; ++j)
                if (!passive[j] && !excluded[j] && grad[j] - mu > best) {
                    best = grad[j] - mu;
                    t = j;
                }
            if (t == k) break;
            passive[t] = 1;
            const auto z = least_squares(passive, x);
            if (!(z[t] > 0.0)) {
                // Entering column does not help in floating point; skip it.
                passive[t] = 0;
                excluded[t] = 1;
                continue;
            }
            std::fill(excluded.begin(), excluded.end(), 0);
            x = step_towards(x, z, passive);
        }
        return x;
    }

private:
    /// Negative gradient of the half squared residual.
    std::vector<double> gradient(std::span<const double> x) const
    {
        std::vector<double> r(b_.begin(), b_.end());
        for (std::size_t j = 0; j < cols_.size(); ++j) {
            if (x[j] == 0.0) continue;
            const double v = x[j] * cols_[j]->inv_volume;
            for (auto i : cols_[j]->rows) r[i] -= v / f_[i];
        }
        for (std::size_t i = 0; i < n_; ++i) r[i] /= f_[i];
        std::vector<double> g(cols_.size());
        for (std::size_t j = 0; j < cols_.size(); ++j) {
            double s = 0.0;
            for (auto i : cols_[j]->rows) s += r[i];
            g[j] = s * cols_[j]->inv_volume;
        }
        return g;
    }

    /// Least squares on the passive columns subject to sum x = 1; zero
    /// elsewhere. Solved for the step from the feasible point x, so that the
    /// right-hand side is the projected gradient and shrinks near the optimum.
    std::vector<double> least_squares(const std::vector<char>& passive, const std::vector<double>& x) const
    {
        std::vector<std::size_t> idx;
        for (std::size_t j = 0; j < passive.size(); ++j)
            if (passive[j]) idx.push_back(j);
        std::vector<double> z(passive.size(), 0.0);
        if (idx.empty()) return z;
        double moved = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j)
            if (!passive[j]) moved += x[j];
        // Starting point on the passive face: passive part of x, with any
        // weight outside the face moved onto the first passive column.
        std::vector<double> base(passive.size(), 0.0);
        for (auto j : idx) base[j] = x[j];
        base[idx[0]] += moved;
        if (idx.size() == 1) {
            z[idx[0]] = 1.0;
            return z;
        }
        const auto grad = gradient(base);
        const auto rows = static_cast<Eigen::Index>(n_);
        const auto m = static_cast<Eigen::Index>(idx.size() - 1);
        Eigen::VectorXd ref = Eigen::VectorXd::Zero(rows);
        for (auto i : cols_[idx[0]]->rows) ref(static_cast<Eigen::Index>(i)) = cols_[idx[0]]->inv_volume / f_[i];
        Eigen::MatrixXd a = -ref.replicate(1, m);
        Eigen::VectorXd rhs(m);
        for (Eigen::Index c = 0; c < m; ++c) {
            const auto j = idx[static_cast<std::size_t>(c + 1)];
            for (auto i : cols_[j]->rows) a(static_cast<Eigen::Index>(i), c) += cols_[j]->inv_volume / f_[i];
            rhs(c) = grad[j] - grad[idx[0]];
        }
        const Eigen::MatrixXd gram = a.transpose() * a;
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        Eigen::VectorXd y = ldlt.solve(rhs);
        y += ldlt.solve(rhs - gram * y);
        double rest = 0.0;
        for (Eigen::Index c = 0; c < m; ++c) {
            const auto j = idx[static_cast<std::size_t>(c + 1)];
            z[j] = base[j] + y(c);
            rest += y(c);
        }
        z[idx[0]] = base[idx[0]] - rest;
        return z;
    }

    /// Inner Lawson-Hanson loop: move from feasible x towards the passive
    /// least-squares solution, dropping columns that hit zero.
    std::vector<double> step_towards(std::vector<double> x, std::vector<double> z, std::vector<char>& passive) const
    {
        for (std::size_t guard = 0; guard <= passive.size(); ++guard) {
            double alpha = 1.0;
            std::size_t blocking = passive.size();
            for (std::size_t j = 0; j < passive.size(); ++j)
                if (passive[j] && z[j] <= 0.0) {
                    const double denom = x[j] - z[j];
                    const double a = denom > 0.0 ? x[j] / denom : 0.0;
                    if (blocking == passive.size() || a < alpha) {
                        alpha = a;
                        blocking = j;
                    }
                }
            if (blocking == passive.size()) return z;
            for (std::size_t j = 0; j < passive.size(); ++j) {
                if (!passive[j]) continue;
                x[j] += alpha * (z[j] - x[j]);
                if (j == blocking || x[j] <= 1e-300) {
                    x[j] = 0.0;
                    passive[j] = 0;
                }
            }
            z = least_squares(passive, x);
        }
        return x;
    }

    const std::vector<const LikelihoodCache::Column*>& cols_;
    std::span<const double> f_;
    std::span<const double> b_;
    std::size_t n_;
};

/// Moves weight along null directions of the support columns until at most
/// n atoms remain; fitted values are unchanged.
inline void caratheodory_reduce(std::vector<const LikelihoodCache::Column*>& cols, std::vector<double>& w,
                                std::size_t n)
{
    while (cols.size() > n) {
        const auto m = static_cast<Eigen::Index>(cols.size());
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), m);
        for (Eigen::Index j = 0; j < m; ++j)
            for (auto i : cols[static_cast<std::size_t>(j)]->rows)
                a(static_cast<Eigen::Index>(i), j) = cols[static_cast<std::size_t>(j)]->inv_volume;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
        const Eigen::MatrixXd ker = lu.kernel();
        if (ker.cols() == 0) break;
        Eigen::VectorXd z = ker.col(0);
        if (z.maxCoeff() <= 0.0) z = -z;
        double t = std::numeric_limits<double>::infinity();
        Eigen::Index hit = -1;
        for (Eigen::Index j = 0; j < m; ++j)
            if (z(j) > 0.0 && w[static_cast<std::size_t>(j)] / z(j) < t) {
                t = w[static_cast<std::size_t>(j)] / z(j);
                hit = j;
            }
        if (hit < 0) break;
        std::vector<const LikelihoodCache::Column*> kept_cols;
        std::vector<double> kept_w;
        for (Eigen::Index j = 0; j < m; ++j) {
            const double v = w[static_cast<std::size_t>(j)] - t * z(j);
            if (j == hit || v <= 0.0) continue;
            kept_cols.push_back(cols[static_cast<std::size_t>(j)]);
            kept_w.push_back(v);
        }
        cols = std::move(kept_cols);
        w = std::move(kept_w);
    }
}

} // namespace detail

/// Computes the NPMLE by a constrained-Newton / vertex-direction scheme.
/// Starting from the grid join, each iteration scans the grid, adds the
/// strongest Fenchel violators (one under vertex_direction, up to 16 under
/// full_grid), then takes a Newton step for the weights on the current
/// support with backtracking and an EM fallback. Stops once the certificate
/// holds and no further progress is possible.
inline FitResult fit(const Dataset& data, const FitOptions& opt = {})
{
    if (data.empty()) throw Error("fit: need at least one observation");
    if (data.dim() >= 5) throw Error("fit: dimension d >= 5 is not supported");
    if (!(opt.tol > 0.0)) throw Error("fit: tol must be > 0");

    const std::size_t n = data.size();
    const std::size_t d = data.dim();
    const auto nd = static_cast<double>(n);
    const Grid grid = make_grid(data);
    const auto ranks = grid_ranks(grid, data);

    FitResult result;
    result.policy = opt.policy;
    if (result.policy == CandidatePolicy::automatic)
        result.policy = grid.size() <= opt.full_grid_limit ? CandidatePolicy::full_grid : CandidatePolicy::vertex_direction;

    // Column pool keyed by grid index; the active set refers into it.
    std::unordered_map<std::uint64_t, std::unique_ptr<LikelihoodCache::Column>> pool;
    std::vector<const LikelihoodCache::Column*> active;
    auto add_column = [&](std::uint64_t flat) {
        auto& slot = pool[flat];
        if (!slot) slot = std::make_unique<LikelihoodCache::Column>(make_column(data, grid.point_at(flat)));
        const auto* col = slot.get();
        if (col->rows.empty() || std::find(active.begin(), active.end(), col) != active.end()) return false;
        active.push_back(col);
        return true;
    };
    // Start from the grid join, which dominates every observation.
    {
        std::vector<std::size_t> r(d);
        for (std::size_t j = 0; j < d; ++j) r[j] = grid.extent(j) - 1;
        add_column(grid.flat_index(r));
    }

    std::vector<double> w(active.size(), 1.0);
    auto mixture = [&](std::span<const double> wt) {
        std::vector<double> f(n, 0.0);
        for (std::size_t j = 0; j < active.size(); ++j) {
            if (wt[j] == 0.0) continue;
            const double v = wt[j] * active[j]->inv_volume;
            for (auto i : active[j]->rows) f[i] += v;
        }
        return f;
    };
    auto prune = [&]() {
        std::vector<const LikelihoodCache::Column*> cols;
        std::vector<double> kept;
        double total = 0.0;
        for (std::size_t j = 0; j < active.size(); ++j)
            if (w[j] > 1e-15) {
                cols.push_back(active[j]);
                kept.push_back(w[j]);
                total += w[j];
            }
        for (double& v : kept) v /= total;
        active = std::move(cols);
        w = std::move(kept);
    };

    // Newton model of the log-likelihood on the active set: minimize
    // ||S x - 2|| over the simplex.
    const std::vector<double> two(n, 2.0);
    auto newton_target = [&](const std::vector<double>& f) {
        detail::SimplexLsq lsq(active, f, two);
        return lsq.solve(w);
    };

    const std::size_t batch = result.policy == CandidatePolicy::full_grid ? 16 : 1;
    const double polish = std::max(1e-13, 1e-4 * opt.tol);
    std::vector<double> f = mixture(w);
    std::size_t stalls = 0;
    std::vector<double> inv(n);
    for (std::size_t iter = 1; iter <= opt.max_iter; ++iter) {
        result.iterations = iter;

        for (std::size_t i = 0; i < n; ++i) inv[i] = 1.0 / (nd * f[i]);
        auto scan = scan_grid(grid, ranks, inv);
        const double gap = scan.max_ratio - 1.0;
        double atom_gap = 0.0;
        for (const auto* col : active) {
            double s = 0.0;
            for (auto i : col->rows) s += inv[i];
            atom_gap = std::max(atom_gap, std::abs(s * col->inv_volume - 1.0));
        }
        const double residual = std::max(gap, atom_gap);
        const bool certified = gap <= opt.tol && atom_gap <= opt.tol;
        if (certified && (residual <= polish || stalls >= 5)) break;
        if (stalls >= 25) break;

        // Grow the support by the strongest Fenchel violators.
        bool added = false;
        if (gap > polish) {
            auto& cand = scan.slice_best;
            const std::size_t take = std::min(batch, cand.size());
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(),
                              [](const auto& x, const auto& y) { return x.first > y.first; });
            for (std::size_t c = 0; c < take && cand[c].first > 1.0 + polish; ++c)
                if (add_column(cand[c].second)) {
                    w.push_back(0.0);
                    added = true;
                }
        }

        // Weight update on the current support. Log-likelihood changes are
        // accumulated from relative increments so that progress stays
        // measurable once it drops below the rounding level of the total.
        auto gain = [&](const std::vector<double>& dir, double alpha) {
            const auto df = mixture(dir);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double r = alpha * df[i] / f[i];
                if (!(r > -1.0)) return -std::numeric_limits<double>::infinity();
                acc += std::log1p(r);
            }
            return acc;
        };
        std::vector<double> dir(w.size());
        std::vector<double> score(w.size());
        for (std::size_t j = 0; j < active.size(); ++j) {
            double s = 0.0;
            for (auto i : active[j]->rows) s += 1.0 / f[i];
            score[j] = s * active[j]->inv_volume;
        }
        double improvement = 0.0;
        const auto target = newton_target(f);
        double slope = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            dir[j] = target[j] - w[j];
            slope += score[j] * dir[j];
        }
        if (slope > 0.0) {
            for (double alpha = 1.0; alpha > 1e-12; alpha *= 0.5) {
                const double g = gain(dir, alpha);
                if (g >= alpha * slope / 3.0) {
                    improvement = g;
                    for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::max(0.0, w[j] + alpha * dir[j]);
                    break;
                }
            }
        }
        if (!(improvement > 0.0)) {
            // Fall back to a single EM update so progress never stalls on a
            // poorly conditioned model.
            double total = 0.0;
            for (std::size_t j = 0; j < w.size(); ++j) {
                dir[j] = w[j] * score[j] / nd;
                total += dir[j];
            }
            for (std::size_t j = 0; j < w.size(); ++j) dir[j] = dir[j] / total - w[j];
            const double g = gain(dir, 1.0);
            if (g > 0.0) {
                improvement = g;
                for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::max(0.0, w[j] + dir[j]);
            }
        }
        prune();
        f = mixture(w);
        stalls = (improvement > 0.0 || added) ? 0 : stalls + 1;
    }

    std::vector<double> kept_w;
    std::vector<const LikelihoodCache::Column*> kept_cols;
    for (std::size_t j = 0; j < active.size(); ++j)
        if (w[j] > 0.0) {
            kept_cols.push_back(active[j]);
            kept_w.push_back(w[j]);
        }
    if (kept_cols.size() > n) detail::caratheodory_reduce(kept_cols, kept_w, n);

    std::vector<double> atoms;
    for (const auto* col : kept_cols) atoms.insert(atoms.end(), col->point.begin(), col->point.end());
    result.mixing = MixingMeasure::make(d, atoms, kept_w);

    const SmuDensity fhat(result.mixing);
    result.fitted.resize(n);
    for (std::size_t i = 0; i < n; ++i) result.fitted[i] = fhat.density(data.row(i));
    result.loglik = log_likelihood(result.fitted);
    result.certificate = certify(result.mixing, data, opt.tol);
    result.certified = result.certificate.passed();
    return result;
}

} // namespace smu
