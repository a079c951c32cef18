#pragma once

// Local perturbation construction behind the n^{1/3} minimax lower bound.
//
// Around x0 the box I_n = prod [x0_i - eps_i, x0_i + eps_i] with
// eps_i = h_i n^{-1/(3d)} carries
//     g_n(y) = b int_{u >= y} 1_{I_n}(u) h_n(u) du,
// h_n(u) = (-1)^d prod_i (1[x0_i < u_i <= x0_i + eps_i] - 1[x0_i - eps_i <= u_i <= x0_i]),
// and f_n = (f + theta g_n) / d_n. This header evaluates every piece, checks
// the closed-form integrals by quadrature and scans SMU membership.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smu/error.hpp"
#include "smu/quadrature.hpp"
#include "smu/rect_geometry.hpp"
#include "smu/smu_core.hpp"

namespace smu {

struct PerturbationSpec {
    Coords x0;
    Coords h;
    double theta = 0.5;
    std::uint64_t n = 1;
    /// Mixed derivative of the base density at x0.
    double b = 0.0;
    TruthModel base = TruthModel::exp_product(1);
    /// Allows theta outside (0, 1) for stress tests.
    bool force = false;

    /// Exp-product base with b = (-1)^d exp(-sum x0).
    static PerturbationSpec exp_default(Coords x0, Coords h, double theta, std::uint64_t n)
    {
        PerturbationSpec s;
        const std::size_t d = x0.size();
        double sum = 0.0;
        for (double v : x0) sum += v;
        s.b = (d % 2 ? -1.0 : 1.0) * std::exp(-sum);
        s.x0 = std::move(x0);
        s.h = std::move(h);
        s.theta = theta;
        s.n = n;
        s.base = TruthModel::exp_product(d);
        return s;
    }

    std::size_t dim() const { return x0.size(); }
    /// (-1)^d.
    double parity() const { return dim() % 2 ? -1.0 : 1.0; }

    double eps(std::size_t i) const
    {
        return h[i] * std::pow(static_cast<double>(n), -1.0 / (3.0 * static_cast<double>(dim())));
    }

    bool inside_orthant() const
    {
        for (std::size_t i = 0; i < dim(); ++i)
            if (!(x0[i] - eps(i) > 0.0)) return false;
        return true;
    }

    void validate() const
    {
        if (x0.empty()) throw Error("perturbation: dimension must be >= 1");
        if (h.size() != x0.size()) throw Error("perturbation: x0 and h dimensions differ");
        if (base.dim() != x0.size()) throw Error("perturbation: base density dimension differs from x0");
        for (std::size_t i = 0; i < dim(); ++i) {
            if (!(x0[i] > 0.0) || !std::isfinite(x0[i])) throw Error("perturbation: x0 must be finite and > 0");
            if (!(h[i] > 0.0) || !std::isfinite(h[i])) throw Error("perturbation: h must be finite and > 0");
        }
        if (n == 0) throw Error("perturbation: n must be >= 1");
        if (!(parity() * b > 0.0)) throw Error("perturbation: sign condition (-1)^d b > 0 is violated");
        if (!force && !(theta > 0.0 && theta < 1.0)) throw Error("perturbation: theta must lie in (0, 1)");
        if (force && !(theta >= 0.0)) throw Error("perturbation: theta must be >= 0");
    }

    /// Per-dimension breakpoints of I_n: lower edge, x0, upper edge.
    std::vector<std::vector<double>> box_pieces() const
    {
        std::vector<std::vector<double>> p(dim());
        for (std::size_t i = 0; i < dim(); ++i) p[i] = {x0[i] - eps(i), x0[i], x0[i] + eps(i)};
        return p;
    }

    bool in_box(std::span<const double> u) const
    {
        for (std::size_t i = 0; i < dim(); ++i)
            if (u[i] < x0[i] - eps(i) || u[i] > x0[i] + eps(i)) return false;
        return true;
    }
};

/// Smallest n with x0_i - eps_i > 0 in every coordinate.
inline std::uint64_t n_zero(const PerturbationSpec& spec)
{
    const auto k = 3.0 * static_cast<double>(spec.dim());
    double worst = 0.0;
    for (std::size_t i = 0; i < spec.dim(); ++i) worst = std::max(worst, std::pow(spec.h[i] / spec.x0[i], k));
    if (worst > 1e18) throw Error("n_zero: threshold exceeds 1e18");
    auto n = static_cast<std::uint64_t>(std::max(1.0, std::floor(worst)));
    PerturbationSpec s = spec;
    auto ok = [&](std::uint64_t m) {
        s.n = m;
        return s.inside_orthant();
    };
    while (n > 1 && ok(n - 1)) --n;
    while (!ok(n)) ++n;
    return n;
}

/// (-1)^d prod_i (1[x0 < u <= x0 + eps] - 1[x0 - eps <= u <= x0]); 0 off I_n.
inline double h_step(std::span<const double> u, const PerturbationSpec& spec)
{
    double v = spec.parity();
    for (std::size_t i = 0; i < spec.dim(); ++i) {
        const double lo = spec.x0[i] - spec.eps(i), hi = spec.x0[i] + spec.eps(i);
        if (u[i] > spec.x0[i] && u[i] <= hi)
            continue;
        else if (u[i] >= lo && u[i] <= spec.x0[i])
            v = -v;
        else
            return 0.0;
    }
    return v;
}

enum class GMode { closed_form, definitional };

/// g_n(y). closed_form: (-1)^d b prod max(0, eps_i - |y_i - x0_i|);
/// definitional: quadrature of b int_{u >= y} 1_{I_n}(u) h_n(u) du.
inline double g_perturb(std::span<const double> y, const PerturbationSpec& spec, GMode mode = GMode::closed_form)
{
    const std::size_t d = spec.dim();
    if (y.size() != d) throw Error("g_perturb: dimension mismatch");
    if (mode == GMode::closed_form) {
        double v = spec.parity() * spec.b;
        for (std::size_t i = 0; i < d; ++i) v *= std::max(0.0, spec.eps(i) - std::abs(y[i] - spec.x0[i]));
        return v;
    }
    std::vector<std::vector<double>> pieces(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double lo = std::max(y[i], spec.x0[i] - spec.eps(i)), hi = spec.x0[i] + spec.eps(i);
        if (!(lo < hi)) return 0.0;
        pieces[i] = {lo};
        if (lo < spec.x0[i]) pieces[i].push_back(spec.x0[i]);
        pieces[i].push_back(hi);
    }
    // h_n is constant on every piece, so the midpoint rule is exact up to
    // cancellation; the absolute floor is set against the box volume.
    QuadOptions opt;
    opt.rel_tol = 1e-13;
    opt.abs_tol = 1e-14;
    for (std::size_t i = 0; i < d; ++i) opt.abs_tol *= 2.0 * spec.eps(i);
    const auto r = integrate([&](std::span<const double> u) { return h_step(u, spec); }, std::move(pieces), opt);
    return spec.b * r.value;
}

/// d_n - 1 = (-1)^d theta b prod h_i^2 n^{-2/3}.
inline double normalizer_excess(const PerturbationSpec& spec)
{
    double v = spec.parity() * spec.theta * spec.b;
    for (double hi : spec.h) v *= hi * hi;
    return v * std::pow(static_cast<double>(spec.n), -2.0 / 3.0);
}

inline double normalizer(const PerturbationSpec& spec) { return 1.0 + normalizer_excess(spec); }

/// f_n(x) = (f(x) + theta g_n(x)) / d_n; g_n vanishes off I_n.
inline double perturbed_density(std::span<const double> x, const PerturbationSpec& spec)
{
    if (!spec.inside_orthant()) throw Error("n below n_0: the perturbation box leaves the positive orthant");
    return (spec.base.density(x) + spec.theta * g_perturb(x, spec)) / normalizer(spec);
}

struct Mml1Report {
    double quadrature = 0.0;
    double formula = 0.0;
    double rel_error = 0.0;
    bool passed = false;
};

/// int_{I_n} g_n against (-1)^d b prod h_i^2 n^{-2/3}.
inline Mml1Report check_mml1(const PerturbationSpec& spec, double tol = 1e-6)
{
    spec.validate();
    QuadOptions opt;
    opt.rel_tol = 1e-10;
    const auto q = integrate([&](std::span<const double> y) { return g_perturb(y, spec, GMode::definitional); },
                             spec.box_pieces(), opt);
    Mml1Report r;
    r.quadrature = q.value;
    r.formula = spec.parity() * spec.b * std::pow(static_cast<double>(spec.n), -2.0 / 3.0);
    for (double hi : spec.h) r.formula *= hi * hi;
    r.rel_error = std::abs(r.quadrature - r.formula) / std::abs(r.formula);
    r.passed = q.converged && r.rel_error <= tol;
    return r;
}

enum class Mml2Verdict { matches_printed, matches_derived, neither };

inline std::string to_string(Mml2Verdict v)
{
    switch (v) {
    case Mml2Verdict::matches_printed: return "matches-printed-(8/3)^d";
    case Mml2Verdict::matches_derived: return "matches-derived-(2/3)^d";
    default: return "neither";
    }
}

struct Mml2Report {
    double quadrature = 0.0;
    /// (8/3)^d b^2 prod h_i^3 / n.
    double printed = 0.0;
    /// (2/3)^d b^2 prod h_i^3 / n.
    double derived = 0.0;
    double rel_error_printed = 0.0;
    double rel_error_derived = 0.0;
    Mml2Verdict verdict = Mml2Verdict::neither;
};

/// Definitional quadrature of int_{I_n} g_n^2 against both candidate constants.
inline Mml2Report check_mml2(const PerturbationSpec& spec, double tol = 1e-6)
{
    spec.validate();
    QuadOptions opt;
    opt.rel_tol = 1e-10;
    const auto q = integrate(
        [&](std::span<const double> y) {
            const double g = g_perturb(y, spec, GMode::definitional);
            return g * g;
        },
        spec.box_pieces(), opt);
    const auto d = static_cast<double>(spec.dim());
    double scale = spec.b * spec.b / static_cast<double>(spec.n);
    for (double hi : spec.h) scale *= hi * hi * hi;
    Mml2Report r;
    r.quadrature = q.value;
    r.printed = std::pow(8.0 / 3.0, d) * scale;
    r.derived = std::pow(2.0 / 3.0, d) * scale;
    r.rel_error_printed = std::abs(r.quadrature - r.printed) / r.printed;
    r.rel_error_derived = std::abs(r.quadrature - r.derived) / r.derived;
    if (r.rel_error_printed <= tol)
        r.verdict = Mml2Verdict::matches_printed;
    else if (r.rel_error_derived <= tol)
        r.verdict = Mml2Verdict::matches_derived;
    return r;
}

/// Squared Hellinger distance between f_n and the base f: quadrature of
/// (1/2)(f_n - f)^2 / (sqrt f_n + sqrt f)^2 over I_n plus the exact outside
/// term (1/2)(1 - 1/sqrt d_n)^2 (1 - int_{I_n} f).
inline double perturbation_hellinger_sq(const PerturbationSpec& spec, double rel_tol = 1e-10)
{
    spec.validate();
    if (!spec.inside_orthant()) throw Error("n below n_0: the perturbation box leaves the positive orthant");
    const double excess = normalizer_excess(spec);
    const double dn = 1.0 + excess;
    QuadOptions opt;
    opt.rel_tol = rel_tol;
    const auto inside = integrate(
        [&](std::span<const double> x) {
            const double f = spec.base.density(x);
            const double fn = (f + spec.theta * g_perturb(x, spec)) / dn;
            const double diff = (spec.theta * g_perturb(x, spec) - excess * f) / dn;
            const double s = std::sqrt(fn) + std::sqrt(f);
            return 0.5 * diff * diff / (s * s);
        },
        spec.box_pieces(), opt);

    double box_mass;
    if (spec.base.kind() == TruthModel::Kind::exp_product) {
        box_mass = 1.0;
        for (std::size_t i = 0; i < spec.dim(); ++i) {
            const double lo = spec.x0[i] - spec.eps(i);
            box_mass *= -std::exp(-lo) * std::expm1(-2.0 * spec.eps(i));
        }
    } else {
        Coords lo(spec.dim()), hi(spec.dim());
        for (std::size_t i = 0; i < spec.dim(); ++i) {
            lo[i] = spec.x0[i] - spec.eps(i);
            hi[i] = spec.x0[i] + spec.eps(i);
        }
        box_mass = g_volume([&](std::span<const double> x) { return spec.base.cdf(x); }, Rect(lo, hi));
    }
    // 1 - 1/sqrt(d_n) without cancellation.
    const double shrink = excess / (std::sqrt(dn) * (1.0 + std::sqrt(dn)));
    return inside.value + 0.5 * shrink * shrink * (1.0 - box_mass);
}

enum class LimitVerdict { matches_printed, matches_derived, neither };

inline std::string to_string(LimitVerdict v)
{
    switch (v) {
    case LimitVerdict::matches_printed: return "matches-printed";
    case LimitVerdict::matches_derived: return "matches-derived";
    default: return "neither";
    }
}

struct HellingerLimitReport {
    std::vector<std::uint64_t> ns;
    /// n h^2(f_n, f) for each n.
    std::vector<double> scaled;
    /// |last / previous - 1| over the final step of the n list.
    double last_rel_change = 0.0;
    /// 8^{d-1} theta^2 b^2 prod h^3 / (3^d f(x0)).
    double printed_limit = 0.0;
    /// (2/3)^d theta^2 b^2 prod h^3 / (8 f(x0)).
    double derived_limit = 0.0;
    double rel_error_printed = 0.0;
    double rel_error_derived = 0.0;
    LimitVerdict verdict = LimitVerdict::neither;

    bool stabilized(double threshold = 0.05) const { return scaled.size() >= 2 && last_rel_change < threshold; }
};

/// n h^2(f_n, f) along an increasing n list, compared with both candidate
/// limits. The verdict names the candidate within `match_tol` relative of
/// the last value, if any.
inline HellingerLimitReport hellinger_limit_sequence(const PerturbationSpec& tmpl, std::span<const std::uint64_t> ns,
                                                     double match_tol = 0.05)
{
    if (ns.empty()) throw Error("hellinger_limit_sequence: empty n list");
    for (std::size_t k = 1; k < ns.size(); ++k)
        if (!(ns[k] > ns[k - 1])) throw Error("hellinger_limit_sequence: n list must be strictly increasing");
    HellingerLimitReport r;
    PerturbationSpec s = tmpl;
    for (auto n : ns) {
        s.n = n;
        r.ns.push_back(n);
        r.scaled.push_back(static_cast<double>(n) * perturbation_hellinger_sq(s));
    }
    if (r.scaled.size() >= 2) r.last_rel_change = std::abs(r.scaled.back() / r.scaled[r.scaled.size() - 2] - 1.0);

    const auto d = static_cast<double>(tmpl.dim());
    const double f0 = tmpl.base.density(tmpl.x0);
    double common = tmpl.theta * tmpl.theta * tmpl.b * tmpl.b / f0;
    for (double hi : tmpl.h) common *= hi * hi * hi;
    r.printed_limit = std::pow(8.0, d - 1.0) / std::pow(3.0, d) * common;
    r.derived_limit = std::pow(2.0 / 3.0, d) / 8.0 * common;
    r.rel_error_printed = std::abs(r.scaled.back() / r.printed_limit - 1.0);
    r.rel_error_derived = std::abs(r.scaled.back() / r.derived_limit - 1.0);
    if (r.rel_error_derived <= match_tol && r.rel_error_derived <= r.rel_error_printed)
        r.verdict = LimitVerdict::matches_derived;
    else if (r.rel_error_printed <= match_tol)
        r.verdict = LimitVerdict::matches_printed;
    return r;
}

struct MembershipScan {
    bool accepted = true;
    /// Most negative (-1)^d mixed difference found (0 when none is negative).
    double worst = 0.0;
    /// Lattice cell attaining `worst` when the scan rejects.
    std::optional<Rect> witness;
};

/// Checks (-1)^d V_{f_n}[a, b) >= -1e-10 on every cell of a lattice covering
/// I_n and a collar of width eps around it. Each of the four segments
/// between collar edge, box edge and x0 is cut into `resolution` cells.
inline MembershipScan membership_scan(const PerturbationSpec& spec, std::size_t resolution = 8)
{
    spec.validate();
    if (!spec.inside_orthant()) throw Error("n below n_0: the perturbation box leaves the positive orthant");
    if (resolution == 0) throw Error("membership_scan: resolution must be >= 1");
    const std::size_t d = spec.dim();
    std::vector<std::vector<double>> nodes(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double e = spec.eps(i), x = spec.x0[i];
        const double collar_lo = std::max(x - 2.0 * e, 0.5 * (x - e));
        const double edges[5] = {collar_lo, x - e, x, x + e, x + 2.0 * e};
        for (std::size_t s = 0; s < 4; ++s)
            for (std::size_t k = 0; k < resolution; ++k)
                nodes[i].push_back(edges[s] + (edges[s + 1] - edges[s]) * static_cast<double>(k) /
                                                  static_cast<double>(resolution));
        nodes[i].push_back(edges[4]);
    }
    const Grid lattice(nodes);
    std::vector<double> v(lattice.size());
    lattice.for_each([&](std::uint64_t k, std::span<const double> x) { v[k] = perturbed_density(x, spec); });

    // Forward differences in every dimension leave V[x_k, x_k+) at index k.
    std::vector<std::uint64_t> stride(d, 1);
    for (std::size_t j = d - 1; j-- > 0;) stride[j] = stride[j + 1] * lattice.extent(j + 1);
    for (std::size_t j = 0; j < d; ++j) {
        const std::uint64_t ext = lattice.extent(j);
        for (std::uint64_t k = 0; k < v.size(); ++k)
            if ((k / stride[j]) % ext + 1 < ext) v[k] = v[k + stride[j]] - v[k];
    }
    MembershipScan out;
    std::uint64_t worst_k = 0;
    lattice.for_each([&](std::uint64_t k, std::span<const double>) {
        const auto r = lattice.ranks_of(k);
        for (std::size_t j = 0; j < d; ++j)
            if (r[j] + 1 >= lattice.extent(j)) return;
        const double signed_diff = spec.parity() * v[k];
        if (signed_diff < out.worst) {
            out.worst = signed_diff;
            worst_k = k;
        }
    });
    if (out.worst < -1e-10) {
        out.accepted = false;
        const auto r = lattice.ranks_of(worst_k);
        Coords lo(d), hi(d);
        for (std::size_t j = 0; j < d; ++j) {
            lo[j] = nodes[j][r[j]];
            hi[j] = nodes[j][r[j] + 1];
        }
        out.witness = Rect(lo, hi);
    }
    return out;
}

/// Smallest n >= n_0 accepted by membership_scan, by doubling then
/// bisection (acceptance is taken to be monotone in n). Empty when no n up
/// to n_max is accepted.
inline std::optional<std::uint64_t> membership_threshold(const PerturbationSpec& tmpl, std::size_t resolution = 8,
                                                         std::uint64_t n_max = std::uint64_t{1} << 40)
{
    PerturbationSpec s = tmpl;
    auto accepted = [&](std::uint64_t n) {
        s.n = n;
        return membership_scan(s, resolution).accepted;
    };
    std::uint64_t lo = n_zero(tmpl);
    if (lo > n_max) return std::nullopt;
    if (accepted(lo)) return lo;
    std::uint64_t hi = lo;
    while (true) {
        if (hi >= n_max) return std::nullopt;
        hi = std::min(n_max, hi * 2);
        if (accepted(hi)) break;
        lo = hi;
    }
    while (hi - lo > 1) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        if (accepted(mid))
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

namespace detail {

inline void check_lower_bound_args(double f_at_x0, double b, std::size_t d)
{
    if (d == 0) throw Error("lower_bound_constant: dimension must be >= 1");
    if (!(f_at_x0 > 0.0)) throw Error("lower_bound_constant: f(x0) must be > 0");
    if (!((d % 2 ? -b : b) > 0.0)) throw Error("lower_bound_constant: sign condition (-1)^d b > 0 is violated");
}

} // namespace detail

/// e^{-1/3} / 2^d (3^{d-1})^{1/3} ((-1)^d b f(x0))^{1/3}.
inline double lower_bound_constant(double f_at_x0, double b, std::size_t d)
{
    detail::check_lower_bound_args(f_at_x0, b, d);
    const double sb = d % 2 ? -b : b;
    const auto dd = static_cast<double>(d);
    return std::exp(-1.0 / 3.0) / std::pow(2.0, dd) * std::cbrt(std::pow(3.0, dd - 1.0)) * std::cbrt(sb * f_at_x0);
}

/// The theta form e^{-1/3} / 2^d (3^{d-1} theta)^{1/3} ((-1)^d b f(x0))^{1/3}.
inline double lower_bound_constant_theta(double f_at_x0, double b, std::size_t d, double theta)
{
    if (!(theta > 0.0)) throw Error("lower_bound_constant_theta: theta must be > 0");
    return lower_bound_constant(f_at_x0, b, d) * std::cbrt(theta);
}

/// G(c, theta) = (1/4) (-1)^d b theta c exp(-2^{3d-2} theta^2 b^2 c^3 / (3^d f(x0))).
inline double bound_objective(double c, double theta, double f_at_x0, double b, std::size_t d)
{
    detail::check_lower_bound_args(f_at_x0, b, d);
    const double sb = d % 2 ? -b : b;
    const auto dd = static_cast<double>(d);
    return 0.25 * sb * theta * c *
           std::exp(-std::pow(2.0, 3.0 * dd - 2.0) * theta * theta * b * b * c * c * c / (std::pow(3.0, dd) * f_at_x0));
}

/// Maximizer of bound_objective over c: (3^{d-1} f / (2^{3d-2} theta^2 b^2))^{1/3}.
inline double bound_argmax(double theta, double f_at_x0, double b, std::size_t d)
{
    detail::check_lower_bound_args(f_at_x0, b, d);
    const auto dd = static_cast<double>(d);
    return std::cbrt(std::pow(3.0, dd - 1.0) * f_at_x0 / (std::pow(2.0, 3.0 * dd - 2.0) * theta * theta * b * b));
}

} // namespace smu
