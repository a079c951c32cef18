#pragma once

// Sample-size sweeps: simulate from a truth, fit, certify and measure the
// distance to the truth for every (n, replication) pair.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "smu/csv_io.hpp"
#include "smu/density_metrics.hpp"
#include "smu/error.hpp"
#include "smu/npmle.hpp"
#include "smu/random.hpp"
#include "smu/smu_core.hpp"

namespace smu {

/// Seed of replication `rep` at position `n_index` of the n list. Depends on
/// nothing else, so adding replications keeps earlier rows unchanged.
inline std::uint64_t derive_seed(std::uint64_t seed, std::size_t n_index, std::size_t rep)
{
    const std::uint64_t cell = mix64((static_cast<std::uint64_t>(n_index) << 32) ^ static_cast<std::uint64_t>(rep) ^
                                     0x6a09e667f3bcc909ULL);
    return mix64(seed ^ cell);
}

struct SweepConfig {
    TruthModel truth = TruthModel::exp_product(1);
    std::vector<std::size_t> ns;
    std::size_t reps = 1;
    std::uint64_t seed = 1;
    FitOptions fit;
    /// Points for the pointwise error; (1, ..., 1) when empty.
    std::vector<Point> probes;
    /// Record wall time per row; off by default so output is reproducible.
    bool timing = false;
    /// Worker threads; 0 means hardware concurrency.
    std::size_t threads = 0;
    /// Draws for the Monte Carlo fallback when the exact partition is too big.
    std::size_t mc_draws = 200000;

    void validate() const
    {
        if (ns.empty()) throw Error("sweep: n list is empty");
        for (std::size_t k = 0; k < ns.size(); ++k) {
            if (ns[k] == 0) throw Error("sweep: n must be >= 1");
            if (k && !(ns[k] > ns[k - 1])) throw Error("sweep: n list must be strictly increasing");
        }
        if (reps == 0) throw Error("sweep: replications must be >= 1");
    }
};

struct SweepRecord {
    std::size_t n = 0;
    std::size_t rep = 0;
    double hellinger = 0.0;
    /// NaN when no exact or Monte Carlo path applies (exp-product truth).
    double l1 = std::numeric_limits<double>::quiet_NaN();
    double ptwise_err = 0.0;
    std::size_t iters = 0;
    double cert_gap = 0.0;
    bool certified = false;
    double wall_ms = 0.0;
};

struct DistanceToTruth {
    double hellinger = 0.0;
    double l1 = std::numeric_limits<double>::quiet_NaN();
};

/// Hellinger (and L1 when available) from a fitted density to the truth.
/// Discrete truths use the exact cell partition, falling back to Monte Carlo
/// when it exceeds the cell limit.
inline DistanceToTruth distance_to_truth(const SmuDensity& fitted, const TruthModel& truth, std::size_t mc_draws,
                                         std::uint64_t seed)
{
    DistanceToTruth out;
    if (truth.kind() == TruthModel::Kind::exp_product) {
        out.hellinger = hellinger_vs_exp_truth(fitted);
        return out;
    }
    const auto& g = truth.discrete_density();
    long double cells = 1.0L;
    for (std::size_t j = 0; j < fitted.dim(); ++j) {
        std::vector<double> c{0.0};
        for (const auto* m : {&fitted.mixing(), &g.mixing()})
            for (std::size_t a = 0; a < m->size(); ++a) c.push_back(m->atom(a)[j]);
        std::sort(c.begin(), c.end());
        cells *= static_cast<long double>(std::unique(c.begin(), c.end()) - c.begin() - 1);
    }
    if (cells <= static_cast<long double>(CellPartition::max_cells)) {
        out.hellinger = hellinger(fitted, g);
        out.l1 = l1_distance(fitted, g);
        return out;
    }
    out.hellinger = std::sqrt(std::clamp(mc_distance(fitted, g, Metric::hellinger_squared, mc_draws, seed).estimate, 0.0, 1.0));
    out.l1 = std::clamp(mc_distance(fitted, g, Metric::l1, mc_draws, mix64(seed)).estimate, 0.0, 2.0);
    return out;
}

/// One (n, replication) cell of a sweep.
inline SweepRecord run_replication(const SweepConfig& cfg, std::size_t n_index, std::size_t rep)
{
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t seed = derive_seed(cfg.seed, n_index, rep);
    const Dataset data = cfg.truth.sample(cfg.ns[n_index], seed);
    const FitResult fr = fit(data, cfg.fit);
    const SmuDensity fhat(fr.mixing);

    SweepRecord r;
    r.n = cfg.ns[n_index];
    r.rep = rep;
    r.iters = fr.iterations;
    r.certified = fr.certified;
    r.cert_gap = std::max({fr.certificate.max_ineq_gap, fr.certificate.probe_gap, fr.certificate.worst_atom_gap()});
    const auto dist = distance_to_truth(fhat, cfg.truth, cfg.mc_draws, mix64(seed ^ 0xd1b54a32d192ed03ULL));
    r.hellinger = dist.hellinger;
    r.l1 = dist.l1;
    if (cfg.probes.empty()) {
        const std::vector<Point> ones{Point(Coords(cfg.truth.dim(), 1.0))};
        r.ptwise_err = pointwise_error(fhat, cfg.truth, ones);
    } else {
        r.ptwise_err = pointwise_error(fhat, cfg.truth, cfg.probes);
    }
    if (cfg.timing)
        r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return r;
}

/// Runs every replication on a pool of threads. Rows come back sorted by
/// (n, rep) regardless of completion order.
inline std::vector<SweepRecord> run_sweep(const SweepConfig& cfg)
{
    cfg.validate();
    for (const auto& p : cfg.probes)
        if (p.dim() != cfg.truth.dim()) throw Error("sweep: probe dimension differs from the truth");
    const std::size_t total = cfg.ns.size() * cfg.reps;
    std::vector<SweepRecord> rows(total);
    std::size_t workers = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, total);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (std::size_t k; (k = next.fetch_add(1)) < total;) {
            try {
                rows[k] = run_replication(cfg, k / cfg.reps, k % cfg.reps);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = total;
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return rows;
}

struct SweepSummary {
    std::vector<std::size_t> ns;
    /// Median Hellinger over certified rows per n (NaN when none certified).
    std::vector<double> median_hellinger;
    std::vector<std::size_t> certified;
    std::size_t uncertified_total = 0;
    /// Least-squares slope of log median Hellinger against log n.
    double slope = std::numeric_limits<double>::quiet_NaN();
    /// Its standard error (NaN with fewer than three points).
    double slope_se = std::numeric_limits<double>::quiet_NaN();
    bool strictly_decreasing = false;
};

inline double median(std::vector<double> v)
{
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline SweepSummary summarize(const std::vector<SweepRecord>& rows)
{
    SweepSummary s;
    for (const auto& r : rows)
        if (s.ns.empty() || s.ns.back() != r.n) s.ns.push_back(r.n);
    for (auto n : s.ns) {
        std::vector<double> h;
        for (const auto& r : rows)
            if (r.n == n && r.certified) h.push_back(r.hellinger);
        s.certified.push_back(h.size());
        s.median_hellinger.push_back(median(h));
    }
    for (const auto& r : rows) s.uncertified_total += r.certified ? 0 : 1;

    std::vector<double> lx, ly;
    for (std::size_t k = 0; k < s.ns.size(); ++k)
        if (std::isfinite(s.median_hellinger[k]) && s.median_hellinger[k] > 0.0) {
            lx.push_back(std::log(static_cast<double>(s.ns[k])));
            ly.push_back(std::log(s.median_hellinger[k]));
        }
    if (lx.size() >= 2) {
        const auto m = static_cast<double>(lx.size());
        double mx = 0.0, my = 0.0;
        for (std::size_t k = 0; k < lx.size(); ++k) {
            mx += lx[k];
            my += ly[k];
        }
        mx /= m;
        my /= m;
        double sxx = 0.0, sxy = 0.0;
        for (std::size_t k = 0; k < lx.size(); ++k) {
            sxx += (lx[k] - mx) * (lx[k] - mx);
            sxy += (lx[k] - mx) * (ly[k] - my);
        }
        s.slope = sxy / sxx;
        if (lx.size() >= 3) {
            double ssr = 0.0;
            for (std::size_t k = 0; k < lx.size(); ++k) {
                const double e = ly[k] - my - s.slope * (lx[k] - mx);
                ssr += e * e;
            }
            s.slope_se = std::sqrt(ssr / (m - 2.0) / sxx);
        }
    }
    s.strictly_decreasing = s.ns.size() >= 2;
    for (std::size_t k = 0; k < s.ns.size(); ++k) {
        if (!std::isfinite(s.median_hellinger[k])) s.strictly_decreasing = false;
        if (k && !(s.median_hellinger[k] < s.median_hellinger[k - 1])) s.strictly_decreasing = false;
    }
    return s;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRecord>& rows)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << "n,rep,hellinger,l1,ptwise_err,iters,cert_gap,certified,wall_ms\n";
    for (const auto& r : rows)
        out << r.n << ',' << r.rep << ',' << csv::format_double(r.hellinger) << ',' << csv::format_double(r.l1) << ','
            << csv::format_double(r.ptwise_err) << ',' << r.iters << ',' << csv::format_double(r.cert_gap) << ','
            << (r.certified ? "true" : "false") << ',' << csv::format_double(r.wall_ms) << '\n';
    if (!out) throw Error("write failed: " + path);
}

} // namespace smu
