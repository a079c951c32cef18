// smu: simulate, fit, certify and evaluate scale mixtures of uniforms, run the
// minimax checks and sample-size sweeps.
//
// Exit status: 0 when every requested check passes, 1 when a certification or
// check fails, 2 on bad input.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "smu/smu.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_check_failed = 1;
constexpr int exit_bad_input = 2;

std::string num(double v)
{
    return smu::csv::format_double(v);
}

// NaN and infinities become null so the summary stays valid JSON.
json jnum(double v)
{
    return std::isfinite(v) ? json(v) : json(nullptr);
}

smu::TruthModel parse_truth(const std::string& spec, std::size_t dim)
{
    if (spec == "exp") return smu::TruthModel::exp_product(dim);
    if (spec.rfind("file:", 0) == 0) {
        auto g = smu::csv::read_mixing(spec.substr(5));
        if (g.dim() != dim) throw smu::Error("truth file has dimension " + std::to_string(g.dim()) + ", --dim is " + std::to_string(dim));
        return smu::TruthModel::discrete(std::move(g));
    }
    throw smu::Error("--truth must be 'exp' or 'file:PATH', got '" + spec + "'");
}

smu::CandidatePolicy parse_policy(const std::string& s)
{
    if (s == "auto") return smu::CandidatePolicy::automatic;
    if (s == "full-grid") return smu::CandidatePolicy::full_grid;
    if (s == "vertex-direction") return smu::CandidatePolicy::vertex_direction;
    throw smu::Error("unknown --policy '" + s + "'");
}

std::string policy_name(smu::CandidatePolicy p)
{
    switch (p) {
    case smu::CandidatePolicy::full_grid: return "full-grid";
    case smu::CandidatePolicy::vertex_direction: return "vertex-direction";
    default: return "auto";
    }
}

fs::path prepare_dir(const std::string& dir)
{
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (!fs::is_directory(p)) throw smu::Error("cannot create output directory " + dir);
    return p;
}

void write_json(const fs::path& path, const json& j)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw smu::Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw smu::Error("write failed: " + path.string());
}

json certificate_json(const smu::FenchelCertificate& c)
{
    return {{"max_ineq_gap", jnum(c.max_ineq_gap)},
            {"worst_atom_gap", jnum(c.worst_atom_gap())},
            {"probe_gap", jnum(c.probe_gap)},
            {"argmax", c.argmax},
            {"tol", c.tol},
            {"passed", c.passed()}};
}

void print_certificate(const smu::FenchelCertificate& c)
{
    std::cout << "max_ineq_gap: " << num(c.max_ineq_gap) << '\n'
              << "worst_atom_gap: " << num(c.worst_atom_gap()) << '\n'
              << "probe_gap: " << num(c.probe_gap) << '\n'
              << "argmax: " << smu::format_coords(c.argmax) << '\n'
              << "certificate: " << (c.passed() ? "pass" : "fail") << " (tol " << num(c.tol) << ")\n";
}

struct SimulateArgs {
    std::size_t dim = 1;
    std::string truth = "exp";
    std::size_t n = 100;
    std::uint64_t seed = 1;
    std::string out = ".";
    std::string name = "data";
};

int cmd_simulate(const SimulateArgs& a)
{
    const auto truth = parse_truth(a.truth, a.dim);
    const auto data = truth.sample(a.n, a.seed);
    const auto dir = prepare_dir(a.out);
    const auto csv_path = dir / (a.name + ".csv");
    smu::csv::write_dataset(csv_path.string(), data);
    write_json(dir / (a.name + ".meta.json"),
               {{"truth", a.truth}, {"description", truth.describe()}, {"dim", a.dim}, {"n", a.n}, {"seed", a.seed}});
    std::cout << "wrote " << csv_path.string() << " (" << truth.describe() << ", n=" << a.n << ", seed=" << a.seed
              << ")\n";
    return exit_ok;
}

struct FitArgs {
    std::string data;
    double tol = 1e-8;
    std::size_t max_iter = 100000;
    std::string policy = "auto";
    std::string out = ".";
};

int cmd_fit(const FitArgs& a)
{
    const auto data = smu::csv::read_dataset(a.data);
    smu::FitOptions opt;
    opt.tol = a.tol;
    opt.max_iter = a.max_iter;
    opt.policy = parse_policy(a.policy);
    const auto r = smu::fit(data, opt);

    const auto dir = prepare_dir(a.out);
    smu::csv::write_mixing((dir / "mixing.csv").string(), r.mixing);
    smu::csv::write_fitted((dir / "fitted.csv").string(), r.fitted);

    json summary = {{"data", a.data},
                    {"n", data.size()},
                    {"dim", data.dim()},
                    {"loglik", r.loglik},
                    {"iterations", r.iterations},
                    {"atoms", r.mixing.size()},
                    {"policy", policy_name(r.policy)},
                    {"certified", r.certified},
                    {"certificate", certificate_json(r.certificate)}};
    bool ok = r.certified;
    std::optional<bool> oracle;
    if (data.dim() == 1) {
        const auto g = smu::grenander_1d(data.values());
        double worst = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(g[i] - r.fitted[i]));
        oracle = worst <= 1e-8;
        summary["oracle-agree"] = *oracle;
        summary["oracle_max_diff"] = worst;
        ok = ok && *oracle;
    }
    write_json(dir / "summary.json", summary);

    std::cout << "loglik: " << num(r.loglik) << '\n'
              << "iterations: " << r.iterations << '\n'
              << "atoms: " << r.mixing.size() << '\n'
              << "policy: " << policy_name(r.policy) << '\n';
    print_certificate(r.certificate);
    if (oracle) std::cout << "oracle-agree: " << (*oracle ? "true" : "false") << '\n';
    std::cout << "wrote " << (dir / "mixing.csv").string() << ", " << (dir / "fitted.csv").string() << ", "
              << (dir / "summary.json").string() << '\n';
    if (!r.certified) std::cerr << "fit not certified at tol " << num(a.tol) << "; best iterate written\n";
    return ok ? exit_ok : exit_check_failed;
}

struct CertifyArgs {
    std::string data;
    std::string mixing;
    double tol = 1e-8;
};

int cmd_certify(const CertifyArgs& a)
{
    const auto data = smu::csv::read_dataset(a.data);
    const auto g = smu::csv::read_mixing(a.mixing);
    smu::FenchelCertificate c;
    try {
        c = smu::certify(g, data, a.tol);
    } catch (const smu::Error& e) {
        std::cout << "certificate: fail\nreason: " << e.what() << '\n';
        return exit_check_failed;
    }
    print_certificate(c);
    return c.passed() ? exit_ok : exit_check_failed;
}

struct EvalArgs {
    std::string mixing;
    std::string probes;
    std::string out;
};

int cmd_eval(const EvalArgs& a)
{
    const smu::SmuDensity f(smu::csv::read_mixing(a.mixing));
    const auto probes = smu::csv::read_points(a.probes);
    std::ofstream file;
    if (!a.out.empty()) file = smu::csv::open_out(a.out);
    std::ostream& out = a.out.empty() ? std::cout : file;
    for (std::size_t j = 0; j < f.dim(); ++j) out << 'x' << j + 1 << ',';
    out << "density,cdf,bound\n";
    for (const auto& p : probes) {
        if (p.dim() != f.dim()) throw smu::Error("probe dimension differs from the mixing measure");
        for (double v : p.coords()) out << num(v) << ',';
        const double dens = f.density(p.coords());
        out << num(dens) << ',' << num(f.cdf(p.coords())) << ',' << num(dens * p.volume()) << '\n';
    }
    return exit_ok;
}

struct DistArgs {
    std::string mixing;
    std::string truth = "exp";
    std::size_t mc = 0;
    std::uint64_t seed = 1;
};

int cmd_dist(const DistArgs& a)
{
    const smu::SmuDensity f(smu::csv::read_mixing(a.mixing));
    const auto truth = parse_truth(a.truth, f.dim());
    std::cout << "against: " << truth.describe() << '\n';
    if (truth.kind() == smu::TruthModel::Kind::exp_product) {
        std::cout << "hellinger: " << num(smu::hellinger_vs_exp_truth(f)) << '\n';
        return exit_ok;
    }
    const auto& g = truth.discrete_density();
    if (a.mc > 0) {
        const auto h2 = smu::mc_distance(f, g, smu::Metric::hellinger_squared, a.mc, a.seed);
        const auto l1 = smu::mc_distance(f, g, smu::Metric::l1, a.mc, smu::mix64(a.seed));
        std::cout << "hellinger_squared: " << num(h2.estimate) << " +- " << num(h2.std_error) << " (monte carlo)\n"
                  << "l1: " << num(l1.estimate) << " +- " << num(l1.std_error) << " (monte carlo)\n";
        return exit_ok;
    }
    std::cout << "hellinger: " << num(smu::hellinger(f, g)) << '\n' << "l1: " << num(smu::l1_distance(f, g)) << '\n';
    return exit_ok;
}

struct MinimaxArgs {
    std::size_t dim = 1;
    std::vector<double> x0;
    std::vector<double> h;
    double theta = 0.5;
    std::uint64_t n = 4096;
    std::optional<double> b;
    bool force = false;
    std::size_t doublings = 20;
    std::size_t resolution = 8;
};

int cmd_minimax(const MinimaxArgs& a)
{
    smu::Coords x0 = a.x0.empty() ? smu::Coords(a.dim, 1.0) : smu::Coords(a.x0.begin(), a.x0.end());
    smu::Coords h = a.h.empty() ? smu::Coords(a.dim, 0.5) : smu::Coords(a.h.begin(), a.h.end());
    if (x0.size() != a.dim || h.size() != a.dim) throw smu::Error("--x0 and --half-width need --dim entries each");
    auto spec = smu::PerturbationSpec::exp_default(x0, h, a.theta, a.n);
    if (a.b) spec.b = *a.b;
    spec.force = a.force;
    spec.validate();
    const std::uint64_t n0 = smu::n_zero(spec);
    spec.n = std::max(spec.n, n0);
    const double f0 = spec.base.density(spec.x0);

    std::cout << std::setprecision(10);
    std::cout << "perturbation: d=" << a.dim << " x0=" << smu::format_coords(spec.x0)
              << " h=" << smu::format_coords(spec.h) << " theta=" << num(spec.theta) << " b=" << num(spec.b)
              << " f(x0)=" << num(f0) << '\n'
              << "n_0: " << n0 << "  n used: " << spec.n << '\n';

    const auto m1 = smu::check_mml1(spec);
    std::cout << "MML1 int g_n: quadrature " << num(m1.quadrature) << ", formula " << num(m1.formula) << ", rel err "
              << num(m1.rel_error) << " -> " << (m1.passed ? "pass" : "fail") << '\n';

    const auto m2 = smu::check_mml2(spec);
    const bool m2_ok = m2.rel_error_derived <= 1e-6;
    std::cout << "MML2 int g_n^2: quadrature " << num(m2.quadrature) << '\n'
              << "  printed (8/3)^d constant " << num(m2.printed) << " rel err " << num(m2.rel_error_printed) << '\n'
              << "  derived (2/3)^d constant " << num(m2.derived) << " rel err " << num(m2.rel_error_derived) << '\n'
              << "  verdict: " << smu::to_string(m2.verdict) << '\n';

    std::cout << "normalizer d_n - 1: " << num(smu::normalizer_excess(spec)) << '\n';

    std::vector<std::uint64_t> ns;
    for (std::size_t k = 0; k <= a.doublings; ++k) ns.push_back(spec.n << k);
    const auto lim = smu::hellinger_limit_sequence(spec, ns);
    std::cout << "hellinger limit sequence (n, n h^2):\n";
    for (std::size_t k = 0; k < lim.ns.size(); ++k) std::cout << "  " << lim.ns[k] << ' ' << num(lim.scaled[k]) << '\n';
    std::cout << "  last relative change " << num(lim.last_rel_change) << " -> "
              << (lim.stabilized() ? "stabilized" : "not stabilized") << '\n'
              << "  printed limit " << num(lim.printed_limit) << " rel err " << num(lim.rel_error_printed) << '\n'
              << "  derived limit " << num(lim.derived_limit) << " rel err " << num(lim.rel_error_derived) << '\n'
              << "  verdict: " << smu::to_string(lim.verdict) << '\n';

    const auto scan = smu::membership_scan(spec, a.resolution);
    std::cout << "membership at n=" << spec.n << ": " << (scan.accepted ? "accepted" : "rejected") << " (worst "
              << num(scan.worst) << ")";
    if (scan.witness) std::cout << " witness " << smu::format_coords(scan.witness->lower()) << " -> "
                                << smu::format_coords(scan.witness->upper());
    std::cout << '\n';
    const auto n1 = smu::membership_threshold(spec, a.resolution);
    std::cout << "n_1 estimate: " << (n1 ? std::to_string(*n1) : std::string("none up to 2^40")) << '\n';

    const double lb = smu::lower_bound_constant(f0, spec.b, a.dim);
    const double lb_theta = smu::lower_bound_constant_theta(f0, spec.b, a.dim, spec.theta);
    const double c_star = smu::bound_argmax(spec.theta, f0, spec.b, a.dim);
    const double g_star = smu::bound_objective(c_star, spec.theta, f0, spec.b, a.dim);
    std::cout << "lower bound constant: " << num(lb) << '\n'
              << "  theta form: " << num(lb_theta) << '\n'
              << "  G(c(theta), theta) = " << num(g_star) << " at c = " << num(c_star) << ", ratio to theta form "
              << num(g_star / lb_theta) << '\n';

    const bool ok = m1.passed && m2_ok && lim.stabilized() && n1.has_value();
    std::cout << "overall: " << (ok ? "pass" : "fail") << '\n';
    return ok ? exit_ok : exit_check_failed;
}

struct SweepArgs {
    std::size_t dim = 1;
    std::string truth = "exp";
    std::vector<std::size_t> ns{50, 100, 200, 400, 800};
    std::size_t reps = 20;
    std::uint64_t seed = 1;
    double tol = 1e-8;
    std::size_t max_iter = 100000;
    std::string out = ".";
    std::string probes;
    bool timing = false;
    std::size_t threads = 0;
};

int cmd_sweep(const SweepArgs& a)
{
    smu::SweepConfig cfg;
    cfg.truth = parse_truth(a.truth, a.dim);
    cfg.ns = a.ns;
    cfg.reps = a.reps;
    cfg.seed = a.seed;
    cfg.fit.tol = a.tol;
    cfg.fit.max_iter = a.max_iter;
    cfg.timing = a.timing;
    cfg.threads = a.threads;
    if (!a.probes.empty()) cfg.probes = smu::csv::read_points(a.probes);
    const auto rows = smu::run_sweep(cfg);
    const auto s = smu::summarize(rows);

    const auto dir = prepare_dir(a.out);
    smu::write_sweep_csv((dir / "sweep.csv").string(), rows);
    json per_n = json::array();
    for (std::size_t k = 0; k < s.ns.size(); ++k)
        per_n.push_back({{"n", s.ns[k]}, {"median_hellinger", jnum(s.median_hellinger[k])}, {"certified", s.certified[k]}});
    write_json(dir / "summary.json", {{"truth", cfg.truth.describe()},
                                      {"reps", a.reps},
                                      {"seed", a.seed},
                                      {"per_n", per_n},
                                      {"slope", jnum(s.slope)},
                                      {"slope_se", jnum(s.slope_se)},
                                      {"strictly_decreasing", s.strictly_decreasing},
                                      {"uncertified", s.uncertified_total}});

    std::cout << "truth: " << cfg.truth.describe() << ", reps " << a.reps << ", seed " << a.seed << '\n';
    for (std::size_t k = 0; k < s.ns.size(); ++k)
        std::cout << "n=" << s.ns[k] << " median hellinger " << num(s.median_hellinger[k]) << " (" << s.certified[k]
                  << "/" << a.reps << " certified)\n";
    std::cout << "slope: " << num(s.slope) << " +- " << num(s.slope_se) << '\n'
              << "strictly decreasing: " << (s.strictly_decreasing ? "true" : "false") << '\n'
              << "wrote " << (dir / "sweep.csv").string() << ", " << (dir / "summary.json").string() << '\n';
    if (s.uncertified_total) std::cerr << s.uncertified_total << " uncertified fits excluded from the summary\n";
    return s.uncertified_total == 0 ? exit_ok : exit_check_failed;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Scale mixtures of uniforms: NPMLE fitting, certification and minimax checks"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "Draw a dataset from a truth");
    c_sim->add_option("--dim", sim.dim, "Dimension")->check(CLI::Range(1, 64));
    c_sim->add_option("--truth", sim.truth, "exp or file:PATH (mixing CSV)");
    c_sim->add_option("--n", sim.n, "Sample size")->check(CLI::PositiveNumber);
    c_sim->add_option("--seed", sim.seed, "Seed");
    c_sim->add_option("--out", sim.out, "Output directory");
    c_sim->add_option("--name", sim.name, "Base name of the dataset file");

    FitArgs fa;
    auto* c_fit = app.add_subcommand("fit", "Fit the NPMLE and certify it");
    c_fit->add_option("data", fa.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
    c_fit->add_option("--tol", fa.tol, "Certificate tolerance");
    c_fit->add_option("--max-iter", fa.max_iter, "Iteration cap");
    c_fit->add_option("--policy", fa.policy, "auto, full-grid or vertex-direction");
    c_fit->add_option("--out", fa.out, "Output directory");

    CertifyArgs ca;
    auto* c_cert = app.add_subcommand("certify", "Check the optimality conditions of a mixing measure");
    c_cert->add_option("data", ca.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
    c_cert->add_option("mixing", ca.mixing, "Mixing CSV")->required()->check(CLI::ExistingFile);
    c_cert->add_option("--tol", ca.tol, "Certificate tolerance");

    EvalArgs ea;
    auto* c_eval = app.add_subcommand("eval", "Evaluate density and cdf at probe points");
    c_eval->add_option("mixing", ea.mixing, "Mixing CSV")->required()->check(CLI::ExistingFile);
    c_eval->add_option("--probes", ea.probes, "Probe CSV (x1..xd)")->required()->check(CLI::ExistingFile);
    c_eval->add_option("--out", ea.out, "Output CSV (stdout when omitted)");

    DistArgs da;
    auto* c_dist = app.add_subcommand("dist", "Distance from a fitted density to a truth");
    c_dist->add_option("mixing", da.mixing, "Mixing CSV")->required()->check(CLI::ExistingFile);
    c_dist->add_option("--truth", da.truth, "exp or file:PATH");
    c_dist->add_option("--mc", da.mc, "Monte Carlo draws instead of the exact partition (>= 1000)");
    c_dist->add_option("--seed", da.seed, "Monte Carlo seed");

    MinimaxArgs ma;
    auto* c_mm = app.add_subcommand("minimax", "Verify the local perturbation used in the minimax lower bound");
    c_mm->add_option("--dim", ma.dim, "Dimension")->check(CLI::Range(1, 4));
    c_mm->add_option("--x0", ma.x0, "Perturbation centre (default 1,...,1)")->delimiter(',');
    c_mm->add_option("--half-width", ma.h, "Half-width scales (default 0.5,...,0.5)")->delimiter(',');
    c_mm->add_option("--theta", ma.theta, "Perturbation size in (0,1)");
    c_mm->add_option("--n", ma.n, "Sample size (raised to n_0 if smaller)")->check(CLI::PositiveNumber);
    c_mm->add_option("--b", ma.b, "Mixed derivative at x0 (default from the exp-product base)");
    c_mm->add_flag("--force", ma.force, "Allow theta outside (0,1)");
    c_mm->add_option("--doublings", ma.doublings, "Doublings of n in the Hellinger sequence")->check(CLI::Range(1, 40));
    c_mm->add_option("--resolution", ma.resolution, "Cells per segment in the membership scan")->check(CLI::PositiveNumber);

    SweepArgs sw;
    auto* c_sw = app.add_subcommand("sweep", "Fit replicated samples over a list of sample sizes");
    c_sw->add_option("--dim", sw.dim, "Dimension")->check(CLI::Range(1, 4));
    c_sw->add_option("--truth", sw.truth, "exp or file:PATH");
    c_sw->add_option("--n", sw.ns, "Sample sizes, strictly increasing")->delimiter(',');
    c_sw->add_option("--reps", sw.reps, "Replications per n")->check(CLI::PositiveNumber);
    c_sw->add_option("--seed", sw.seed, "Seed");
    c_sw->add_option("--tol", sw.tol, "Certificate tolerance");
    c_sw->add_option("--max-iter", sw.max_iter, "Iteration cap");
    c_sw->add_option("--out", sw.out, "Output directory");
    c_sw->add_option("--probes", sw.probes, "Probe CSV for the pointwise error")->check(CLI::ExistingFile);
    c_sw->add_flag("--timing", sw.timing, "Record wall time per row");
    c_sw->add_option("--threads", sw.threads, "Worker threads (0 = all cores)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*c_sim) return cmd_simulate(sim);
        if (*c_fit) return cmd_fit(fa);
        if (*c_cert) return cmd_certify(ca);
        if (*c_eval) return cmd_eval(ea);
        if (*c_dist) return cmd_dist(da);
        if (*c_mm) return cmd_minimax(ma);
        if (*c_sw) return cmd_sweep(sw);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_bad_input;
    }
    return exit_bad_input;
}
