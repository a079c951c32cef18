#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"

using namespace smu;
using smu::testing::random_simplex;

namespace {

const Dataset example_data()
{
    return Dataset(2, {1, 3, 3, 2});
}

/// Left derivative of the least concave majorant at each sorted observation
/// via the min-max formula min_{a < i} max_{b >= i} (F_b - F_a) / (x_b - x_a).
std::vector<double> lcm_minmax(std::vector<double> x)
{
    std::sort(x.begin(), x.end());
    const std::size_t n = x.size();
    std::vector<double> knots{0.0}, cdf{0.0};
    for (std::size_t i = 0; i < n; ++i) {
        if (knots.back() == x[i]) {
            cdf.back() += 1.0 / static_cast<double>(n);
        } else {
            knots.push_back(x[i]);
            cdf.push_back(cdf.back() + 1.0 / static_cast<double>(n));
        }
    }
    std::vector<double> at_knot(knots.size(), 0.0);
    for (std::size_t i = 1; i < knots.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < i; ++a) {
            double worst = -std::numeric_limits<double>::infinity();
            for (std::size_t b = i; b < knots.size(); ++b)
                worst = std::max(worst, (cdf[b] - cdf[a]) / (knots[b] - knots[a]));
            best = std::min(best, worst);
        }
        at_knot[i] = best;
    }
    std::vector<double> out;
    for (double v : x) out.push_back(at_knot[std::lower_bound(knots.begin(), knots.end(), v) - knots.begin()]);
    return out;
}

/// Brute-force c(x)/|x| - 1 maximised over the data grid.
double brute_force_gap(const MixingMeasure& g, const Dataset& data)
{
    const SmuDensity f(g);
    const auto n = static_cast<double>(data.size());
    double worst = -1.0;
    make_grid(data).for_each([&](std::uint64_t, std::span<const double> x) {
        double c = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (dominated_by(data.row(i), x)) c += 1.0 / (n * f.density(data.row(i)));
        worst = std::max(worst, c / volume(x) - 1.0);
    });
    return worst;
}

std::vector<Coords> grid_points(const Dataset& data)
{
    std::vector<Coords> out;
    make_grid(data).for_each([&](std::uint64_t, std::span<const double> x) { out.emplace_back(x.begin(), x.end()); });
    return out;
}

} // namespace

TEST(LikelihoodCache, WorkedExampleColumns)
{
    const auto data = example_data();
    const auto cache = build_cache(data, grid_points(data));
    ASSERT_EQ(cache.size(), 3u);
    ASSERT_EQ(cache.dropped.size(), 1u);
    EXPECT_EQ(cache.dropped[0], (Coords{1, 2}));
    for (std::size_t j = 0; j < cache.size(); ++j) {
        const auto& p = cache.columns[j].point;
        if (p == Coords{3, 3}) {
            EXPECT_DOUBLE_EQ(cache.entry(0, j), 1.0 / 9);
            EXPECT_DOUBLE_EQ(cache.entry(1, j), 1.0 / 9);
        } else if (p == Coords{1, 3}) {
            EXPECT_DOUBLE_EQ(cache.entry(0, j), 1.0 / 3);
            EXPECT_EQ(cache.entry(1, j), 0.0);
        } else {
            EXPECT_EQ(p, (Coords{3, 2}));
            EXPECT_EQ(cache.entry(0, j), 0.0);
            EXPECT_DOUBLE_EQ(cache.entry(1, j), 1.0 / 6);
        }
    }
}

TEST(LikelihoodCache, SmallCases)
{
    const Dataset one(2, {2, 5});
    const auto c1 = build_cache(one, std::vector<Coords>{{2, 5}});
    EXPECT_DOUBLE_EQ(c1.entry(0, 0), 0.1);
    const Dataset d1(1, {1, 2});
    const auto c2 = build_cache(d1, std::vector<Coords>{{2}});
    EXPECT_DOUBLE_EQ(c2.entry(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(c2.entry(1, 0), 0.5);
}

TEST(EmStep, SingleCandidateIsFixed)
{
    const Dataset data(1, {1, 2});
    const auto cache = build_cache(data, std::vector<Coords>{{2}});
    const std::vector<double> w{1.0};
    EXPECT_EQ(em_step(w, cache), w);
}

TEST(EmStep, AscentOnRandomWeights)
{
    Rng rng(31);
    const auto data = TruthModel::exp_product(2).sample(30, 4);
    const auto cache = build_cache(data, grid_points(data));
    for (int t = 0; t < 50; ++t) {
        const auto w = random_simplex(rng, cache.size());
        const double before = log_likelihood(cache.mixture(w));
        const double after = log_likelihood(cache.mixture(em_step(w, cache)));
        EXPECT_GE(after, before - 1e-12);
    }
}

TEST(EmStep, ExampleConvergesToKnownFittedValues)
{
    const auto data = example_data();
    const auto cache = build_cache(data, std::vector<Coords>{{1, 3}, {3, 2}, {3, 3}});
    std::vector<double> w(3, 1.0 / 3);
    for (int k = 0; k < 2000; ++k) w = em_step(w, cache);
    const auto f = cache.mixture(w);
    EXPECT_NEAR(f[0], 1.0 / 6, 1e-9);
    EXPECT_NEAR(f[1], 1.0 / 12, 1e-9);
    // Fenchel equality at every supported atom of the fixed point.
    for (std::size_t j = 0; j < 3; ++j) {
        if (w[j] > 1e-6) {
            EXPECT_NEAR(directional_derivative(cache.columns[j].point, f, data), 0.0, 1e-6);
        }
    }
}

TEST(EmStep, UncoveredPointThrows)
{
    const Dataset data(1, {1, 3});
    const auto cache = build_cache(data, std::vector<Coords>{{1}, {3}});
    EXPECT_THROW(em_step(std::vector<double>{1.0, 0.0}, cache), Error);
}

TEST(DirectionalDerivative, WorkedExample)
{
    const auto data = example_data();
    const std::vector<double> f{1.0 / 6, 1.0 / 12};
    EXPECT_NEAR(directional_derivative(Coords{3, 3}, f, data), 0.0, 1e-15);
    EXPECT_EQ(directional_derivative(Coords{1, 2}, f, data), -1.0);
    EXPECT_EQ(directional_derivative(Coords{0.5, 0.5}, f, data), -1.0);
}

TEST(Fit, WorkedExample)
{
    const auto r = fit(example_data());
    EXPECT_TRUE(r.certified);
    EXPECT_NEAR(r.fitted[0], 1.0 / 6, 1e-12);
    EXPECT_NEAR(r.fitted[1], 1.0 / 12, 1e-12);
    EXPECT_NEAR(r.loglik, -std::log(72.0), 1e-12);
    EXPECT_LE(r.certificate.max_ineq_gap, 1e-12);
    for (std::size_t a = 0; a < r.mixing.size(); ++a) {
        const Coords y(r.mixing.atom(a).begin(), r.mixing.atom(a).end());
        EXPECT_TRUE(y == Coords({1, 3}) || y == Coords({3, 2}) || y == Coords({3, 3})) << format_coords(y);
    }
}

TEST(Fit, SingleObservation)
{
    const Dataset data(3, {0.5, 2, 4});
    const auto r = fit(data);
    ASSERT_EQ(r.mixing.size(), 1u);
    EXPECT_EQ(Coords(r.mixing.atom(0).begin(), r.mixing.atom(0).end()), (Coords{0.5, 2, 4}));
    EXPECT_DOUBLE_EQ(r.fitted[0], 0.25);
    EXPECT_TRUE(r.certified);
    EXPECT_LE(r.certificate.worst_atom_gap(), 1e-15);
}

TEST(Fit, OneDimensionMatchesGrenander)
{
    const Dataset small(1, {1, 2, 4});
    const auto r = fit(small);
    const auto g = grenander_1d(small.values());
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.fitted[i], g[i], 1e-8);

    for (std::size_t n : {10u, 50u, 200u}) {
        const auto data = TruthModel::exp_product(1).sample(n, 100 + n);
        const auto rf = fit(data);
        const auto rg = grenander_1d(data.values());
        ASSERT_TRUE(rf.certified);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(rf.fitted[i], rg[i], 1e-8);
    }
}

TEST(Grenander, HandAndMinMaxOracle)
{
    const auto two = grenander_1d(std::vector<double>{1, 2});
    EXPECT_DOUBLE_EQ(two[0], 0.5);
    EXPECT_DOUBLE_EQ(two[1], 0.5);
    EXPECT_DOUBLE_EQ(grenander_1d(std::vector<double>{4})[0], 0.25);

    Rng rng(32);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> x(5 + t * 3);
        for (auto& v : x) v = (t % 3 == 0) ? std::ceil(5 * rng.uniform()) : rng.exponential();
        const auto g = grenander_1d(x);
        const auto o = lcm_minmax(x);
        std::vector<double> sorted = x;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const auto k = std::lower_bound(sorted.begin(), sorted.end(), x[i]) - sorted.begin();
            EXPECT_NEAR(g[i], o[k], 1e-12);
        }
    }
}

TEST(Grenander, NonincreasingOnUniformSample)
{
    Rng rng(33);
    std::vector<double> x(100);
    for (auto& v : x) v = rng.uniform();
    auto g = grenander_1d(x);
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
    for (std::size_t k = 1; k < order.size(); ++k) EXPECT_LE(g[order[k]], g[order[k - 1]]);
}

TEST(Certify, KnownOptimumAndTampering)
{
    const auto data = example_data();
    const auto opt = MixingMeasure::make(2, std::vector<double>{1, 3, 3, 2}, std::vector<double>{0.5, 0.5});
    const auto c = certify(opt, data, 1e-8);
    EXPECT_TRUE(c.passed());
    EXPECT_LE(c.max_ineq_gap, 1e-12);

    const auto tampered = MixingMeasure::make(2, std::vector<double>{1, 3, 3, 2}, std::vector<double>{0.55, 0.5});
    const auto ct = certify(tampered, data, 1e-8);
    EXPECT_FALSE(ct.passed());
    EXPECT_NEAR(ct.max_ineq_gap, brute_force_gap(tampered, data), 1e-14);
    EXPECT_GT(ct.max_ineq_gap, 1e-3);
}

TEST(Certify, UniformOverGridFails)
{
    const auto data = TruthModel::exp_product(2).sample(15, 12);
    const auto pts = grid_points(data);
    std::vector<double> atoms, w;
    for (const auto& p : pts) {
        atoms.insert(atoms.end(), p.begin(), p.end());
        w.push_back(1.0);
    }
    const auto g = MixingMeasure::make(2, atoms, w);
    const auto c = certify(g, data, 1e-8);
    EXPECT_FALSE(c.passed());
    EXPECT_GT(c.max_ineq_gap, 0.0);
    EXPECT_NEAR(c.max_ineq_gap, brute_force_gap(g, data), 1e-12);
}

TEST(Certify, SinglePointExact)
{
    const Dataset data(2, {2, 3});
    const auto c = certify(MixingMeasure::point_mass(Coords{2, 3}), data, 1e-8);
    EXPECT_LE(c.max_ineq_gap, 1e-15);
    EXPECT_LE(c.worst_atom_gap(), 1e-15);
    EXPECT_LE(c.probe_gap, 1e-15);
}

TEST(Certify, ZeroDensityAtDatumThrows)
{
    const Dataset data(1, {1, 3});
    EXPECT_THROW(certify(MixingMeasure::point_mass(Coords{2}), data, 1e-8), Error);
}

TEST(Fit, CertifiedFitsBeatRandomReweighting)
{
    Rng rng(34);
    for (int t = 0; t < 6; ++t) {
        const std::size_t d = 1 + t % 3;
        const auto data = TruthModel::exp_product(d).sample(25, 200 + t);
        const auto r = fit(data);
        ASSERT_TRUE(r.certified);
        EXPECT_NEAR(r.certificate.max_ineq_gap, brute_force_gap(r.mixing, data), 1e-12);
        const auto cache = build_cache(data, grid_points(data));
        for (int k = 0; k < 200; ++k) {
            const auto w = random_simplex(rng, cache.size());
            EXPECT_GE(r.loglik, log_likelihood(cache.mixture(w)) - 1e-6);
        }
    }
}

TEST(Fit, AtomsLieOnDataGrid)
{
    for (std::size_t d = 1; d <= 3; ++d) {
        const auto data = TruthModel::exp_product(d).sample(60, 300 + d);
        const auto r = fit(data);
        const Grid grid = make_grid(data);
        for (std::size_t a = 0; a < r.mixing.size(); ++a) EXPECT_TRUE(grid.contains(r.mixing.atom(a)));
        EXPECT_LE(r.mixing.size(), data.size());
    }
}

TEST(Fit, PoliciesAgreeOnFittedValues)
{
    const auto data = TruthModel::exp_product(2).sample(80, 41);
    FitOptions a, b;
    a.policy = CandidatePolicy::full_grid;
    b.policy = CandidatePolicy::vertex_direction;
    const auto ra = fit(data, a), rb = fit(data, b);
    ASSERT_TRUE(ra.certified && rb.certified);
    for (std::size_t i = 0; i < data.size(); ++i) EXPECT_NEAR(ra.fitted[i], rb.fitted[i], 1e-7 * ra.fitted[i]);
}

TEST(Fit, ScaleEquivariance)
{
    const auto data = TruthModel::exp_product(2).sample(60, 51);
    const Coords c{2.0, 0.25};
    std::vector<double> scaled = data.values();
    for (std::size_t k = 0; k < scaled.size(); ++k) scaled[k] *= c[k % 2];
    const auto r0 = fit(data), r1 = fit(Dataset(2, scaled));
    ASSERT_TRUE(r0.certified && r1.certified);
    for (std::size_t i = 0; i < data.size(); ++i) EXPECT_NEAR(r1.fitted[i] * 0.5, r0.fitted[i], 1e-9 * r0.fitted[i]);
    ASSERT_EQ(r0.mixing.size(), r1.mixing.size());
    for (std::size_t a = 0; a < r0.mixing.size(); ++a) {
        EXPECT_NEAR(r0.mixing.weight(a), r1.mixing.weight(a), 1e-9);
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(r0.mixing.atom(a)[j] * c[j], r1.mixing.atom(a)[j]);
    }
}

TEST(Fit, PermutationEquivariance)
{
    const auto data = TruthModel::exp_product(3).sample(40, 61);
    std::vector<double> swapped;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto r = data.row(i);
        swapped.insert(swapped.end(), {r[2], r[0], r[1]});
    }
    const auto r0 = fit(data), r1 = fit(Dataset(3, swapped));
    ASSERT_TRUE(r0.certified && r1.certified);
    for (std::size_t i = 0; i < data.size(); ++i) EXPECT_NEAR(r0.fitted[i], r1.fitted[i], 1e-9 * r0.fitted[i]);
    // Both measures define the same density after permuting coordinates back.
    const SmuDensity f0(r0.mixing), f1(r1.mixing);
    Rng rng(62);
    for (int k = 0; k < 200; ++k) {
        const Coords x{3 * rng.uniform(), 3 * rng.uniform(), 3 * rng.uniform()};
        const Coords y{x[2], x[0], x[1]};
        EXPECT_NEAR(f0.density(x), f1.density(y), 1e-9 * (1.0 + f0.density(x)));
    }
}

TEST(Fit, IterationCapLeavesUncertifiedBestIterate)
{
    const auto data = TruthModel::exp_product(2).sample(100, 71);
    FitOptions opt;
    opt.max_iter = 1;
    const auto r = fit(data, opt);
    EXPECT_FALSE(r.certified);
    EXPECT_EQ(r.fitted.size(), data.size());
    EXPECT_TRUE(std::isfinite(r.loglik));
}

TEST(Fit, RejectsBadInput)
{
    EXPECT_THROW(fit(Dataset(2)), Error);
    FitOptions opt;
    opt.tol = 0.0;
    EXPECT_THROW(fit(example_data(), opt), Error);
}
