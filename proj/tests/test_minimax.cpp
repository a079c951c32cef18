#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"

using namespace smu;

namespace {

PerturbationSpec unit_spec(std::size_t d, double b, Coords h, std::uint64_t n, double x0 = 2.0)
{
    PerturbationSpec s;
    s.x0 = Coords(d, x0);
    s.h = std::move(h);
    s.b = b;
    s.n = n;
    s.theta = 0.5;
    s.base = TruthModel::exp_product(d);
    return s;
}

} // namespace

TEST(HStep, SignsAndSupport)
{
    for (std::size_t d = 1; d <= 3; ++d) {
        const auto s = PerturbationSpec::exp_default(Coords(d, 1.0), Coords(d, 0.5), 0.5, 64);
        Coords u(d);
        for (std::size_t i = 0; i < d; ++i) u[i] = s.x0[i] + 0.5 * s.eps(i);
        EXPECT_EQ(h_step(u, s), s.parity());
        u[0] = s.x0[0] - 0.5 * s.eps(0);
        EXPECT_EQ(h_step(u, s), -s.parity());
        u[0] = s.x0[0] + 2 * s.eps(0);
        EXPECT_EQ(h_step(u, s), 0.0);
    }
}

TEST(GPerturb, ClosedFormExamples)
{
    const auto s = unit_spec(1, -1.0, {1.0}, 1);
    EXPECT_DOUBLE_EQ(g_perturb(Coords{2.5}, s), 0.5);
    EXPECT_NEAR(g_perturb(Coords{2.5}, s, GMode::definitional), 0.5, 1e-12);

    for (std::size_t d = 1; d <= 3; ++d) {
        const auto e = PerturbationSpec::exp_default(Coords(d, 1.0), Coords(d, 0.5), 0.5, 4096);
        double expected = e.parity() * e.b * std::pow(4096.0, -1.0 / 3.0);
        for (double hi : e.h) expected *= hi;
        EXPECT_NEAR(g_perturb(e.x0, e), expected, 1e-15);
        // Any vertex of I_n.
        Coords v(d);
        for (std::size_t i = 0; i < d; ++i) v[i] = e.x0[i] + (i % 2 ? -e.eps(i) : e.eps(i));
        EXPECT_NEAR(g_perturb(v, e), 0.0, 1e-16);
    }
}

TEST(GPerturb, ModesAgree)
{
    Rng rng(51);
    for (std::size_t d = 1; d <= 3; ++d) {
        const auto s = PerturbationSpec::exp_default(Coords(d, 1.0), Coords(d, 0.6), 0.5, 512);
        const int count = d == 3 ? 300 : 2000;
        for (int k = 0; k < count; ++k) {
            Coords y(d);
            for (std::size_t i = 0; i < d; ++i) y[i] = s.x0[i] + (2.4 * rng.uniform() - 1.2) * s.eps(i);
            EXPECT_NEAR(g_perturb(y, s), g_perturb(y, s, GMode::definitional), 1e-9);
        }
    }
}

TEST(GPerturb, NonnegativeAndNonincreasingInN)
{
    Rng rng(52);
    auto s = PerturbationSpec::exp_default(Coords{1.0, 1.0}, Coords{0.5, 0.5}, 0.5, 64);
    for (int k = 0; k < 500; ++k) {
        const Coords y{0.6 + 0.8 * rng.uniform(), 0.6 + 0.8 * rng.uniform()};
        double prev = std::numeric_limits<double>::infinity();
        for (std::uint64_t n : {64u, 128u, 512u, 4096u, 1u << 20}) {
            s.n = n;
            const double g = g_perturb(y, s);
            EXPECT_GE(g, 0.0);
            EXPECT_LE(g, prev);
            prev = g;
        }
    }
}

TEST(PerturbedDensity, Properties)
{
    auto s = PerturbationSpec::exp_default(Coords{1.0, 1.0}, Coords{0.5, 0.5}, 0.5, 4096);
    const Coords far{5.0, 5.0};
    EXPECT_DOUBLE_EQ(perturbed_density(far, s), exp_truth_density(far) / normalizer(s));
    // Integrates to one: base mass plus theta times the closed-form int g.
    const auto q = integrate([&](std::span<const double> x) { return perturbed_density(x, s); },
                             {{0.0, 1.0 - s.eps(0), 1.0, 1.0 + s.eps(0), 30.0},
                              {0.0, 1.0 - s.eps(1), 1.0, 1.0 + s.eps(1), 30.0}},
                             QuadOptions{1e-10, 0.0, std::uint64_t{1} << 22});
    EXPECT_NEAR(q.value, 1.0, 1e-8);

    s.theta = 1e-300;
    s.force = true;
    EXPECT_NEAR(perturbed_density(Coords{1.0, 1.0}, s), exp_truth_density(Coords{1.0, 1.0}), 1e-15);

    auto bad = PerturbationSpec::exp_default(Coords{0.1}, Coords{1.0}, 0.5, 2);
    try {
        perturbed_density(Coords{0.05}, bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("n below n_0"), std::string::npos);
    }
}

TEST(Normalizer, DecreasesToOne)
{
    auto s = PerturbationSpec::exp_default(Coords{1.0}, Coords{0.5}, 0.5, 8);
    double prev = std::numeric_limits<double>::infinity();
    for (std::uint64_t n = 8; n < (std::uint64_t{1} << 40); n *= 8) {
        s.n = n;
        const double dn = normalizer(s);
        EXPECT_GT(dn, 1.0);
        EXPECT_LT(dn, prev);
        prev = dn;
    }
    EXPECT_LT(prev - 1.0, 1e-8);
}

TEST(Mml1, ClosedFormExamples)
{
    const auto a = check_mml1(unit_spec(1, -1.0, {1.0}, 1));
    EXPECT_NEAR(a.quadrature, 1.0, 1e-12);
    EXPECT_TRUE(a.passed);
    const auto b = check_mml1(unit_spec(2, 1.0, {1.0, 2.0}, 64, 3.0));
    EXPECT_DOUBLE_EQ(b.formula, 0.25);
    EXPECT_NEAR(b.quadrature, 0.25, 1e-12);
    // h -> 2h scales by 4^d.
    const auto c = check_mml1(unit_spec(2, 1.0, {2.0, 4.0}, 64, 5.0));
    EXPECT_NEAR(c.quadrature / b.quadrature, 16.0, 1e-10);
}

TEST(Mml1, ExpDefaultsAllDimensions)
{
    for (std::size_t d = 1; d <= 3; ++d)
        for (double h : {0.3, 0.5, 0.8}) {
            const auto r = check_mml1(PerturbationSpec::exp_default(Coords(d, 1.0), Coords(d, h), 0.5, 1000));
            EXPECT_TRUE(r.passed) << d << ' ' << h << ' ' << r.rel_error;
        }
}

TEST(Mml2, MatchesDerivedConstant)
{
    const auto r = check_mml2(unit_spec(1, -1.0, {1.0}, 1));
    EXPECT_NEAR(r.quadrature, 2.0 / 3.0, 1e-12);
    EXPECT_DOUBLE_EQ(r.printed, 8.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.derived, 2.0 / 3.0);
    EXPECT_EQ(r.verdict, Mml2Verdict::matches_derived);
    for (std::size_t d = 1; d <= 3; ++d) {
        const auto e = check_mml2(PerturbationSpec::exp_default(Coords(d, 1.0), Coords(d, 0.5), 0.5, 4096));
        EXPECT_LE(e.rel_error_derived, 1e-6);
        EXPECT_NEAR(e.printed / e.derived, std::pow(4.0, d), 1e-9);
    }
}

TEST(HellingerLimit, StabilizesAtDerivedConstant)
{
    for (std::size_t d = 1; d <= 2; ++d) {
        const auto s = PerturbationSpec::exp_default(Coords(d, 1.0), Coords(d, 0.5), 0.5, 1);
        std::vector<std::uint64_t> ns;
        for (int k = 12; k <= 36; k += 2) ns.push_back(std::uint64_t{1} << k);
        const auto r = hellinger_limit_sequence(s, ns);
        EXPECT_TRUE(r.stabilized());
        EXPECT_EQ(r.verdict, LimitVerdict::matches_derived);
        // Successive differences shrink.
        for (std::size_t k = 2; k < r.scaled.size(); ++k)
            EXPECT_LE(std::abs(r.scaled[k] - r.scaled[k - 1]), std::abs(r.scaled[k - 1] - r.scaled[k - 2]) * 1.0001);
        auto half = s;
        half.theta = 0.25;
        const auto rh = hellinger_limit_sequence(half, ns);
        EXPECT_NEAR(rh.derived_limit / r.derived_limit, 0.25, 1e-14);
        EXPECT_NEAR(rh.printed_limit / r.printed_limit, 0.25, 1e-14);
    }
}

TEST(HellingerLimit, SmallestCaseMatchesDirectQuadrature)
{
    // Independent oracle: direct 1-d quadrature of (sqrt f_n - sqrt f)^2 / 2.
    const auto s = PerturbationSpec::exp_default(Coords{1.0}, Coords{0.5}, 0.5, 4096);
    const double e = s.eps(0);
    const auto q = integrate(
        [&](std::span<const double> x) {
            const double r = std::sqrt(perturbed_density(x, s)) - std::sqrt(std::exp(-x[0]));
            return 0.5 * r * r;
        },
        {{0.0, 1.0 - e, 1.0, 1.0 + e, 40.0}}, QuadOptions{1e-12, 0.0, std::uint64_t{1} << 22});
    EXPECT_NEAR(perturbation_hellinger_sq(s), q.value, 1e-9 * q.value);
}

TEST(Membership, AcceptsSmallThetaRejectsForced)
{
    const auto s = PerturbationSpec::exp_default(Coords{1.0, 1.0}, Coords{0.5, 0.5}, 0.5, 4096);
    EXPECT_TRUE(membership_scan(s).accepted);

    auto zero = s;
    zero.theta = 0.0;
    zero.force = true;
    for (std::uint64_t n : {8u, 64u, 4096u}) {
        zero.n = n;
        EXPECT_TRUE(membership_scan(zero).accepted);
    }

    auto big = s;
    big.theta = 50.0;
    big.force = true;
    const auto r = membership_scan(big);
    EXPECT_FALSE(r.accepted);
    ASSERT_TRUE(r.witness.has_value());
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_GE(r.witness->lower()[i], s.x0[i] - s.eps(i) - 1e-12);
        EXPECT_LE(r.witness->upper()[i], s.x0[i] + s.eps(i) + 1e-12);
    }
    // Oracle: recompute the witness's mixed difference directly.
    const double v = g_volume([&](std::span<const double> x) { return perturbed_density(x, big); }, *r.witness);
    EXPECT_NEAR(v, r.worst, 1e-12);
}

TEST(Membership, ThresholdAndLaterSizes)
{
    const auto s = PerturbationSpec::exp_default(Coords{1.0, 1.0}, Coords{0.9, 0.9}, 0.9, 1);
    const auto n1 = membership_threshold(s);
    ASSERT_TRUE(n1.has_value());
    auto t = s;
    for (std::uint64_t n : {*n1, *n1 * 2, *n1 * 16, *n1 * 1024}) {
        t.n = n;
        EXPECT_TRUE(membership_scan(t).accepted) << n;
    }
}

TEST(Validation, SignAndThetaChecks)
{
    auto s = PerturbationSpec::exp_default(Coords{1.0}, Coords{0.5}, 0.5, 64);
    s.b = 0.3;
    EXPECT_THROW(s.validate(), Error);
    s.b = -0.3;
    s.theta = 1.5;
    EXPECT_THROW(s.validate(), Error);
    s.force = true;
    EXPECT_NO_THROW(s.validate());
    EXPECT_THROW(lower_bound_constant(1.0, 1.0, 1), Error);
    EXPECT_THROW(lower_bound_constant(1.0, -1.0, 2), Error);
}

TEST(LowerBound, DirectEvaluations)
{
    EXPECT_NEAR(lower_bound_constant(1.0, -1.0, 1), std::exp(-1.0 / 3.0) / 2.0, 1e-15);
    EXPECT_NEAR(lower_bound_constant(1.0, -1.0, 1), 0.3582, 1e-4);
    const double e2 = std::exp(-2.0);
    EXPECT_NEAR(lower_bound_constant(e2, e2, 2), std::exp(-1.0 / 3.0) / 4.0 * std::cbrt(3.0) * std::exp(-4.0 / 3.0),
                1e-15);
    // Cube-root homogeneity in (-1)^d b f.
    EXPECT_NEAR(lower_bound_constant(8.0, -1.0, 1) / lower_bound_constant(1.0, -1.0, 1), 2.0, 1e-14);
    EXPECT_NEAR(lower_bound_constant_theta(1.0, -1.0, 1, 0.999) / lower_bound_constant_theta(1.0, -1.0, 1, 0.5),
                std::cbrt(0.999 / 0.5), 1e-14);
}

TEST(LowerBound, ArgmaxMaximizesObjective)
{
    for (std::size_t d = 1; d <= 3; ++d) {
        const double f = 0.7, b = d % 2 ? -0.4 : 0.4, theta = 0.6;
        const double c = bound_argmax(theta, f, b, d);
        const double g = bound_objective(c, theta, f, b, d);
        for (double s : {0.9, 0.99, 1.01, 1.1}) EXPECT_LT(bound_objective(c * s, theta, f, b, d), g);
        // At the maximizer the exponent is -1/3.
        const double dd = static_cast<double>(d);
        const double expo = std::pow(2.0, 3 * dd - 2) * theta * theta * b * b * c * c * c / (std::pow(3.0, dd) * f);
        EXPECT_NEAR(expo, 1.0 / 3.0, 1e-14);
    }
}

TEST(NZero, BoxInsideOrthant)
{
    auto s = PerturbationSpec::exp_default(Coords{0.5, 0.25}, Coords{1.0, 1.0}, 0.5, 1);
    const auto n0 = n_zero(s);
    s.n = n0;
    EXPECT_TRUE(s.inside_orthant());
    if (n0 > 1) {
        s.n = n0 - 1;
        EXPECT_FALSE(s.inside_orthant());
    }
}
