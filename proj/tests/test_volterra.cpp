#include <gtest/gtest.h>

#include "support.hpp"
#include "vstring/volterra.hpp"

using namespace vstring;
using namespace vstring::testing;

namespace {

double damped(double t, double lambda, double gamma) {
    const double w = std::sqrt(lambda * lambda - gamma * gamma / 4);
    return std::exp(-gamma * t / 2) * (std::cos(w * t) + gamma / (2 * w) * std::sin(w * t));
}

}  // namespace

TEST(SolveZn, ZeroLambdaGivesOne) {
    auto cfg = generic_config(4.0, 401);
    auto s = solve_zn(0.0, cfg, 4.0, Grid1D(0.0, 4.0, 401));
    for (double v : s.z.values()) EXPECT_EQ(v, 1.0);
}

TEST(SolveZn, ElasticConstantTractionIsCosine) {
    for (double p : {1.0, 4.0}) {
        auto cfg = make_config(std::to_string(p), "1", "0", kPi);
        for (double lambda : {1.0, 8.0, 32.0}) {
            auto s = solve_zn(lambda, cfg, kPi, Grid1D(0.0, kPi, 2001));
            double err = 0.0;
            for (std::size_t i = 0; i < s.z.size(); ++i)
                err = std::max(err, std::abs(s.z[i] - std::cos(lambda * std::sqrt(p) * s.z.grid()[i])));
            EXPECT_LE(err, 1e-5) << "lambda " << lambda << " p " << p;
            EXPECT_EQ(s.z[0], 1.0);
        }
    }
}

TEST(SolveZn, ExponentialKernelIsDampedOscillator) {
    const double gamma = 1.0;
    auto cfg = make_config("1", "1", "-exp(-t)", 5.0);
    for (double lambda : {1.0, 4.0, 16.0}) {
        auto s = solve_zn(lambda, cfg, 5.0, Grid1D(0.0, 5.0, 2001));
        double err = 0.0;
        for (std::size_t i = 0; i < s.z.size(); ++i)
            err = std::max(err, std::abs(s.z[i] - damped(s.z.grid()[i], lambda, gamma)));
        EXPECT_LE(err, 1e-4) << lambda;
    }
}

TEST(SolveZn, ResidualOfDefiningEquationIsSmall) {
    auto cfg = generic_config(6.0);
    auto s = solve_zn(5.0, cfg, 6.0, Grid1D(0.0, 6.0, 2001));
    EXPECT_LE(zn_residual(s, cfg.traction), 1e-6);
}

TEST(SolveZn, RejectsHorizonBeyondConfig) {
    auto cfg = generic_config(4.0, 401);
    EXPECT_THROW(solve_zn(1.0, cfg, 5.0, Grid1D(0.0, 5.0, 401)), InputError);
    EXPECT_THROW(solve_zn(-1.0, cfg, 4.0, Grid1D(0.0, 4.0, 401)), InputError);
}

TEST(SolveZn, InstabilityDetectorTripsOnNonFiniteOrBoundViolation) {
    std::vector<double> ok{1.0, 0.5, -0.2}, bad{1.0, 3.0}, nan{1.0, std::nan("")};
    EXPECT_NO_THROW(detail::check_stability(ok, 2.0, "t"));
    EXPECT_THROW(detail::check_stability(bad, 2.0, "t"), NumericError);
    EXPECT_THROW(detail::check_stability(nan, std::numeric_limits<double>::infinity(), "t"), NumericError);
}

TEST(SecondKind, ConstantKernelRoundTrip) {
    // eta = 1, K = mu: r = 1 + mu t
    const double mu = 0.7;
    Grid1D g(0.0, 3.0, 301);
    std::vector<double> r, K(g.size(), mu);
    for (double t : g.samples()) r.push_back(1.0 + mu * t);
    auto eta = volterra_second_kind(r, K, g.step());
    for (double e : eta) EXPECT_NEAR(e, 1.0, 1e-13);
}

TEST(TransformChain, TrivialData) {
    auto cfg = constant_config(4.0, 401);
    auto c = build_transform_chain(cfg, 4.0);
    EXPECT_DOUBLE_EQ(c.S, 4.0);
    EXPECT_EQ(c.y0, 1.0);
    EXPECT_EQ(c.y1, 0.0);
    for (std::size_t i = 0; i < c.H.size(); ++i) {
        EXPECT_EQ(c.H[i], 0.0);
        EXPECT_EQ(c.a[i], 1.0);
        EXPECT_NEAR(c.L[i], c.H.grid()[i], 1e-14);
    }
    for (double v : c.V.values()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(c.A_kernel.max_abs(), 0.0);
}

TEST(TransformChain, ConstantTractionFour) {
    auto cfg = make_config("4", "1", "0", 3.0, 301);
    auto c = build_transform_chain(cfg, 3.0);
    EXPECT_NEAR(c.S, 6.0, 1e-13);
    EXPECT_NEAR(c.y0, 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_EQ(c.y1, 0.0);
    for (std::size_t i = 0; i < c.H.size(); ++i) {
        EXPECT_NEAR(c.H[i], -std::log(4.0), 1e-15);
        EXPECT_NEAR(c.L[i], 2.0 * c.H.grid()[i], 1e-13);
    }
}

TEST(TransformChain, GenericInvariants) {
    auto cfg = generic_config(6.0, 801);
    const double T = 5.0;
    auto c = build_transform_chain(cfg, T);
    // L' = sqrt(Q)
    const auto dL = differentiate(c.L.grid(), c.L.values());
    for (std::size_t i = 1; i + 1 < dL.size(); ++i)
        EXPECT_NEAR(dL[i], std::sqrt(cfg.traction(T - c.L.grid()[i])), 1e-4);
    // L(Minv(x)) = x
    for (std::size_t i = 0; i < c.Minv.size(); ++i) EXPECT_NEAR(c.L_at(c.Minv[i]), c.V.grid()[i], 1e-12);
    for (std::size_t i = 1; i < c.L.size(); ++i) EXPECT_GT(c.L[i], c.L[i - 1]);
    EXPECT_GT(c.y0, 0.0);
    // y1 from the closed formula against the definition -b'(0) y0 / (b(0) sqrt(Q(0)))
    const double PT = cfg.traction(T), dPT = cfg.traction.derivative(T);
    const double beta = 0.5 * c.M0 + 0.25 * (-dPT) / PT;
    EXPECT_NEAR(c.y1, -beta * c.y0 / std::sqrt(PT), 1e-14);
    for (std::size_t i = 0; i < c.A_kernel.size(); ++i) EXPECT_EQ(c.A_kernel(i, i), 0.0);
    // a pure exponential memory makes M - M0 N vanish identically, so A is
    // quadrature noise here
    EXPECT_LE(c.A_kernel.max_abs(), 1e-9);
}

TEST(TransformChain, DiagonalOfAVanishesForNonExponentialKernel) {
    auto cfg = make_config(kGenericP, kGenericC, "-0.5*exp(-0.5*t) + 0.3*t*exp(-t)", 6.0, 801);
    auto c = build_transform_chain(cfg, 5.0);
    EXPECT_GT(c.A_kernel.max_abs(), 1e-2);
    EXPECT_LE(diagonal_defect(c), 1e-6);
    for (std::size_t i = 0; i < c.A_kernel.size(); ++i) EXPECT_EQ(c.A_kernel(i, i), 0.0);
}

TEST(TransformChain, VMatchesFiniteDifferenceDefinition) {
    // V~ = e^{-H/2} Q^{-3/4} [a'' - H'' a - H' a'] with derivatives by differences
    auto cfg = generic_config(6.0, 801);
    const double T = 5.0;
    auto c = build_transform_chain(cfg, T);
    const double d = 1e-4;
    auto Hf = [&](double t) { return -c.M0 * t - std::log(c.Q(t)); };
    auto af = [&](double t) { return std::exp(Hf(t) / 2) * std::pow(c.Q(t), -0.25); };
    for (double t : {0.5, 1.7, 3.3, 4.6}) {
        const double a1 = (af(t + d) - af(t - d)) / (2 * d), a2 = (af(t + d) - 2 * af(t) + af(t - d)) / (d * d);
        const double H1 = (Hf(t + d) - Hf(t - d)) / (2 * d), H2 = (Hf(t + d) - 2 * Hf(t) + Hf(t - d)) / (d * d);
        const double V = std::exp(-Hf(t) / 2) * std::pow(c.Q(t), -0.75) * (a2 - H2 * af(t) - H1 * a1);
        EXPECT_NEAR(c.V_tilde(t), V, 1e-5) << t;
    }
}

TEST(SolveYn, TrivialDataGivesCosine) {
    auto cfg = constant_config(4.0, 801);
    auto c = build_transform_chain(cfg, 4.0);
    Grid1D xg(0.0, c.S, 801);
    for (double lambda : {1.0, 7.0, 20.0}) {
        auto m = solve_Yn(lambda, c, xg);
        for (std::size_t i = 0; i < xg.size(); ++i) EXPECT_NEAR(m.Y[i], std::cos(lambda * xg[i]), 1e-6);
        EXPECT_EQ(m.Y[0], 1.0);
    }
}

TEST(SolveYn, InitialDataAndBatchDeterminism) {
    auto cfg = generic_config(6.0, 801);
    auto c = build_transform_chain(cfg, 5.0);
    Grid1D xg(0.0, c.S, 801);
    std::vector<double> l{2.0, 5.5};
    auto both = solve_Yn_batch(l, c, xg);
    auto single = solve_Yn(5.5, c, xg);
    EXPECT_EQ(both[1].Y.values(), single.Y.values());
    EXPECT_EQ(both[0].Y[0], c.y0);
    EXPECT_EQ(both[0].dY[0], c.y1);
    const double h = xg.step();
    const auto& Y = both[0].Y;
    const double d1 = (-25 * Y[0] + 48 * Y[1] - 36 * Y[2] + 16 * Y[3] - 3 * Y[4]) / (12 * h);
    EXPECT_NEAR(d1, c.y1, 1e-6);
}

TEST(SolveYn, TransformationChainReproducesZn) {
    auto cfg = generic_config(8.0, 2001);
    const double T = 6.0;
    auto c = build_transform_chain(cfg, T, 2001, false);
    Grid1D xg(0.0, c.S, 2001);
    for (double lambda : {1.3, 4.0, 9.7}) {
        auto z = solve_zn(lambda, cfg, T, Grid1D(0.0, T, 2001));
        auto Y = solve_Yn(lambda, c, xg);
        EXPECT_LE(chain_identity_defect(z, Y, c), 1e-4) << lambda;
    }
}

TEST(CAndB, TrivialAndExponential) {
    {
        auto cfg = constant_config(2.0, 101);
        auto c = build_transform_chain(cfg, 2.0, 0, false);
        auto k = build_C_and_B(c, cfg.kernel);
        EXPECT_EQ(k.C.max_abs(), 1.0);
        for (std::size_t i = 0; i < k.B.size(); ++i)
            for (std::size_t j = 0; j <= i; ++j) {
                EXPECT_EQ(k.C(i, j), 1.0);
                EXPECT_EQ(k.B(i, j), 1.0);
            }
    }
    const double gamma = 0.8;
    auto cfg = make_config("1", "1", "-0.8*exp(-0.8*t)", 3.0, 301);
    auto c = build_transform_chain(cfg, 3.0, 0, false);
    auto k = build_C_and_B(c, cfg.kernel);
    const auto& g = k.C.grid();
    const std::size_t pts[10][2] = {{0, 0}, {10, 3}, {50, 50}, {100, 7}, {150, 149}, {200, 0}, {250, 125}, {300, 1}, {300, 300}, {222, 111}};
    for (auto [i, j] : pts) {
        const double x = g[i], s = g[j];
        EXPECT_NEAR(k.C(i, j), std::exp(-gamma * x + gamma * s / 2), 1e-9) << i << "," << j;
    }
    for (std::size_t i = 0; i < k.B.size(); ++i) EXPECT_EQ(k.B(i, i), 1.0);
}

TEST(ComputeZn, ConstantCaseIsSine) {
    auto cfg = constant_config(kPi, 1001);
    auto c = build_transform_chain(cfg, kPi, 0, false);
    auto k = build_C_and_B(c, cfg.kernel);
    const Grid1D& xg = k.B.grid();
    for (int n : {1, 3, 6}) {
        auto Y = solve_Yn(n, c, xg);
        auto Z = compute_Zn(std::sqrt(2 / kPi) * n, Y, k.B);
        EXPECT_EQ(Z[0], 0.0);
        for (std::size_t i = 0; i < xg.size(); ++i)
            EXPECT_NEAR(Z[i], std::sqrt(2 / kPi) * std::sin(n * xg[i]), 1e-4) << n;
    }
}

TEST(ComputeZn, MomentFunctionIdentity) {
    // e_n(tau(x)) = C(x,x) Z_n(x), against phi'(0) u_n from the z solver
    auto cfg = generic_config(6.0, 1001);
    const double T = 5.0;
    auto c = build_transform_chain(cfg, T, 1001, false);
    auto k = build_C_and_B(c, cfg.kernel);
    const double lambda = 3.0, slope = 1.7;
    auto Y = solve_Yn(lambda, c, k.B.grid());
    auto Z = compute_Zn(slope, Y, k.B);
    auto z = solve_zn(lambda, cfg, T, Grid1D(0.0, T, 1001));
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < Z.size(); ++i) {
        const double e = slope * z.u(c.Minv[i]);
        worst = std::max(worst, std::abs(k.C_diag[i] * Z[i] - e));
        scale = std::max(scale, std::abs(e));
    }
    EXPECT_LE(worst / scale, 1e-4);
}

TEST(Csv, DumpsHaveHeaders) {
    auto cfg = constant_config(2.0, 101);
    auto c = build_transform_chain(cfg, 2.0, 0, false);
    auto dir = std::filesystem::temp_directory_path();
    write_chain_csv(c, dir / "chain_t.csv", dir / "chain_x.csv");
    auto t = csv::read(dir / "chain_t.csv");
    EXPECT_EQ(t.columns, (std::vector<std::string>{"t", "H", "a", "L"}));
    EXPECT_EQ(t.rows.size(), 101u);
}
