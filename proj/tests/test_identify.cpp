#include <gtest/gtest.h>

#include "support.hpp"
#include "vstring/identify.hpp"

using namespace vstring;
using namespace vstring::testing;

namespace {

ModalBasis basis_of(const MaterialConfig& cfg, int n) { return solve_eigensystem(cfg.density, n, cfg.space_grid); }

double first_sine(double x) { return std::sqrt(2 / kPi) * std::sin(x); }

}  // namespace

TEST(Sigma, NoMemoryAndZeroInput) {
    auto cfg = constant_config(kPi, 201, 2);
    const Grid1D g(0.0, 2.0, 201);
    const auto f = SampledFunction::tabulate(g, [](double t) { return std::cos(t); });
    EXPECT_EQ(build_sigma_from_f(f, cfg.kernel).values(), f.values());
    auto gen = generic_config(4.0, 401, 2);
    const SampledFunction zero(g, std::vector<double>(g.size(), 0.0));
    EXPECT_EQ(max_abs(build_sigma_from_f(zero, gen.kernel).values()), 0.0);
}

TEST(Sigma, ExponentialKernelHandIntegrals) {
    const double gamma = 0.8;
    auto cfg = make_config("1", "1", "-0.8*exp(-0.8*t)", 4.0, 2001);
    const Grid1D g(0.0, 4.0, 2001);
    const SampledFunction one(g, std::vector<double>(g.size(), 1.0));
    const auto sigma = build_sigma_from_f(one, cfg.kernel);
    const auto G = integrate_sigma(sigma);
    for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_NEAR(sigma[i], std::exp(-gamma * g[i]), 1e-6);
        EXPECT_NEAR(G[i], (1.0 - std::exp(-gamma * g[i])) / gamma, 1e-6);
    }
}

TEST(Identify, FirstModeSourceInConstantCase) {
    auto cfg = constant_config(1.2 * kPi, 1001, 8);
    auto b = basis_of(cfg, 8);
    SimulatorOracle oracle(cfg, first_sine);
    auto est = identify_source(oracle, cfg, b, kPi, 8);
    EXPECT_NEAR(est.coefficients[0], 1.0, 1e-2);
    for (int k = 2; k <= 8; ++k) EXPECT_LE(std::abs(est.coefficients[k - 1]), 1e-2) << k;
    EXPECT_TRUE(est.failures.empty());
    EXPECT_EQ(est.sigmas.size(), 8u);
    for (double r : est.per_mode_residuals) EXPECT_LE(r, 1e-10);
}

TEST(Identify, ZeroSourceGivesZeroEstimate) {
    auto cfg = generic_config(6.0, 601, 6);
    auto b = basis_of(cfg, 6);
    SimulatorOracle oracle(cfg, [](double) { return 0.0; });
    auto est = identify_source(oracle, cfg, b, 1.2 * compute_T0(cfg.traction), 6);
    for (double c : est.coefficients) EXPECT_LE(std::abs(c), 1e-8);
    EXPECT_LE(projected_error(est, b, std::vector<double>(b.space_grid.size(), 0.0)), 1e-8);
}

TEST(Identify, EstimateIsLinearInTheSource) {
    auto cfg = generic_config(6.0, 601, 6);
    auto b = basis_of(cfg, 6);
    const double T = 1.2 * compute_T0(cfg.traction);
    auto shape = [](double x) { return x * (kPi - x) * std::cos(x); };
    SimulatorOracle o1(cfg, shape);
    SimulatorOracle o3(cfg, [&](double x) { return -3.0 * shape(x); });
    auto e1 = identify_source(o1, cfg, b, T, 6);
    auto e3 = identify_source(o3, cfg, b, T, 6);
    for (int k = 0; k < 6; ++k) EXPECT_NEAR(e3.coefficients[k], -3.0 * e1.coefficients[k], 1e-8);
}

TEST(Identify, IndicatorSourceWithGenericData) {
    auto cfg = generic_config(6.0, 1001, 8);
    auto b = basis_of(cfg, 8);
    auto indicator = [](double x) { return x >= 1.0 && x <= 2.0 ? 1.0 : 0.0; };
    SimulatorOracle oracle(cfg, indicator);
    auto est = identify_source(oracle, cfg, b, 1.2 * compute_T0(cfg.traction), 8);
    std::vector<double> bv(b.space_grid.size());
    for (std::size_t j = 0; j < bv.size(); ++j) bv[j] = indicator(b.space_grid[j]);
    EXPECT_LE(projected_error(est, b, bv), 0.05);
}

TEST(Identify, AssemblyIsExactOnTheSpan) {
    auto cfg = constant_config(kPi, 401, 5);
    auto b = basis_of(cfg, 5);
    SourceEstimate est;
    est.n_modes = 5;
    est.coefficients = {0.2, -1.0, 0.0, 0.5, 0.125};
    est.b_hat = b.synthesize(est.coefficients);
    EXPECT_LE(projected_error(est, b, est.b_hat), 1e-12);
}

TEST(Identify, TraceDirectoryOracleReproducesSimulator) {
    auto cfg = constant_config(1.2 * kPi, 601, 4);
    auto b = basis_of(cfg, 4);
    auto shape = [](double x) { return std::sin(x) + 0.3 * std::sin(3 * x); };
    SimulatorOracle sim(cfg, shape);
    auto direct = identify_source(sim, cfg, b, kPi, 4);

    const auto dir = std::filesystem::temp_directory_path() / "vstring_traces";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    for (int k = 1; k <= 4; ++k) {
        const auto eta = sim.measure(k, direct.sigmas[static_cast<std::size_t>(k - 1)]);
        csv::Writer w(dir / TraceDirectoryOracle::file_name(k));
        w.header({"t", "eta"});
        for (std::size_t i = 0; i < eta.size(); ++i) w.row({eta.grid()[i], eta[i]});
    }
    TraceDirectoryOracle files(dir);
    auto read = identify_source(files, cfg, b, kPi, 4);
    for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(read.coefficients[k], direct.coefficients[k]);

    // a missing trace marks that coefficient and the sweep continues
    std::filesystem::remove(dir / TraceDirectoryOracle::file_name(3));
    auto partial = identify_source(files, cfg, b, kPi, 4);
    EXPECT_TRUE(std::isnan(partial.coefficients[2]));
    EXPECT_EQ(partial.failures.size(), 1u);
    EXPECT_DOUBLE_EQ(partial.coefficients[3], direct.coefficients[3]);
}

TEST(Identify, WarnsBelowCriticalTime) {
    auto cfg = constant_config(kPi, 401, 3);
    auto b = basis_of(cfg, 3);
    std::vector<std::string> seen;
    log::set_sink([&](const std::string& m) { seen.push_back(m); });
    SimulatorOracle oracle(cfg, first_sine);
    auto est = identify_source(oracle, cfg, b, 0.9 * kPi, 3);
    log::set_sink(nullptr);
    ASSERT_FALSE(seen.empty());
    EXPECT_NE(seen.front().find("below T0"), std::string::npos);
    EXPECT_EQ(est.coefficients.size(), 3u);
}

TEST(Identify, TraceListingOverridesFileNames) {
    auto cfg = constant_config(1.2 * kPi, 601, 2);
    auto b = basis_of(cfg, 2);
    SimulatorOracle sim(cfg, first_sine);
    auto direct = identify_source(sim, cfg, b, kPi, 2);

    const auto dir = std::filesystem::temp_directory_path() / "vstring_listing";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    nlohmann::json listing = nlohmann::json::array();
    for (int k = 1; k <= 2; ++k) {
        const auto eta = sim.measure(k, direct.sigmas[static_cast<std::size_t>(k - 1)]);
        const std::string name = "run" + std::to_string(k) + ".csv";
        csv::Writer w(dir / name);
        w.header({"t", "eta"});
        for (std::size_t i = 0; i < eta.size(); ++i) w.row({eta.grid()[i], eta[i]});
        listing.push_back({{"k", k}, {"file", name}, {"T", kPi}});
    }
    std::ofstream(dir / "traces.json") << listing.dump();
    TraceDirectoryOracle files(dir);
    auto read = identify_source(files, cfg, b, kPi, 2);
    for (int k = 0; k < 2; ++k) EXPECT_DOUBLE_EQ(read.coefficients[k], direct.coefficients[k]);

    listing[1]["T"] = 2.0;
    std::ofstream(dir / "traces.json") << listing.dump();
    TraceDirectoryOracle wrong_T(dir);
    EXPECT_EQ(identify_source(wrong_T, cfg, b, kPi, 2).failures.size(), 1u);

    std::ofstream(dir / "traces.json") << "{\"k\": 1}";
    EXPECT_THROW(TraceDirectoryOracle{dir}, InputError);
}
