#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "support.hpp"
#include "vstring/vstring.hpp"

using namespace vstring;
using namespace vstring::testing;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string output;
};

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / "vstring_cli" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// Runs the CLI with `args`, capturing stdout and stderr together.
Result run(const std::string& args) {
    const auto log = fs::temp_directory_path() / "vstring_cli_output.txt";
    const std::string cmd = std::string("\"") + VSTRING_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
    const auto p = dir / "config.json";
    std::ofstream(p) << j.dump();
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string sample_config(const char* name) { return std::string(VSTRING_SOURCE_DIR) + "/configs/" + name; }

}  // namespace

TEST(Cli, EigConstantDensityFirstRow) {
    const auto dir = scratch("eig");
    const auto cfg = write_config(dir, config_json("1", "1", "0", 4.0, 401, 801, 8));
    const auto r = run("--config " + cfg.string() + " --out " + (dir / "out").string() + " eig");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = csv::read(dir / "out" / "eig.csv");
    ASSERT_FALSE(t.rows.empty());
    EXPECT_EQ(t.rows[0][0], 1.0);
    EXPECT_NEAR(t.rows[0][1], 1.0, 1e-12);
    EXPECT_NEAR(t.rows[0][2], std::sqrt(2 / kPi), 1e-12);
    EXPECT_TRUE(fs::exists(dir / "out" / "asymptotics.csv"));
}

TEST(Cli, EigDensityFourHalvesTheFrequencies) {
    const auto dir = scratch("eig4");
    const auto cfg = write_config(dir, config_json("1", "4", "0", 4.0, 401, 801, 6));
    ASSERT_EQ(run("--config " + cfg.string() + " --out " + dir.string() + " eig").code, 0);
    const auto lam = csv::read(dir / "eig.csv").column("lambda_n");
    ASSERT_EQ(lam.size(), 6u);
    for (std::size_t n = 0; n < lam.size(); ++n) EXPECT_NEAR(lam[n], 2.0 * static_cast<double>(n + 1), 1e-10);
}

TEST(Cli, CoarseGridIsANumericFailure) {
    const auto dir = scratch("coarse");
    const auto cfg = write_config(dir, config_json("1", "1", "0", 4.0, 201, 41, 32));
    const auto r = run("--config " + cfg.string() + " --out " + dir.string() + " eig");
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.output.find("grid-too-coarse"), std::string::npos) << r.output;
}

TEST(Cli, CriticalTimeCases) {
    const auto dir = scratch("t0");
    for (const auto& [P, expected] : std::vector<std::pair<std::string, double>>{{"1", kPi}, {"4", kPi / 2}}) {
        const auto cfg = write_config(dir, config_json(P, "1", "0", 4.0, 401, 201, 2));
        ASSERT_EQ(run("--config " + cfg.string() + " --out " + dir.string() + " t0").code, 0) << P;
        const auto j = nlohmann::json::parse(slurp(dir / "t0.json"));
        EXPECT_NEAR(j.at("T0").get<double>(), expected, 1e-9) << P;
    }
    const auto cfg = write_config(dir, config_json("1", "1", "0", 3.0, 301, 201, 2));
    const auto r = run("--config " + cfg.string() + " --out " + dir.string() + " t0");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("horizon-too-short"), std::string::npos) << r.output;
}

TEST(Cli, MalformedInputExitsWithTwo) {
    const auto dir = scratch("bad");
    std::ofstream(dir / "broken.json") << "{\"traction\": ";
    EXPECT_EQ(run("--config " + (dir / "broken.json").string() + " eig").code, 2);
    EXPECT_EQ(run("eig").code, 2);
    EXPECT_EQ(run("--config " + sample_config("constant.json")).code, 2);
    EXPECT_EQ(run("--config " + sample_config("constant.json") + " --out " + dir.string() +
                  " control --target mode:abc")
                  .code,
              2);
    EXPECT_EQ(run("--config " + sample_config("constant.json") + " --out " + dir.string() +
                  " control --target indicator:2,1")
                  .code,
              2);
    EXPECT_EQ(run("--config " + sample_config("constant.json") + " --out " + dir.string() + " simulate").code, 2);
    auto j = config_json("1", "1", "0", 4.0, 401, 201, 2);
    j["unexpected"] = 1;
    EXPECT_EQ(run("--config " + write_config(dir, j).string() + " eig").code, 2);
}

TEST(Cli, ZeroTargetGivesZeroControl) {
    const auto dir = scratch("control0");
    const auto cfg = write_config(dir, config_json("1", "1", "0", 4.0, 801, 401, 8));
    ASSERT_EQ(run("--config " + cfg.string() + " --out " + dir.string() + " control --target expr:0").code, 0);
    for (double v : csv::read(dir / "control.csv").column("f")) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(fs::exists(dir / "residuals.csv"));
}

TEST(Cli, FirstModeTargetIsReflectedSine) {
    const auto dir = scratch("control1");
    const auto cfg = write_config(dir, config_json("1", "1", "0", 4.0, 2001, 801, 8));
    const auto r = run("--config " + cfg.string() + " --out " + dir.string() +
                       " control --target mode:1 --T 3.141592653589793 --check");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = csv::read(dir / "control.csv");
    const auto ts = t.column("t"), f = t.column("f");
    for (std::size_t i = 0; i < ts.size(); ++i) EXPECT_NEAR(f[i], std::sqrt(2 / kPi) * std::sin(ts[i]), 1e-3);
    const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    EXPECT_LE(m.at("metrics").at("round_trip_relative_error").get<double>(), 0.02);
}

TEST(Cli, SimulateFirstModeSource) {
    const auto dir = scratch("simulate");
    const auto cfg = write_config(dir, config_json("1", "1", "0", kPi, 2001, 801, 4));
    const auto r = run("--config " + cfg.string() + " --out " + dir.string() + " simulate --source mode:1 --cross-check");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = csv::read(dir / "eta.csv");
    const auto ts = t.column("t"), eta = t.column("eta");
    for (std::size_t i = 0; i < ts.size(); i += 50)
        EXPECT_NEAR(eta[i], std::sqrt(2 / kPi) * (1.0 - std::cos(ts[i])), 1e-5);
    EXPECT_TRUE(fs::exists(dir / "wfinal.csv"));
    for (double d : csv::read(dir / "crosscheck.csv").column("w_n_direct")) EXPECT_TRUE(std::isfinite(d));
}

TEST(Cli, SimulateZeroForcing) {
    const auto dir = scratch("simulate0");
    const auto cfg = write_config(dir, config_json("1", "1", "0", kPi, 401, 201, 4));
    ASSERT_EQ(run("--config " + cfg.string() + " --out " + dir.string() + " simulate --boundary expr:0").code, 0);
    for (double v : csv::read(dir / "eta.csv").column("eta")) EXPECT_EQ(v, 0.0);
}

TEST(Cli, IdentifyCases) {
    const auto dir = scratch("identify");
    const auto cfg = write_config(dir, config_json("1", "1", "0", 1.2 * kPi, 601, 201, 4));
    ASSERT_EQ(run("--config " + cfg.string() + " --out " + (dir / "zero").string() + " identify --truth expr:0").code, 0);
    for (double v : csv::read(dir / "zero" / "coefficients.csv").column("b_hat_k")) EXPECT_LE(std::abs(v), 1e-10);
    ASSERT_EQ(run("--config " + cfg.string() + " --out " + (dir / "one").string() + " identify --truth mode:1").code, 0);
    const auto c = csv::read(dir / "one" / "coefficients.csv").column("b_hat_k");
    EXPECT_NEAR(c[0], 1.0, 1e-2);
    EXPECT_TRUE(fs::exists(dir / "one" / "bhat.csv"));
    EXPECT_TRUE(fs::exists(dir / "one" / "sigma" / "sigma_k0004.csv"));
    EXPECT_EQ(run("--config " + cfg.string() + " --out " + dir.string() + " identify").code, 2);
}

TEST(Cli, DiagnosticsAroundCriticalTime) {
    const auto dir = scratch("diagnostics");
    const auto cfg = write_config(dir, config_json("1", "1", "0", 4.0, 1601, 801, 32));
    ASSERT_EQ(run("--config " + cfg.string() + " --out " + dir.string() +
                  " diagnostics --T-factors 0.8,1.0 --n-list 32 --no-deficiency")
                  .code,
              0);
    const auto t = csv::read(dir / "riesz.csv");
    const auto eig = t.column("eig_min");
    ASSERT_EQ(eig.size(), 2u);
    EXPECT_LT(eig[0], 1e-3);
    EXPECT_NEAR(eig[1], 1.0, 1e-3);
}

TEST(Cli, ManifestListsExistingOutputs) {
    const auto dir = scratch("manifest");
    ASSERT_EQ(run("--config " + sample_config("generic.json") + " --out " + dir.string() + " eig").code, 0);
    const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    for (const char* key : {"config_hash", "command", "tool_version", "outputs", "timings"})
        EXPECT_TRUE(m.contains(key)) << key;
    for (const auto& p : m.at("outputs")) EXPECT_TRUE(fs::exists(p.get<std::string>())) << p;
    EXPECT_EQ(m.at("config_hash").get<std::string>().size(), 16u);
}

TEST(Cli, OutputsAreByteIdenticalAcrossRuns) {
    const auto a = scratch("det_a"), b = scratch("det_b");
    const std::string common = "--config " + sample_config("generic.json") + " --seed 5 --out ";
    for (const auto& d : {a, b})
        ASSERT_EQ(run(common + d.string() + " control --target indicator:1,2 --T 3.5").code, 0);
    for (const char* f : {"control.csv", "residuals.csv"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}
