// Command-line front end: eig | t0 | control | simulate | identify | diagnostics.
// Exit codes: 0 success, 2 input or validation error, 3 numeric failure.

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

#include "vstring/vstring.hpp"

using namespace vstring;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::string out = ".";
    unsigned threads = 1;
    double tol = 1e-6;
    long long seed = -1;
};

/// Collects outputs and stage timings, written as manifest.json at the end.
class Run {
public:
    Run(std::string command, const Globals& g) : command_(std::move(command)), out_(g.out) {
        fs::create_directories(out_);
    }

    fs::path file(const std::string& name) {
        const fs::path p = out_ / name;
        outputs_.push_back(p);
        return p;
    }

    template <class F>
    auto stage(const std::string& name, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(f())>) {
            f();
            timings_[name] = seconds_since(t0);
        } else {
            auto r = f();
            timings_[name] = seconds_since(t0);
            return r;
        }
    }

    nlohmann::json& metrics() { return metrics_; }

    void finish(const MaterialConfig& cfg, const Globals& g) {
        char hash[32];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
        nlohmann::json m;
        m["config_hash"] = hash;
        m["command"] = command_;
        m["tool_version"] = VSTRING_VERSION;
        m["seed"] = g.seed >= 0 ? static_cast<std::uint64_t>(g.seed) : cfg.seed;
        m["threads"] = g.threads;
        m["tol"] = g.tol;
        const fs::path manifest = out_ / "manifest.json";
        std::vector<std::string> names;
        for (const auto& p : outputs_) {
            if (!fs::exists(p)) throw NumericError("declared output missing: " + p.string());
            names.push_back(p.string());
        }
        names.push_back(manifest.string());
        m["outputs"] = names;
        m["timings"] = timings_;
        if (!metrics_.is_null()) m["metrics"] = metrics_;
        std::ofstream(manifest) << m.dump(2) << '\n';
    }

private:
    static double seconds_since(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    std::string command_;
    fs::path out_;
    std::vector<fs::path> outputs_;
    nlohmann::json timings_ = nlohmann::json::object();
    nlohmann::json metrics_;
};

// ---------------------------------------------------------------------------
// specs

/// Spatial profile from "mode:k", "indicator:a,b", "expr:<formula in xi>" or
/// "file:<csv with columns xi and a value column>", sampled on the space grid.
std::vector<double> spatial_spec(const std::string& spec, const ModalBasis& basis) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw InputError("spec '" + spec + "' must look like kind:value");
    const std::string kind = spec.substr(0, colon), arg = spec.substr(colon + 1);
    const Grid1D& g = basis.space_grid;
    std::vector<double> v(g.size());
    if (kind == "mode") {
        int k = 0;
        try {
            std::size_t used = 0;
            k = std::stoi(arg, &used);
            if (used != arg.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw InputError("mode spec needs an integer, got '" + arg + "'");
        }
        if (k < 1 || k > basis.size()) throw InputError("mode:" + arg + " outside 1.." + std::to_string(basis.size()));
        for (std::size_t j = 0; j < g.size(); ++j) v[j] = basis.phis(k - 1, static_cast<Eigen::Index>(j));
        return v;
    }
    if (kind == "indicator") {
        double a = 0, b = 0;
        char extra = 0;
        if (std::sscanf(arg.c_str(), "%lf,%lf%c", &a, &b, &extra) != 2 || !(a < b))
            throw InputError("indicator spec needs 'a,b' with a < b, got '" + arg + "'");
        for (std::size_t j = 0; j < g.size(); ++j) v[j] = g[j] >= a && g[j] <= b ? 1.0 : 0.0;
        return v;
    }
    if (kind == "expr") {
        const auto e = Expression::parse(arg, "xi");
        for (std::size_t j = 0; j < g.size(); ++j) v[j] = e(g[j]);
        return v;
    }
    if (kind == "file") {
        const auto t = csv::read(arg);
        if (t.columns.size() < 2) throw InputError(arg + ": need columns xi and a value");
        const auto xs = t.column(t.columns[0]);
        const auto ys = t.column(t.columns[1]);
        const Grid1D fg(xs.front(), xs.back(), xs.size());
        for (std::size_t j = 0; j < g.size(); ++j) v[j] = interpolate_cubic(fg, ys, g[j]);
        return v;
    }
    throw InputError("unknown spec kind '" + kind + "' (mode, indicator, expr, file)");
}

/// Time profile from "expr:<formula in t>" or "file:<csv t,value>" on `grid`.
SampledFunction time_spec(const std::string& spec, const Grid1D& grid) {
    const auto colon = spec.find(':');
    const std::string kind = colon == std::string::npos ? "expr" : spec.substr(0, colon);
    const std::string arg = colon == std::string::npos ? spec : spec.substr(colon + 1);
    if (kind == "expr") {
        const auto e = Expression::parse(arg, "t");
        return SampledFunction::tabulate(grid, [&](double t) { return e(t); });
    }
    if (kind == "file") {
        const auto t = csv::read(arg);
        if (t.columns.size() < 2) throw InputError(arg + ": need columns t and a value");
        const auto ts = t.column(t.columns[0]);
        const auto ys = t.column(t.columns[1]);
        const Grid1D fg(ts.front(), ts.back(), ts.size());
        if (fg.end() < grid.end() - 1e-9 * grid.end()) throw InputError(arg + " does not cover [0, T]");
        return SampledFunction::tabulate(grid, [&](double x) { return interpolate_cubic(fg, ys, x); });
    }
    throw InputError("unknown time spec kind '" + kind + "' (expr, file)");
}

std::vector<double> parse_list(const std::string& s, const char* what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw InputError(std::string("bad number '") + item + "' in " + what);
        }
    }
    if (out.empty()) throw InputError(std::string(what) + " is empty");
    return out;
}

// ---------------------------------------------------------------------------

struct Context {
    Globals g;
    MaterialConfig cfg;
    ModalBasis basis;
};

Context load(const Globals& g, Run& run) {
    Context c{g, {}, {}};
    set_thread_count(g.threads);
    Tolerances tol;
    tol.volterra = g.tol;
    c.cfg = run.stage("load_config", [&] { return load_config(g.config, tol); });
    if (g.seed >= 0) c.cfg.seed = static_cast<std::uint64_t>(g.seed);
    EigenOptions eo;
    eo.rel_tol = g.tol;
    c.basis = run.stage("eigensystem", [&] { return solve_eigensystem(c.cfg.density, c.cfg.n_modes, c.cfg.space_grid, eo); });
    return c;
}

double horizon_or_default(double T, const MaterialConfig& cfg) {
    if (T > 0.0) return T;
    return std::min(1.2 * compute_T0(cfg.traction), cfg.horizon());
}

int cmd_eig(const Globals& g, const std::string& command) {
    Run run(command, g);
    auto c = load(g, run);
    const auto rep = run.stage("asymptotics", [&] { return check_asymptotics(c.basis); });
    write_eigen_csv(c.basis, run.file("eig.csv"), run.file("phi.csv"));
    csv::Writer a(run.file("asymptotics.csv"));
    a.header({"n", "H_n", "slope_deficit"});
    for (int n = 1; n <= c.basis.size(); ++n) a.row(n, {rep.H[n - 1], rep.slope_deficits[n - 1]});
    run.metrics() = {{"asymptotics", rep.status()},
                     {"travel_integral", rep.travel_integral},
                     {"sup_H", rep.sup_H},
                     {"two_median_H", rep.bound_fit},
                     {"slope_growth_exponent", rep.slope_growth_exponent}};
    run.finish(c.cfg, g);
    std::cout << "asymptotics: " << rep.status() << " (sup |H_n| = " << csv::format(rep.sup_H)
              << ", 2 median = " << csv::format(rep.bound_fit) << ")\n";
    return 0;
}

int cmd_t0(const Globals& g, const std::string& command) {
    Run run(command, g);
    set_thread_count(g.threads);
    const auto cfg = run.stage("load_config", [&] { return load_config(g.config); });
    const double T0 = run.stage("t0", [&] { return compute_T0(cfg.traction); });
    std::ofstream(run.file("t0.json")) << nlohmann::json{{"T0", T0}}.dump(2) << '\n';
    run.finish(cfg, g);
    std::cout << "T0 = " << csv::format(T0) << '\n';
    return 0;
}

int cmd_control(const Globals& g, const std::string& command, const std::string& target, double T_in, double ridge,
                bool check) {
    Run run(command, g);
    auto c = load(g, run);
    const double T = horizon_or_default(T_in, c.cfg);
    const auto Wv = spatial_spec(target, c.basis);
    const auto W = c.basis.project(Wv);
    const auto sys = run.stage("moment_system", [&] { return build_moment_system(c.cfg, c.basis, T, c.cfg.n_modes); });
    const auto ctrl = run.stage("moment_solve", [&] { return solve_moment_problem(sys, W, ridge); });
    write_control_csv(ctrl, run.file("control.csv"), run.file("residuals.csv"));
    run.metrics() = {{"T", T}, {"eig_min", sys.eig_min}, {"eig_max", sys.eig_max}, {"cond", sys.cond},
                     {"moment_residual", ctrl.residual}, {"control_norm", ctrl.norm}};
    if (check) {
        const auto traj = run.stage("round_trip", [&] { return simulate_modal(c.cfg, c.basis, &ctrl.f, {}, nullptr); });
        const auto proj = c.basis.synthesize(W);
        std::vector<double> d(proj.size()), p(proj.size());
        for (std::size_t j = 0; j < proj.size(); ++j) {
            d[j] = (traj.w_final[j] - proj[j]) * (traj.w_final[j] - proj[j]);
            p[j] = proj[j] * proj[j];
        }
        const double h = c.basis.space_grid.step();
        const double den = trapezoid(p, h);
        const double err = den > 0.0 ? std::sqrt(trapezoid(d, h) / den) : std::sqrt(trapezoid(d, h));
        run.metrics()["round_trip_relative_error"] = err;
        csv::Writer w(run.file("wfinal.csv"));
        w.header({"xi", "w_final", "target_projection"});
        for (std::size_t j = 0; j < proj.size(); ++j) w.row({c.basis.space_grid[j], traj.w_final[j], proj[j]});
        std::cout << "round-trip relative error = " << csv::format(err) << '\n';
    }
    run.finish(c.cfg, g);
    std::cout << "T = " << csv::format(T) << ", eig_min = " << csv::format(sys.eig_min)
              << ", residual = " << csv::format(ctrl.residual) << '\n';
    return 0;
}

int cmd_simulate(const Globals& g, const std::string& command, const std::string& source, const std::string& gspec,
                 const std::string& boundary, double T_in, bool cross_check, bool modal) {
    Run run(command, g);
    auto c = load(g, run);
    const double T = T_in > 0.0 ? T_in : c.cfg.horizon();
    require_horizon(c.cfg, T);
    const Grid1D grid(0.0, T, c.cfg.time_grid.size());
    std::optional<SampledFunction> f, gt;
    std::vector<double> bn;
    if (!boundary.empty()) f = time_spec(boundary, grid);
    if (!source.empty()) {
        bn = c.basis.project(spatial_spec(source, c.basis));
        gt = time_spec(gspec, grid);
    }
    if (!f && !gt) throw InputError("simulate needs --source and/or --boundary");
    const auto traj = run.stage("simulate", [&] {
        return simulate_modal(c.cfg, c.basis, f ? &*f : nullptr, bn, gt ? &*gt : nullptr);
    });
    write_trajectory_csv(traj, c.basis, run.file("eta.csv"), run.file("wfinal.csv"));
    if (modal) write_modal_csv(traj, run.file("modal.csv"));
    if (f) {
        csv::Writer w(run.file("boundary.csv"));
        w.header({"t", "w0"});
        for (std::size_t i = 0; i < grid.size(); ++i) w.row({grid[i], (*traj.boundary_value)[i]});
    }
    if (cross_check) {
        const auto zs = run.stage("kernels", [&] { return solve_kernels(c.cfg, c.basis, T, grid, c.basis.size()); });
        const auto rep = representation_wT(c.basis, zs, f ? &*f : nullptr, bn, gt ? &*gt : nullptr);
        csv::Writer w(run.file("crosscheck.csv"));
        w.header({"n", "w_n_direct", "w_n_representation"});
        double worst = 0.0;
        for (int n = 0; n < c.basis.size(); ++n) {
            const double d = traj.w_modal(n, static_cast<Eigen::Index>(grid.size() - 1));
            w.row(n + 1, {d, rep[static_cast<std::size_t>(n)]});
            worst = std::max(worst, std::abs(d - rep[static_cast<std::size_t>(n)]));
        }
        run.metrics()["representation_max_abs_difference"] = worst;
        std::cout << "max |w_n(T) direct - representation| = " << csv::format(worst) << '\n';
    }
    run.finish(c.cfg, g);
    std::cout << "eta(T) = " << csv::format(traj.eta.values().back()) << '\n';
    return 0;
}

int cmd_identify(const Globals& g, const std::string& command, const std::string& truth, const std::string& traces,
                 double T_in, int n_modes, double ridge) {
    Run run(command, g);
    auto c = load(g, run);
    const double T = horizon_or_default(T_in, c.cfg);
    const int n = n_modes > 0 ? n_modes : c.cfg.n_modes;
    if (n > c.basis.size()) throw InputError("--n-modes exceeds the config's n_modes");
    if (truth.empty() == traces.empty()) throw InputError("identify needs exactly one of --truth or --traces");
    std::unique_ptr<MeasurementOracle> oracle;
    std::vector<double> truth_values;
    if (!truth.empty()) {
        truth_values = spatial_spec(truth, c.basis);
        const Grid1D sg = c.basis.space_grid;
        const auto tv = truth_values;
        oracle = std::make_unique<SimulatorOracle>(c.cfg, [sg, tv](double x) { return interpolate_cubic(sg, tv, x); });
        // indicator truths are evaluated exactly rather than through the interpolant
        if (truth.rfind("indicator:", 0) == 0) {
            double a = 0, b = 0;
            std::sscanf(truth.c_str() + 10, "%lf,%lf", &a, &b);
            oracle = std::make_unique<SimulatorOracle>(c.cfg, [a, b](double x) { return x >= a && x <= b ? 1.0 : 0.0; });
        }
    } else {
        oracle = std::make_unique<TraceDirectoryOracle>(traces);
    }
    IdentifyOptions io;
    io.ridge = ridge;
    const auto est = run.stage("identify", [&] { return identify_source(*oracle, c.cfg, c.basis, T, n, io); });
    write_estimate_csv(est, c.basis, run.file("bhat.csv"), run.file("coefficients.csv"));
    fs::create_directories(fs::path(g.out) / "sigma");
    for (int k = 1; k <= n; ++k) {
        char name[48];
        std::snprintf(name, sizeof name, "sigma/sigma_k%04d.csv", k);
        csv::Writer w(run.file(name));
        w.header({"t", "sigma"});
        const auto& s = est.sigmas[static_cast<std::size_t>(k - 1)];
        for (std::size_t i = 0; i < s.size(); ++i) w.row({s.grid()[i], s[i]});
    }
    run.metrics() = {{"T", T}, {"n_modes", n}, {"failures", est.failures}};
    if (!truth_values.empty()) {
        const double err = projected_error(est, c.basis, truth_values);
        run.metrics()["projected_relative_error"] = err;
        std::cout << "projected relative L2 error = " << csv::format(err) << '\n';
    }
    for (const auto& f : est.failures) std::cerr << "missing coefficient: " << f << '\n';
    run.finish(c.cfg, g);
    std::cout << "b_hat_1 = " << csv::format(est.coefficients[0]) << '\n';
    return 0;
}

int cmd_diagnostics(const Globals& g, const std::string& command, const std::string& T_list,
                    const std::string& T_factors, const std::string& n_list, bool deficiency) {
    Run run(command, g);
    auto c = load(g, run);
    std::vector<double> Ts;
    if (!T_list.empty()) {
        Ts = parse_list(T_list, "--T-list");
    } else {
        const double T0 = compute_T0(c.cfg.traction);
        for (double f : parse_list(T_factors, "--T-factors")) Ts.push_back(f * T0);
    }
    for (double T : Ts) require_horizon(c.cfg, T);
    std::vector<int> ns;
    for (double v : parse_list(n_list, "--n-list")) {
        if (v != std::floor(v)) throw InputError("--n-list entries must be integers");
        ns.push_back(static_cast<int>(v));
    }
    DiagnosticsOptions opt;
    opt.deficiency = deficiency;
    const auto rep = run.stage("diagnostics", [&] { return riesz_diagnostics(c.cfg, c.basis, Ts, ns, opt); });
    write_diagnostics_csv(rep, run.file("riesz.csv"));
    run.metrics() = {{"T0", rep.T0},
                     {"stable_above_T0", rep.stable_above},
                     {"collapse_below_T0", rep.collapse_below},
                     {"deficiency_bounded", rep.deficiency_bounded}};
    run.finish(c.cfg, g);
    std::cout << "T0 = " << csv::format(rep.T0) << ", stable above: " << (rep.stable_above ? "yes" : "no")
              << ", collapse below: " << (rep.collapse_below ? "yes" : "no") << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Viscoelastic string: spectra, controls, simulation and source identification"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "material config (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("--out", g.out, "output directory");
    app.add_option("--threads", g.threads, "worker thread cap")->check(CLI::PositiveNumber);
    app.add_option("--tol", g.tol, "relative solver tolerance")->check(CLI::PositiveNumber);
    app.add_option("--seed", g.seed, "seed override (recorded in the manifest)")->check(CLI::NonNegativeNumber);
    app.set_version_flag("--version", VSTRING_VERSION);

    auto* eig = app.add_subcommand("eig", "eigenvalues, slopes and asymptotics");
    auto* t0 = app.add_subcommand("t0", "critical control time");

    auto* control = app.add_subcommand("control", "minimal-norm boundary control for a target");
    std::string target = "mode:1";
    double T = 0.0, ridge = 0.0;
    bool check = false;
    control->add_option("--target", target, "mode:k | indicator:a,b | expr:<xi formula> | file:<csv>");
    control->add_option("--T", T, "horizon (default 1.2 T0)");
    control->add_option("--ridge", ridge, "Tikhonov shift of the Gram matrix")->check(CLI::NonNegativeNumber);
    control->add_flag("--check", check, "simulate the control and report the round-trip error");

    auto* simulate = app.add_subcommand("simulate", "forward simulation");
    std::string source, gspec = "expr:t", boundary;
    bool cross = false, modal = false;
    simulate->add_option("--source", source, "spatial source b: mode:k | indicator:a,b | expr: | file:");
    simulate->add_option("--g", gspec, "time profile g of the source (expr:<t formula> | file:<csv>)");
    simulate->add_option("--boundary", boundary, "boundary control f (expr:<t formula> | file:<csv>)");
    simulate->add_option("--T", T, "final time (default t_max)");
    simulate->add_flag("--cross-check", cross, "recompute w_n(T) through the kernel representation");
    simulate->add_flag("--modal", modal, "also write the full modal matrix");

    auto* identify = app.add_subcommand("identify", "source identification");
    std::string truth, traces;
    int n_modes = 0;
    identify->add_option("--truth", truth, "known source for a closed-loop run");
    identify->add_option("--traces", traces, "directory of measured eta_k####.csv traces");
    identify->add_option("--T", T, "horizon (default 1.2 T0)");
    identify->add_option("--n-modes", n_modes, "number of coefficients (default n_modes)");
    identify->add_option("--ridge", ridge, "Tikhonov shift of the Gram matrix")->check(CLI::NonNegativeNumber);

    auto* diagnostics = app.add_subcommand("diagnostics", "Gram bounds and deficiency sums");
    std::string T_list, T_factors = "0.8,1.0,1.2", n_list = "8,16,32";
    bool no_def = false;
    diagnostics->add_option("--T-list", T_list, "comma-separated horizons");
    diagnostics->add_option("--T-factors", T_factors, "horizons as multiples of T0 (when --T-list is absent)");
    diagnostics->add_option("--n-list", n_list, "comma-separated mode counts");
    diagnostics->add_flag("--no-deficiency", no_def, "skip the deficiency sums");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    std::string command;
    for (int i = 0; i < argc; ++i) command += (i ? " " : "") + std::string(argv[i]);
    try {
        if (*eig) return cmd_eig(g, command);
        if (*t0) return cmd_t0(g, command);
        if (*control) return cmd_control(g, command, target, T, ridge, check);
        if (*simulate) return cmd_simulate(g, command, source, gspec, boundary, T, cross, modal);
        if (*identify) return cmd_identify(g, command, truth, traces, T, n_modes, ridge);
        if (*diagnostics) return cmd_diagnostics(g, command, T_list, T_factors, n_list, !no_def);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    }
    return 2;
}
