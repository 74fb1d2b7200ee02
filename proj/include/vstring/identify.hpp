#pragma once

// Source identification. For each k a boundary control f_k steering the
// controlled string to phi_k is turned into the input sigma_k = f_k + N' * f_k;
// driving the source problem with g = int sigma_k then gives eta_(k)(T) = b_k.

#include <cmath>
#include <fstream>
#include <functional>
#include <map>

#include "vstring/simulate.hpp"

namespace vstring {

/// sigma(t) = f(t) + int_0^t N'(t-s) f(s) ds (product trapezoid), so that
/// int_0^t sigma = int_0^t N(t-s) f(s) ds.
inline SampledFunction build_sigma_from_f(const SampledFunction& f, const MemoryKernel& kernel) {
    const Grid1D& g = f.grid();
    std::vector<double> M(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) M[i] = kernel.M(g[i]);
    auto conv = detail::convolve(M, f.values(), g.step());
    for (std::size_t i = 0; i < g.size(); ++i) conv[i] += f[i];
    return SampledFunction(g, std::move(conv));
}

/// g(t) = int_0^t sigma, trapezoid on the grid of sigma.
inline SampledFunction integrate_sigma(const SampledFunction& sigma) {
    return SampledFunction(sigma.grid(), cumulative_trapezoid(sigma.values(), sigma.grid().step()));
}

// ---------------------------------------------------------------------------
// measurement oracles

/// Maps the k-th designed input sigma_k to the boundary output trace eta on [0, T].
class MeasurementOracle {
public:
    virtual ~MeasurementOracle() = default;
    virtual SampledFunction measure(int k, const SampledFunction& sigma) = 0;
};

struct SimulatorOracleOptions {
    int time_factor = 2;   // oracle time step = input step / time_factor
    int space_factor = 2;  // oracle space grid refinement
    int n_modes = 0;       // 0: twice the config
    int levels = 1;        // Richardson levels of the oracle integrator
};

/// In-process simulator of the source problem with a known b. Runs on its own
/// (finer) grids and its own eigenbasis.
class SimulatorOracle : public MeasurementOracle {
public:
    SimulatorOracle(const MaterialConfig& cfg, const std::function<double(double)>& b_truth,
                    const SimulatorOracleOptions& opt = {})
        : cfg_(cfg), opt_(opt) {
        const Grid1D sg = cfg.space_grid.refined(static_cast<std::size_t>(std::max(1, opt.space_factor)));
        const int nm = opt.n_modes > 0 ? opt.n_modes : 2 * cfg.n_modes;
        basis_ = solve_eigensystem(cfg.density, nm, sg);
        std::vector<double> bv(sg.size());
        for (std::size_t j = 0; j < sg.size(); ++j) bv[j] = b_truth(sg[j]);
        b_ = basis_.project(bv);
    }

    SampledFunction measure(int, const SampledFunction& sigma) override {
        const Grid1D fine = sigma.grid().refined(static_cast<std::size_t>(std::max(1, opt_.time_factor)));
        const auto g = integrate_sigma(SampledFunction(fine, detail::resample(sigma, fine)));
        SimulateOptions so;
        so.levels = opt_.levels;
        const auto traj = simulate_modal(cfg_, basis_, nullptr, b_, &g, so);
        return traj.eta;
    }

    const std::vector<double>& true_coefficients() const { return b_; }
    const ModalBasis& basis() const { return basis_; }

private:
    MaterialConfig cfg_;
    SimulatorOracleOptions opt_;
    ModalBasis basis_;
    std::vector<double> b_;
};

/// Reads measured traces with columns (t, eta) from a directory. Files are
/// eta_k####.csv unless the directory holds traces.json, a list of
/// {"k", "file", "T"} entries, in which case that listing is authoritative.
class TraceDirectoryOracle : public MeasurementOracle {
public:
    explicit TraceDirectoryOracle(std::filesystem::path dir) : dir_(std::move(dir)) {
        if (!std::filesystem::is_directory(dir_)) throw InputError("trace directory not found: " + dir_.string());
        const auto listing = dir_ / "traces.json";
        if (!std::filesystem::exists(listing)) return;
        nlohmann::json j;
        try {
            std::ifstream(listing) >> j;
        } catch (const std::exception& e) {
            throw InputError("cannot parse " + listing.string() + ": " + e.what());
        }
        if (!j.is_array()) throw InputError(listing.string() + " must be a JSON array");
        for (const auto& e : j) {
            if (!e.is_object() || !e.contains("k") || !e.contains("file") || !e.at("k").is_number_integer() ||
                !e.at("file").is_string())
                throw InputError(listing.string() + ": entries need integer k and string file");
            Entry en{e.at("file").get<std::string>(), std::nan("")};
            if (e.contains("T")) {
                if (!e.at("T").is_number()) throw InputError(listing.string() + ": T must be a number");
                en.T = e.at("T").get<double>();
            }
            listed_[e.at("k").get<int>()] = en;
        }
    }

    static std::string file_name(int k) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "eta_k%04d.csv", k);
        return buf;
    }

    SampledFunction measure(int k, const SampledFunction&) override {
        std::filesystem::path path = dir_ / file_name(k);
        double T = std::nan("");
        if (!listed_.empty()) {
            const auto it = listed_.find(k);
            if (it == listed_.end()) throw InputError("traces.json has no entry for k = " + std::to_string(k));
            path = dir_ / it->second.file;
            T = it->second.T;
        }
        if (!std::filesystem::exists(path)) throw InputError("missing trace " + path.string());
        const auto tab = csv::read(path);
        const auto t = tab.column("t");
        const auto eta = tab.column("eta");
        if (t.size() < 2) throw InputError(path.string() + ": need at least two samples");
        const Grid1D g(t.front(), t.back(), t.size());
        for (std::size_t i = 0; i < t.size(); ++i)
            if (std::abs(t[i] - g[i]) > 1e-9 * std::max(1.0, std::abs(t.back())))
                throw InputError(path.string() + ": samples must be uniformly spaced in t");
        if (!std::isnan(T) && std::abs(t.back() - T) > 1e-9 * std::max(1.0, T))
            throw InputError(path.string() + " ends at t = " + std::to_string(t.back()) + " but traces.json says T = " +
                             std::to_string(T));
        return SampledFunction(g, eta);
    }

private:
    struct Entry {
        std::string file;
        double T;
    };
    std::filesystem::path dir_;
    std::map<int, Entry> listed_;
};

// ---------------------------------------------------------------------------

struct SourceEstimate {
    std::vector<double> coefficients;       // b^_k = eta_(k)(T); NaN when the query failed
    std::vector<double> b_hat;              // sum_k b^_k phi_k on the space grid (missing k skipped)
    int n_modes = 0;
    std::vector<double> per_mode_residuals; // moment-solve residual of each control
    std::vector<std::string> failures;      // one message per missing k
    std::vector<SampledFunction> sigmas;    // designed inputs sigma_k
};

struct IdentifyOptions {
    double ridge = 0.0;
    VolterraOptions volterra;
};

inline SourceEstimate identify_source(MeasurementOracle& oracle, const MaterialConfig& cfg, const ModalBasis& basis,
                                      double T, int n_modes, const IdentifyOptions& opt = {}) {
    if (n_modes < 1 || n_modes > basis.size()) throw InputError("n_modes must lie in 1..basis size");
    double T0 = std::numeric_limits<double>::infinity();
    try {
        T0 = compute_T0(cfg.traction);
    } catch (const InputError&) {
        // int sqrt(P) stays below pi on the whole configured range, so T < T0
    }
    if (T < T0)
        log::warn_once("identification horizon T = " + std::to_string(T) + " is below T0 = " + std::to_string(T0) +
                       "; the reconstruction is not guaranteed");
    const auto sys = build_moment_system(cfg, basis, T, n_modes, opt.volterra);
    const MomentSolver solver(sys, opt.ridge);

    SourceEstimate est;
    est.n_modes = n_modes;
    est.coefficients.assign(static_cast<std::size_t>(n_modes), std::nan(""));
    est.per_mode_residuals.assign(static_cast<std::size_t>(n_modes), 0.0);
    for (int k = 1; k <= n_modes; ++k) {
        std::vector<double> W(static_cast<std::size_t>(n_modes), 0.0);
        W[static_cast<std::size_t>(k - 1)] = 1.0;
        const auto control = solver.solve(W);
        est.per_mode_residuals[static_cast<std::size_t>(k - 1)] = control.residual;
        auto sigma = build_sigma_from_f(control.f, cfg.kernel);
        try {
            const auto eta = oracle.measure(k, sigma);
            if (std::abs(eta.grid().end() - T) > 1e-9 * T)
                throw InputError("trace for k = " + std::to_string(k) + " ends at t = " +
                                 std::to_string(eta.grid().end()) + ", expected T = " + std::to_string(T));
            est.coefficients[static_cast<std::size_t>(k - 1)] = eta.values().back();
        } catch (const std::exception& e) {
            est.failures.push_back("k = " + std::to_string(k) + ": " + e.what());
        }
        est.sigmas.push_back(std::move(sigma));
    }
    std::vector<double> usable(est.coefficients);
    for (double& v : usable)
        if (std::isnan(v)) v = 0.0;
    est.b_hat = basis.synthesize(usable);
    return est;
}

/// ||b^ - Pi_N b||_2 / ||Pi_N b||_2 on the space grid, Pi_N the projection on
/// the first N modes of `basis`. Falls back to the absolute error when Pi_N b = 0.
inline double projected_error(const SourceEstimate& est, const ModalBasis& basis, std::span<const double> b_values) {
    auto coeff = basis.project(b_values);
    coeff.resize(static_cast<std::size_t>(est.n_modes));
    const auto proj = basis.synthesize(coeff);
    std::vector<double> diff(proj.size()), sq(proj.size()), sd(proj.size());
    for (std::size_t j = 0; j < proj.size(); ++j) {
        diff[j] = est.b_hat[j] - proj[j];
        sd[j] = diff[j] * diff[j];
        sq[j] = proj[j] * proj[j];
    }
    const double h = basis.space_grid.step();
    const double den = trapezoid(sq, h);
    return den > 0.0 ? std::sqrt(trapezoid(sd, h) / den) : std::sqrt(trapezoid(sd, h));
}

inline void write_estimate_csv(const SourceEstimate& est, const ModalBasis& basis,
                               const std::filesystem::path& bhat_path, const std::filesystem::path& coeff_path) {
    csv::Writer b(bhat_path);
    b.header({"xi", "b_hat"});
    for (std::size_t j = 0; j < basis.space_grid.size(); ++j) b.row({basis.space_grid[j], est.b_hat[j]});
    csv::Writer c(coeff_path);
    c.header({"k", "b_hat_k", "moment_residual"});
    for (std::size_t k = 0; k < est.coefficients.size(); ++k)
        c.row(static_cast<long long>(k + 1), {est.coefficients[k], est.per_mode_residuals[k]});
}

}  // namespace vstring
