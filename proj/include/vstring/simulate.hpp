#pragma once

// Forward modal simulation
//
//   w_n'(t) = -lambda_n^2 int_0^t N(t-s) P(s) w_n(s) ds + phi_n'(0) int_0^t N(t-s) f(s) ds + b_n g(t),
//
// w_n(0) = 0, the boundary output eta(t) = sum_n phi_n'(0) w_n(t), and the
// inversion of the physical traction observation for eta.

#include <optional>

#include "vstring/moment.hpp"

namespace vstring {

struct SimulateOptions {
    int levels = 3;   // Richardson levels (1 = plain product trapezoid)
    int n_modes = 0;  // 0: every mode of the basis
};

struct TrajectorySolution {
    Grid1D grid;                       // [0, T]
    Eigen::MatrixXd w_modal;           // row n-1: w_n at the nodes of grid
    std::vector<double> w_final;       // w(xi_j, T) on the space grid
    SampledFunction eta;               // sum_n phi_n'(0) w_n(t)
    std::optional<SampledFunction> boundary_value;  // f / (c(0) P(t)), reported only
    int truncation = 0;
};

namespace detail {

/// Trapezoid product convolution (K * f)(t_i) = int_0^t_i K(t_i - s) f(s) ds on a uniform grid.
inline std::vector<double> convolve(std::span<const double> K, std::span<const double> f, double h) {
    const std::size_t n = f.size();
    std::vector<double> rev(K.rbegin(), K.rend()), out(n, 0.0);
    for (std::size_t i = 1; i < n; ++i)
        out[i] = h * (dot(&rev[n - 1 - i], f.data(), i + 1) - 0.5 * (K[i] * f[0] + K[0] * f[i]));
    return out;
}

inline std::vector<double> resample(const SampledFunction& f, const Grid1D& g) {
    if (f.grid() == g) return f.values();
    std::vector<double> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = f(g[i]);
    return out;
}

}  // namespace detail

/// Integrates the modal equations forward in time on the grid of the forcing.
/// `f` is the boundary control; `b` (modal coefficients b_n) and `g` the source.
inline TrajectorySolution simulate_modal(const MaterialConfig& cfg, const ModalBasis& basis,
                                         const SampledFunction* f, std::span<const double> b, const SampledFunction* g,
                                         const SimulateOptions& opt = {}) {
    if (!f && !g) throw InputError("simulate: no forcing given (need a boundary control or a source b, g)");
    if (g && b.empty()) throw InputError("simulate: source time profile g given without coefficients b_n");
    if (f && g && !(f->grid() == g->grid())) throw InputError("simulate: boundary control and g on different grids");
    const Grid1D grid = f ? f->grid() : g->grid();
    if (grid.start() != 0.0) throw InputError("simulate: forcing grid must start at t = 0");
    const double T = grid.end();
    require_horizon(cfg, T);
    const int nm = opt.n_modes > 0 ? std::min(opt.n_modes, basis.size()) : basis.size();

    std::vector<double> lam2(static_cast<std::size_t>(nm)), bn(static_cast<std::size_t>(nm), 0.0);
    for (int n = 0; n < nm; ++n) {
        lam2[static_cast<std::size_t>(n)] = basis.lambdas[static_cast<std::size_t>(n)] * basis.lambdas[static_cast<std::size_t>(n)];
        if (static_cast<std::size_t>(n) < b.size()) bn[static_cast<std::size_t>(n)] = b[static_cast<std::size_t>(n)];
    }

    auto channels = richardson(grid, opt.levels, [&](const Grid1D& fine) {
        const double h = fine.step();
        const auto N = sample_N(cfg.kernel, fine);
        std::vector<double> P(fine.size());
        for (std::size_t i = 0; i < fine.size(); ++i) P[i] = cfg.traction(fine[i]);
        std::vector<double> Nf(fine.size(), 0.0), gv(fine.size(), 0.0);
        if (f) Nf = detail::convolve(N, detail::resample(*f, fine), h);
        if (g) gv = detail::resample(*g, fine);
        std::vector<std::vector<double>> out(static_cast<std::size_t>(nm));
        parallel_for(out.size(), [&](std::size_t n) {
            const std::vector<double> k(fine.size(), lam2[n]);
            std::vector<double> F(fine.size());
            for (std::size_t i = 0; i < fine.size(); ++i) F[i] = basis.slopes0[n] * Nf[i] + bn[n] * gv[i];
            out[n] = volterra_trapezoid(0.0, k, P, F, N, h).first;
            detail::check_stability(out[n], std::numeric_limits<double>::infinity(), "simulate_modal");
        });
        return out;
    });

    TrajectorySolution s;
    s.grid = grid;
    s.truncation = nm;
    s.w_modal.resize(nm, static_cast<Eigen::Index>(grid.size()));
    for (int n = 0; n < nm; ++n) {
        channels[static_cast<std::size_t>(n)][0] = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i)
            s.w_modal(n, static_cast<Eigen::Index>(i)) = channels[static_cast<std::size_t>(n)][i];
    }
    std::vector<double> eta(grid.size(), 0.0), wT(static_cast<std::size_t>(nm));
    for (std::size_t i = 0; i < grid.size(); ++i)
        for (int n = 0; n < nm; ++n) eta[i] += basis.slopes0[static_cast<std::size_t>(n)] * s.w_modal(n, static_cast<Eigen::Index>(i));
    s.eta = SampledFunction(grid, std::move(eta));
    for (int n = 0; n < nm; ++n) wT[static_cast<std::size_t>(n)] = s.w_modal(n, static_cast<Eigen::Index>(grid.size() - 1));
    s.w_final = basis.synthesize(wT);
    if (f) {
        const double c0 = cfg.density(0.0);
        s.boundary_value = SampledFunction::tabulate(grid, [&](double t) { return (*f)(t) / (c0 * cfg.traction(t)); });
    }
    return s;
}

struct SeriesValue {
    std::vector<double> w;       // partial sum on the space grid
    double tail_indicator = 0.0; // l2 norm of the last quarter of the modal coefficients
};

/// w(., t) = sum_{n <= truncation} w_n(t) phi_n; t must be a node of the trajectory grid.
inline SeriesValue evaluate_solution_series(const TrajectorySolution& traj, const ModalBasis& basis, double t) {
    const Grid1D& g = traj.grid;
    const double s = (t - g.start()) / g.step();
    const auto i = static_cast<std::size_t>(std::llround(s));
    if (std::abs(s - static_cast<double>(i)) > 1e-6 || i >= g.size())
        throw InputError("t_query = " + std::to_string(t) + " is not a node of the time grid");
    std::vector<double> coeff(static_cast<std::size_t>(traj.truncation));
    for (int n = 0; n < traj.truncation; ++n) coeff[static_cast<std::size_t>(n)] = traj.w_modal(n, static_cast<Eigen::Index>(i));
    SeriesValue v;
    v.w = basis.synthesize(coeff);
    const std::size_t q = coeff.size() - coeff.size() / 4;
    double tail = 0.0;
    for (std::size_t n = q; n < coeff.size(); ++n) tail += coeff[n] * coeff[n];
    v.tail_indicator = std::sqrt(tail);
    return v;
}

/// Representation of w_n(T):
///   int_0^T f(T-s) e_n(s) ds + b_n int_0^T z_n(T-s; T) g(s) ds,
/// with e_n = phi_n'(0) u_n from the kernel solutions (Simpson quadrature).
inline std::vector<double> representation_wT(const ModalBasis& basis, const std::vector<KernelSolution>& zs,
                                             const SampledFunction* f, std::span<const double> b,
                                             const SampledFunction* g) {
    std::vector<double> out(zs.size(), 0.0);
    for (std::size_t k = 0; k < zs.size(); ++k) {
        const Grid1D& grid = zs[k].z.grid();
        const std::size_t nt = grid.size();
        const double T = grid.end();
        std::vector<double> prod(nt);
        if (f) {
            for (std::size_t i = 0; i < nt; ++i) prod[i] = (*f)(T - grid[i]) * basis.slopes0[k] * zs[k].u[i];
            out[k] += simpson(prod, grid.step());
        }
        if (g && k < b.size() && b[k] != 0.0) {
            for (std::size_t i = 0; i < nt; ++i) prod[i] = zs[k].z[nt - 1 - i] * (*g)(grid[i]);
            out[k] += b[k] * simpson(prod, grid.step());
        }
    }
    return out;
}

/// Output series eta(t) = sum_n b_n phi_n'(0) int_0^t z_n(t - r; t) g(r) dr,
/// with a fresh kernel solve at horizon t for every mode.
inline double eta_series(const MaterialConfig& cfg, const ModalBasis& basis, std::span<const double> b,
                         const SampledFunction& g, double t, std::size_t nodes, const VolterraOptions& opt = {}) {
    const Grid1D grid(0.0, t, nodes);
    const auto count = static_cast<int>(std::min<std::size_t>(b.size(), static_cast<std::size_t>(basis.size())));
    const auto zs = solve_kernels(cfg, basis, t, grid, count, opt);
    double eta = 0.0;
    std::vector<double> prod(nodes);
    for (int n = 0; n < count; ++n) {
        const auto& z = zs[static_cast<std::size_t>(n)].z;
        for (std::size_t i = 0; i < nodes; ++i) prod[i] = z[nodes - 1 - i] * g(grid[i]);
        eta += b[static_cast<std::size_t>(n)] * basis.slopes0[static_cast<std::size_t>(n)] * simpson(prod, grid.step());
    }
    return eta;
}

// ---------------------------------------------------------------------------
// observation

struct ObservationOptions {
    int levels = 3;
};

/// Solves eta(t) + int_0^t M(t-s) eta(s) ds = -y(t) / (P(t) c(0)).
inline SampledFunction observation_to_eta(const SampledFunction& y_obs, const TractionProfile& traction,
                                          const DensityProfile& density, const MemoryKernel& kernel,
                                          const ObservationOptions& opt = {}) {
    const Grid1D& grid = y_obs.grid();
    if (grid.start() != 0.0) throw InputError("observation grid must start at t = 0");
    const double c0 = density(0.0);
    auto ch = richardson(grid, opt.levels, [&](const Grid1D& fine) {
        const auto y = detail::resample(y_obs, fine);
        std::vector<double> r(fine.size()), K(fine.size());
        for (std::size_t i = 0; i < fine.size(); ++i) {
            r[i] = -y[i] / (traction(fine[i]) * c0);
            K[i] = kernel.M(fine[i]);
        }
        return std::vector<std::vector<double>>{volterra_second_kind(r, K, fine.step())};
    });
    return SampledFunction(grid, std::move(ch[0]));
}

/// Forward observation map y = -P c(0) [eta + M * eta], with the convolution
/// evaluated by composite Gauss-Legendre on the interpolant of eta.
inline SampledFunction eta_to_observation(const SampledFunction& eta, const TractionProfile& traction,
                                          const DensityProfile& density, const MemoryKernel& kernel) {
    const Grid1D& grid = eta.grid();
    const double c0 = density(0.0);
    return SampledFunction::tabulate(grid, [&](double t) {
        const double conv = t > 0.0 ? integrate([&](double s) { return kernel.M(t - s) * eta(s); }, 0.0, t, grid.step()) : 0.0;
        return -traction(t) * c0 * (eta(t) + conv);
    });
}

// ---------------------------------------------------------------------------
// CSV

inline void write_trajectory_csv(const TrajectorySolution& s, const ModalBasis& basis,
                                 const std::filesystem::path& eta_path, const std::filesystem::path& wfinal_path) {
    csv::Writer e(eta_path);
    e.header({"t", "eta"});
    for (std::size_t i = 0; i < s.grid.size(); ++i) e.row({s.grid[i], s.eta[i]});
    csv::Writer w(wfinal_path);
    w.header({"xi", "w_final"});
    for (std::size_t j = 0; j < basis.space_grid.size(); ++j) w.row({basis.space_grid[j], s.w_final[j]});
}

inline void write_modal_csv(const TrajectorySolution& s, const std::filesystem::path& path) {
    csv::Writer w(path);
    std::vector<std::string> cols{"t"};
    for (int n = 1; n <= s.truncation; ++n) cols.push_back("w_" + std::to_string(n));
    w.header(cols);
    for (std::size_t i = 0; i < s.grid.size(); ++i) {
        std::vector<double> row{s.grid[i]};
        for (int n = 0; n < s.truncation; ++n) row.push_back(s.w_modal(n, static_cast<Eigen::Index>(i)));
        w.row(row);
    }
}

}  // namespace vstring
