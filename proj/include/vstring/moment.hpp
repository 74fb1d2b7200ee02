#pragma once

// Moment functions e_n(t) = phi_n'(0) int_0^t N(t-r) z_n(r; T) dr on [0, T],
// their Gram matrix, the minimal-norm boundary control and the critical time.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "vstring/volterra.hpp"

namespace vstring {

// ---------------------------------------------------------------------------
// critical time

/// T0 with int_0^T0 sqrt(P(u)) du = pi, by bisection to 1e-10 on the sampled
/// range of P. `travel` is the target integral (pi unless overridden).
inline double compute_T0(const TractionProfile& P, double travel = kPi) {
    const double t_end = P.P.grid().end();
    auto F = [&](double T) { return integrate([&](double u) { return std::sqrt(P.P(u)); }, 0.0, T, 0.01); };
    const double total = F(t_end);
    if (total < travel * (1.0 - 1e-12))
        throw InputError("horizon-too-short: int_0^t_max sqrt(P) = " + std::to_string(total) +
                         " never reaches pi; extend the traction samples");
    double lo = 0.0, hi = t_end;
    while (hi - lo > 1e-11) {
        const double mid = 0.5 * (lo + hi);
        (F(mid) < travel ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// moment system

struct MomentSystem {
    double T = 0.0;
    Grid1D grid;              // [0, T]
    Eigen::MatrixXd basis;    // row n-1: e_n at the nodes of grid
    Eigen::MatrixXd gram;     // int_0^T e_n e_m, trapezoid
    double eig_min = 0.0;
    double eig_max = 0.0;
    double cond = 0.0;

    int size() const { return static_cast<int>(basis.rows()); }
};

/// z_n(.; T) for modes 1..count of `basis`, one independent solve per mode.
inline std::vector<KernelSolution> solve_kernels(const MaterialConfig& cfg, const ModalBasis& basis, double T,
                                                 const Grid1D& grid, int count, const VolterraOptions& opt = {}) {
    if (count > basis.size()) throw InputError("more kernel solves requested than modes in the basis");
    std::vector<KernelSolution> zs(static_cast<std::size_t>(count));
    parallel_for(zs.size(), [&](std::size_t k) {
        zs[k] = solve_zn(basis.lambdas[k], cfg, T, grid, opt, static_cast<int>(k) + 1);
    });
    return zs;
}

/// Eigenvalues of the symmetric matrix, ascending.
inline Eigen::VectorXd symmetric_eigenvalues(const Eigen::MatrixXd& G) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

inline MomentSystem build_moment_system(const ModalBasis& basis, const std::vector<KernelSolution>& zs) {
    if (zs.empty()) throw InputError("moment system needs at least one mode");
    MomentSystem m;
    m.T = zs.front().T;
    m.grid = zs.front().u.grid();
    const std::size_t nt = m.grid.size();
    const auto n = static_cast<Eigen::Index>(zs.size());
    for (const auto& z : zs)
        if (!(z.u.grid() == m.grid) || z.T != m.T) throw InputError("inconsistent grids in moment system");
    m.basis.resize(n, static_cast<Eigen::Index>(nt));
    for (Eigen::Index k = 0; k < n; ++k) {
        const double slope = basis.slopes0.at(static_cast<std::size_t>(k));
        const auto& u = zs[static_cast<std::size_t>(k)].u.values();
        for (std::size_t i = 0; i < nt; ++i) m.basis(k, static_cast<Eigen::Index>(i)) = slope * u[i];
        m.basis(k, 0) = 0.0;
    }
    // trapezoid weights, fixed-order double loop
    std::vector<double> w(nt, m.grid.step());
    w.front() *= 0.5;
    w.back() *= 0.5;
    Eigen::MatrixXd weighted = m.basis;
    for (std::size_t i = 0; i < nt; ++i) weighted.col(static_cast<Eigen::Index>(i)) *= w[i];
    m.gram.resize(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b <= a; ++b)
            m.gram(a, b) = m.gram(b, a) = weighted.row(a).dot(m.basis.row(b));
    const auto ev = symmetric_eigenvalues(m.gram);
    m.eig_min = ev(0);
    m.eig_max = ev(n - 1);
    m.cond = m.eig_min > 0.0 ? m.eig_max / m.eig_min : std::numeric_limits<double>::infinity();
    return m;
}

inline MomentSystem build_moment_system(const MaterialConfig& cfg, const ModalBasis& basis, double T, int n_modes,
                                        const VolterraOptions& opt = {}) {
    const Grid1D grid(0.0, T, cfg.time_grid.size());
    return build_moment_system(basis, solve_kernels(cfg, basis, T, grid, n_modes, opt));
}

// ---------------------------------------------------------------------------
// control

struct ControlSignal {
    SampledFunction f;                // on [0, T]
    std::vector<double> coefficients; // c_m
    std::vector<double> targets;      // W_n
    double residual = 0.0;            // ||G c - W||_2
    double norm = 0.0;                // ||f||_{L2(0,T)}
};

/// Factorisation of G + ridge I, reusable across targets.
class MomentSolver {
public:
    MomentSolver(const MomentSystem& system, double ridge = 0.0) : sys_(&system), ridge_(ridge) {
        if (!(ridge >= 0.0)) throw InputError("ridge must be non-negative");
        const auto n = system.gram.rows();
        Eigen::MatrixXd A = system.gram + ridge * Eigen::MatrixXd::Identity(n, n);
        llt_.compute(A);
        const double floor = 1e-13 * std::max(system.eig_max, 0.0);
        if (llt_.info() != Eigen::Success || system.eig_min + ridge <= floor)
            throw NumericError("singular Gram matrix (eig_min = " + csv::format(system.eig_min) +
                               "): the horizon is probably below T0 or the configuration is degenerate; "
                               "use a longer horizon or a positive ridge");
    }

    ControlSignal solve(std::span<const double> W) const {
        const MomentSystem& s = *sys_;
        if (static_cast<Eigen::Index>(W.size()) != s.gram.rows())
            throw InputError("target length " + std::to_string(W.size()) + " does not match n_modes " +
                             std::to_string(s.gram.rows()));
        const Eigen::Map<const Eigen::VectorXd> w(W.data(), static_cast<Eigen::Index>(W.size()));
        ControlSignal out;
        out.targets.assign(W.begin(), W.end());
        if (w.cwiseAbs().maxCoeff() == 0.0) {
            out.coefficients.assign(W.size(), 0.0);
            out.f = SampledFunction(s.grid, std::vector<double>(s.grid.size(), 0.0));
            return out;
        }
        const Eigen::VectorXd c = llt_.solve(w);
        out.coefficients.assign(c.data(), c.data() + c.size());
        out.residual = (s.gram * c - w).norm();
        // f(t_i) = sum_m c_m e_m(T - t_i); T - t_i is node nt-1-i
        const std::size_t nt = s.grid.size();
        const Eigen::VectorXd e = s.basis.transpose() * c;
        std::vector<double> f(nt);
        for (std::size_t i = 0; i < nt; ++i) f[i] = e(static_cast<Eigen::Index>(nt - 1 - i));
        std::vector<double> sq(nt);
        for (std::size_t i = 0; i < nt; ++i) sq[i] = f[i] * f[i];
        out.norm = std::sqrt(trapezoid(sq, s.grid.step()));
        out.f = SampledFunction(s.grid, std::move(f));
        return out;
    }

    double ridge() const { return ridge_; }

private:
    const MomentSystem* sys_;
    double ridge_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline ControlSignal solve_moment_problem(const MomentSystem& system, std::span<const double> targets,
                                          double ridge = 0.0) {
    return MomentSolver(system, ridge).solve(targets);
}

/// int_0^T f(T-s) e_n(s) ds for every n, Simpson on the system grid.
inline std::vector<double> apply_moments(const MomentSystem& s, const SampledFunction& f) {
    const std::size_t nt = s.grid.size();
    std::vector<double> out(static_cast<std::size_t>(s.size())), prod(nt);
    for (int n = 0; n < s.size(); ++n) {
        for (std::size_t i = 0; i < nt; ++i) prod[i] = f[nt - 1 - i] * s.basis(n, static_cast<Eigen::Index>(i));
        out[static_cast<std::size_t>(n)] = simpson(prod, s.grid.step());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Riesz diagnostics

struct DiagnosticsRow {
    double T = 0.0;
    int n_modes = 0;
    double eig_min = 0.0;
    double eig_max = 0.0;
    double cond = 0.0;
    double D_N = 0.0;  // sum_{n <= N} ||Z_n - y0 sqrt(2/pi) sin(n .)||^2_{L2(0,S)}
};

struct DiagnosticsReport {
    double T0 = 0.0;
    std::vector<DiagnosticsRow> rows;
    // T within 1e-6 relative of T0 is treated as critical and enters neither flag
    bool stable_above = false;    // eig_min at every T > T0 stays within a factor 2 across n and is positive
    bool collapse_below = false;  // eig_min at every T < T0 (largest n) is < 1e-2 x the smallest value above T0
    bool deficiency_bounded = false;  // D_last - D_mid <= D_mid at every T >= T0
};

struct DiagnosticsOptions {
    VolterraOptions volterra;
    bool deficiency = true;  // compute D_N (needs the transform chain and Y_n per T)
    std::size_t x_nodes = 0; // 0: same count as the time grid
};

/// Sum over the first N modes of ||Z_n - y0 sqrt(2/pi) sin(n x)||^2 on (0, S),
/// returned as partial sums D_1..D_count.
inline std::vector<double> deficiency_sums(const MaterialConfig& cfg, const ModalBasis& basis, double T, int count,
                                           const DiagnosticsOptions& opt = {}) {
    const std::size_t nx = opt.x_nodes ? opt.x_nodes : cfg.time_grid.size();
    const auto chain = build_transform_chain(cfg, T, nx, false);
    const auto cb = build_C_and_B(chain, cfg.kernel);
    const Grid1D& xg = cb.B.grid();
    std::vector<double> lambdas(basis.lambdas.begin(), basis.lambdas.begin() + count);
    const auto Ys = solve_Yn_batch(lambdas, chain, xg, opt.volterra);
    const double amp = chain.y0 * std::sqrt(2.0 / kPi);
    std::vector<double> D(static_cast<std::size_t>(count));
    std::vector<double> sq(xg.size());
    double acc = 0.0;
    for (int n = 1; n <= count; ++n) {
        const auto Z = compute_Zn(basis.slope(n), Ys[static_cast<std::size_t>(n - 1)], cb.B);
        for (std::size_t i = 0; i < xg.size(); ++i) {
            const double r = Z[i] - amp * std::sin(n * xg[i]);
            sq[i] = r * r;
        }
        acc += trapezoid(sq, xg.step());
        D[static_cast<std::size_t>(n - 1)] = acc;
    }
    return D;
}

inline DiagnosticsReport riesz_diagnostics(const MaterialConfig& cfg, const ModalBasis& basis,
                                           std::span<const double> T_list, std::span<const int> n_list,
                                           const DiagnosticsOptions& opt = {}) {
    if (T_list.empty() || n_list.empty()) throw InputError("diagnostics need at least one T and one n");
    const int n_max = *std::max_element(n_list.begin(), n_list.end());
    const int n_min = *std::min_element(n_list.begin(), n_list.end());
    if (n_min < 1 || n_max > basis.size()) throw InputError("diagnostic mode counts must lie in 1..n_modes");
    DiagnosticsReport rep;
    rep.T0 = compute_T0(cfg.traction);
    rep.stable_above = true;
    rep.deficiency_bounded = true;
    double min_above = std::numeric_limits<double>::infinity(), max_below = 0.0;
    bool any_above = false, any_below = false;
    for (double T : T_list) {
        const auto sys = build_moment_system(cfg, basis, T, n_max, opt.volterra);
        std::vector<double> D;
        if (opt.deficiency) D = deficiency_sums(cfg, basis, T, n_max, opt);
        double lo_small = 0.0, lo_large = 0.0;
        for (int n : n_list) {
            const auto ev = symmetric_eigenvalues(sys.gram.topLeftCorner(n, n));
            DiagnosticsRow r;
            r.T = T;
            r.n_modes = n;
            r.eig_min = ev(0);
            r.eig_max = ev(n - 1);
            r.cond = r.eig_min > 0.0 ? r.eig_max / r.eig_min : std::numeric_limits<double>::infinity();
            r.D_N = D.empty() ? std::nan("") : D[static_cast<std::size_t>(n - 1)];
            if (n == n_min) lo_small = r.eig_min;
            if (n == n_max) lo_large = r.eig_min;
            rep.rows.push_back(r);
        }
        const bool critical = std::abs(T - rep.T0) <= 1e-6 * rep.T0;
        if (T > rep.T0 && !critical) {
            any_above = true;
            min_above = std::min(min_above, lo_large);
            if (!(lo_large > 0.0) || lo_large < 0.5 * lo_small) rep.stable_above = false;
        } else if (T < rep.T0 && !critical) {
            any_below = true;
            max_below = std::max(max_below, lo_large);
        }
        if (T >= rep.T0 && !D.empty()) {
            const double D_mid = D[static_cast<std::size_t>(n_max / 2 - 1 < 0 ? 0 : n_max / 2 - 1)];
            if (D.back() - D_mid > D_mid) rep.deficiency_bounded = false;
        }
    }
    rep.stable_above = rep.stable_above && any_above;
    rep.collapse_below = any_below && any_above && max_below < 1e-2 * min_above;
    return rep;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_control_csv(const ControlSignal& c, const std::filesystem::path& control_path,
                              const std::filesystem::path& residual_path) {
    csv::Writer w(control_path);
    w.header({"t", "f"});
    for (std::size_t i = 0; i < c.f.size(); ++i) w.row({c.f.grid()[i], c.f[i]});
    csv::Writer r(residual_path);
    r.header({"n", "W_n", "c_n"});
    for (std::size_t n = 0; n < c.targets.size(); ++n) r.row(static_cast<int>(n + 1), {c.targets[n], c.coefficients[n]});
}

inline void write_diagnostics_csv(const DiagnosticsReport& rep, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.header({"T", "n_modes", "eig_min", "eig_max", "cond", "D_N"});
    for (const auto& r : rep.rows) w.row({r.T, static_cast<double>(r.n_modes), r.eig_min, r.eig_max, r.cond, r.D_N});
}

}  // namespace vstring
