#pragma once

// Kernel equations of the modal problem and the change of variables that turns
// them into perturbed harmonic oscillators.
//
//   z_n'(t) = -lambda^2 Q(t) int_0^t N(t-s) z_n(s) ds,   z_n(0) = 1,   Q(t) = P(T-t)
//
// With H(t) = -M0 t - log Q(t), a = e^{H/2} Q^{-1/4} and x = L(t) = int_0^t sqrt(Q),
// z_n(t) = e^{-H(t)} a(t) Y_n(L(t)) where
//
//   Y'' + (lambda^2 + V(x)) Y = -lambda^2 int_0^x A(x,r) Y(r) dr,
//   A(x,r) = e^{-M0 (t-s)/2} (Q(t) Q(s))^{-1/4} [M(t-s) - M0 N(t-s)],  t = tau(x), s = tau(r),
//
// tau being the inverse of L and M0 = N'(0) = M(0). A vanishes on the diagonal.
//
// All solvers use second-order trapezoidal stepping whose error expands in even
// powers of h; Richardson extrapolation over nested grids lifts the accuracy.

#include <Eigen/Dense>

#include "vstring/material.hpp"
#include "vstring/spectral.hpp"

namespace vstring {

struct VolterraOptions {
    int levels = 4;    // Richardson levels for z_n: grids h, h/2, ..., h/2^(levels-1)
    int y_levels = 3;  // Richardson levels for Y_n
};

// ---------------------------------------------------------------------------
// kernel sampling

/// N at the nodes of `grid` (which must start at 0). An analytic M is
/// integrated panel by panel with Gauss-Legendre; sampled M falls back to the
/// cubic interpolant of the stored primitive.
inline std::vector<double> sample_N(const MemoryKernel& k, const Grid1D& grid) {
    std::vector<double> out(grid.size());
    if (k.M.expression()) {
        out[0] = 1.0;
        const Expression& M = *k.M.expression();
        for (std::size_t i = 1; i < grid.size(); ++i) out[i] = out[i - 1] + gauss_legendre(M, grid[i - 1], grid[i]);
    } else {
        for (std::size_t i = 0; i < grid.size(); ++i) out[i] = k.N(grid[i]);
        out[0] = 1.0;
    }
    return out;
}

inline std::vector<double> sample_M(const MemoryKernel& k, const Grid1D& grid) {
    std::vector<double> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = k.M(grid[i]);
    return out;
}

inline void require_horizon(const MaterialConfig& cfg, double T) {
    if (!(T > 0.0)) throw InputError("horizon T must be positive");
    if (T > cfg.time_grid.end() * (1.0 + 1e-12))
        throw InputError("horizon T = " + std::to_string(T) + " exceeds time_grid.t_max = " +
                         std::to_string(cfg.time_grid.end()));
}

// ---------------------------------------------------------------------------
// generic convolution Volterra stepper

/// Integrates y' = -k(t) v(t) + F(t), v(t) = int_0^t N(t-s) m(s) y(s) ds,
/// y(0) = y0, by the implicit trapezoidal rule with trapezoidal product
/// quadrature for v. All inputs are sampled on one uniform grid of step h.
/// Returns (y, v).
inline std::pair<std::vector<double>, std::vector<double>> volterra_trapezoid(double y0, std::span<const double> k,
                                                                              std::span<const double> m,
                                                                              std::span<const double> F,
                                                                              std::span<const double> Nk, double h) {
    const std::size_t n = Nk.size();
    std::vector<double> y(n), v(n, 0.0), u(n);
    std::vector<double> rev(Nk.rbegin(), Nk.rend());  // rev[n-1-d] = N(d h)
    y[0] = y0;
    u[0] = m[0] * y0;
    double G_prev = F[0];
    for (std::size_t i = 1; i < n; ++i) {
        // sum_{j<i} N((i-j)h) u_j with trapezoid weight 1/2 at j = 0
        const double hist = h * (dot(&rev[n - 1 - i], u.data(), i) - 0.5 * Nk[i] * u[0]);
        const double rhs = y[i - 1] + 0.5 * h * G_prev + 0.5 * h * (-k[i] * hist + F[i]);
        y[i] = rhs / (1.0 + 0.25 * h * h * k[i] * Nk[0] * m[i]);
        u[i] = m[i] * y[i];
        v[i] = hist + 0.5 * h * Nk[0] * u[i];
        G_prev = -k[i] * v[i] + F[i];
    }
    return {std::move(y), std::move(v)};
}

/// Second-kind equation eta(t) + int_0^t K(t-s) eta(s) ds = r(t), trapezoidal
/// product rule, forward substitution.
inline std::vector<double> volterra_second_kind(std::span<const double> r, std::span<const double> Kk, double h) {
    const std::size_t n = r.size();
    std::vector<double> eta(n);
    std::vector<double> rev(Kk.rbegin(), Kk.rend());
    eta[0] = r[0];
    for (std::size_t i = 1; i < n; ++i) {
        const double hist = h * (dot(&rev[n - 1 - i], eta.data(), i) - 0.5 * Kk[i] * eta[0]);
        eta[i] = (r[i] - hist) / (1.0 + 0.5 * h * Kk[0]);
    }
    return eta;
}

// ---------------------------------------------------------------------------
// z_n

struct KernelSolution {
    int mode = 0;
    double lambda = 0.0;
    double T = 0.0;
    SampledFunction z;  // z_n(t; T) on [0, T]
    SampledFunction u;  // int_0^t N(t-s) z_n(s) ds
    double gronwall_bound = 0.0;
};

namespace detail {

inline std::vector<double> sample_Q(const TractionProfile& P, double T, const Grid1D& g) {
    std::vector<double> q(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) q[i] = P(std::max(0.0, T - g[i]));
    return q;
}

inline void check_stability(std::span<const double> y, double bound, const char* what) {
    for (double v : y)
        if (!std::isfinite(v) || (std::isfinite(bound) && std::abs(v) > bound * (1.0 + 1e-6)))
            throw NumericError(std::string(what) + ": step-size instability (solution exceeds the a-priori bound); "
                               "use a finer time grid");
}

}  // namespace detail

inline KernelSolution solve_zn(double lambda, const MaterialConfig& cfg, double T, const Grid1D& grid,
                               const VolterraOptions& opt = {}, int mode = 0) {
    if (!(lambda >= 0.0)) throw InputError("lambda must be non-negative");
    require_horizon(cfg, T);
    if (grid.start() != 0.0 || std::abs(grid.end() - T) > 1e-12 * T) throw InputError("z_n grid must span [0, T]");

    const double l2 = lambda * lambda;
    double qmax = 0.0;
    for (double q : detail::sample_Q(cfg.traction, T, grid)) qmax = std::max(qmax, q);
    const double nmax = max_abs(sample_N(cfg.kernel, grid));
    const double bound = std::exp(l2 * qmax * nmax * T * T / 2.0);

    auto channels = richardson(grid, opt.levels, [&](const Grid1D& g) {
        auto Q = detail::sample_Q(cfg.traction, T, g);
        for (double& q : Q) q *= l2;
        const std::vector<double> ones(g.size(), 1.0), zeros(g.size(), 0.0);
        auto [z, v] = volterra_trapezoid(1.0, Q, ones, zeros, sample_N(cfg.kernel, g), g.step());
        detail::check_stability(z, bound, "solve_zn");
        return std::vector<std::vector<double>>{std::move(z), std::move(v)};
    });
    KernelSolution s;
    s.mode = mode;
    s.lambda = lambda;
    s.T = T;
    channels[0][0] = 1.0;
    channels[1][0] = 0.0;
    s.z = SampledFunction(grid, std::move(channels[0]));
    s.u = SampledFunction(grid, std::move(channels[1]));
    s.gronwall_bound = bound;
    return s;
}

/// max_i |z'(t_i) + lambda^2 Q(t_i) u(t_i)| / max_i |lambda^2 Q u|, with z' from
/// fourth-order differences (one-sided near the ends).
inline double zn_residual(const KernelSolution& s, const TractionProfile& P) {
    const auto& g = s.z.grid();
    const auto& z = s.z.values();
    const std::size_t n = z.size();
    if (n < 5) return 0.0;
    const double h = g.step();
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d;
        if (i >= 2 && i + 2 < n) d = (z[i - 2] - 8 * z[i - 1] + 8 * z[i + 1] - z[i + 2]) / (12 * h);
        else if (i < 2) d = (-25 * z[i] + 48 * z[i + 1] - 36 * z[i + 2] + 16 * z[i + 3] - 3 * z[i + 4]) / (12 * h);
        else d = (25 * z[i] - 48 * z[i - 1] + 36 * z[i - 2] - 16 * z[i - 3] + 3 * z[i - 4]) / (12 * h);
        const double f = s.lambda * s.lambda * P(std::max(0.0, s.T - g[i])) * s.u[i];
        worst = std::max(worst, std::abs(d + f));
        scale = std::max(scale, std::abs(f));
    }
    return scale > 0.0 ? worst / scale : worst;
}

// ---------------------------------------------------------------------------
// transformation chain

/// Packed lower triangle 0 <= j <= i < n of a kernel sampled on one grid.
class TriangularKernel {
public:
    TriangularKernel() = default;
    explicit TriangularKernel(Grid1D grid) : grid_(grid), data_(grid.size() * (grid.size() + 1) / 2, 0.0) {}
    const Grid1D& grid() const { return grid_; }
    std::size_t size() const { return grid_.size(); }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * (i + 1) / 2 + j]; }
    double& at(std::size_t i, std::size_t j) { return data_[i * (i + 1) / 2 + j]; }
    const double* row(std::size_t i) const { return data_.data() + i * (i + 1) / 2; }
    double max_abs() const { return vstring::max_abs(data_); }

private:
    Grid1D grid_;
    std::vector<double> data_;
};

struct TransformChain {
    double T = 0.0;
    double M0 = 0.0;     // N'(0)
    double S = 0.0;      // L(T)
    double y0 = 0.0;     // P(T)^{-1/4}
    double y1 = 0.0;     // (1/4) P(T)^{-7/4} (P'(T) - 2 M0 P(T))
    SampledFunction H, a, L;  // on the t grid [0, T]
    SampledFunction Minv, V;  // on the x grid [0, S]
    TriangularKernel A_kernel;  // A(x_i, x_j), j <= i, on the x grid
    bool exact_derivatives = true;  // traction derivatives from an expression

    // inputs, kept for on-the-fly evaluation on refined grids
    TractionProfile traction;
    MemoryKernel kernel;
    std::vector<double> t_nodes;  // L table knots for the inverse
    std::vector<double> L_nodes;

    double Q(double t) const { return traction(std::max(0.0, T - t)); }
    double dQ(double t) const { return -traction.derivative(std::max(0.0, T - t), 1); }
    double d2Q(double t) const { return traction.derivative(std::max(0.0, T - t), 2); }

    /// L(t) = int_0^t sqrt(Q).
    double L_at(double t) const {
        t = std::clamp(t, 0.0, T);
        const double h = T / static_cast<double>(t_nodes.size() - 1);
        auto i = std::min<std::size_t>(static_cast<std::size_t>(t / h), t_nodes.size() - 2);
        return L_nodes[i] + gauss_legendre([&](double s) { return std::sqrt(Q(s)); }, t_nodes[i], t);
    }

    /// Inverse of L on [0, S]: bracketing from the L table, then Newton with L' = sqrt(Q).
    double tau(double x) const {
        if (x <= 0.0) return 0.0;
        if (x >= S) return T;
        auto it = std::upper_bound(L_nodes.begin(), L_nodes.end(), x);
        const std::size_t i = static_cast<std::size_t>(std::distance(L_nodes.begin(), it)) - 1;
        double lo = t_nodes[i], hi = t_nodes[std::min(i + 1, t_nodes.size() - 1)];
        double t = lo + (x - L_nodes[i]) / std::sqrt(Q(lo));
        for (int it2 = 0; it2 < 50; ++it2) {
            t = std::clamp(t, lo, hi);
            const double f = L_nodes[i] + gauss_legendre([&](double s) { return std::sqrt(Q(s)); }, lo, t) - x;
            const double step = f / std::sqrt(Q(t));
            t -= step;
            if (std::abs(step) <= 1e-15 * std::max(1.0, T)) break;
        }
        return std::clamp(t, lo, hi);
    }

    /// V~(t) = Q^{-1} [q''/4 - (M0/2 + q'/4)(M0/2 + 3q'/4)],  q = log Q.
    double V_tilde(double t) const {
        const double q = Q(t), q1 = dQ(t) / q, q2 = d2Q(t) / q - q1 * q1;
        return (0.25 * q2 - (0.5 * M0 + 0.25 * q1) * (0.5 * M0 + 0.75 * q1)) / q;
    }

    /// e^{-M0 d/2} [M(d) - M0 N(d)]; the part of A that depends on t - s only.
    double memory_factor(double d, double N_d) const { return std::exp(-0.5 * M0 * d) * (kernel.M(d) - M0 * N_d); }

    /// z = e^{-H} a Y(L) = e^{M0 t/2} Q^{1/4} Y(L).
    double z_scale(double t) const { return std::exp(0.5 * M0 * t) * std::pow(Q(t), 0.25); }
};

/// Builds H, a, L on `t_grid` (spanning [0, T]) and tau, V, A on an x grid with
/// the same number of nodes spanning [0, S].
inline TransformChain build_transform_chain(const MaterialConfig& cfg, double T, std::size_t n_nodes = 0,
                                            bool with_A = true) {
    require_horizon(cfg, T);
    if (n_nodes == 0) n_nodes = cfg.time_grid.size();
    TransformChain c;
    c.T = T;
    c.traction = cfg.traction;
    c.kernel = cfg.kernel;
    c.M0 = cfg.kernel.Nprime0;
    c.exact_derivatives = cfg.traction.P.expression() != nullptr;
    if (!c.exact_derivatives)
        log::warn_once("traction derivatives estimated by finite differences (file-sample provenance)");

    const Grid1D tg(0.0, T, n_nodes);
    c.t_nodes = tg.samples();
    c.L_nodes.assign(n_nodes, 0.0);
    for (std::size_t i = 1; i < n_nodes; ++i)
        c.L_nodes[i] = c.L_nodes[i - 1] + gauss_legendre([&](double s) { return std::sqrt(c.Q(s)); }, tg[i - 1], tg[i]);
    for (std::size_t i = 1; i < n_nodes; ++i)
        if (!(c.L_nodes[i] > c.L_nodes[i - 1])) throw NumericError("non-invertible L: not strictly increasing");
    c.S = c.L_nodes.back();

    std::vector<double> H(n_nodes), a(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) {
        const double q = c.Q(tg[i]);
        H[i] = -c.M0 * tg[i] - std::log(q);
        a[i] = std::exp(0.5 * H[i]) * std::pow(q, -0.25);
    }
    c.H = SampledFunction(tg, std::move(H));
    c.a = SampledFunction(tg, std::move(a));
    c.L = SampledFunction(tg, c.L_nodes);

    const double PT = cfg.traction(T);
    c.y0 = std::pow(PT, -0.25);
    c.y1 = 0.25 * std::pow(PT, -1.75) * (cfg.traction.derivative(T) - 2.0 * c.M0 * PT);
    if (!(c.y0 > 0.0)) throw NumericError("y0 not positive");

    const Grid1D xg(0.0, c.S, n_nodes);
    std::vector<double> tau(n_nodes), V(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) {
        tau[i] = i + 1 == n_nodes ? T : c.tau(xg[i]);
        V[i] = c.V_tilde(tau[i]);
        if (!std::isfinite(V[i])) throw NumericError("derivative-estimation failure: V not finite near t = " +
                                                     std::to_string(tau[i]));
    }
    c.Minv = SampledFunction(xg, tau);
    c.V = SampledFunction(xg, std::move(V));

    if (with_A) {
        c.A_kernel = TriangularKernel(xg);
        std::vector<double> w(n_nodes);
        for (std::size_t i = 0; i < n_nodes; ++i) w[i] = std::pow(c.Q(tau[i]), -0.25);
        parallel_for(n_nodes, [&](std::size_t i) {
            for (std::size_t j = 0; j <= i; ++j) {
                const double d = tau[i] - tau[j];
                c.A_kernel.at(i, j) = w[i] * w[j] * c.memory_factor(d, c.kernel.N(d));
            }
        });
    }
    return c;
}

/// Max over diagonal nodes of |A(x,x)| relative to ||A||_inf, with the diagonal
/// evaluated from the unsimplified brace [H'(t) + Q'(t)/Q(t)] N(0) + M(0), where
/// H' is a fourth-order difference of the tabulated H.
inline double diagonal_defect(const TransformChain& c) {
    const auto& H = c.H.values();
    const std::size_t n = H.size();
    const double h = c.H.grid().step();
    std::vector<double> dH(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i >= 2 && i + 2 < n) dH[i] = (H[i - 2] - 8 * H[i - 1] + 8 * H[i + 1] - H[i + 2]) / (12 * h);
        else if (i < 2) dH[i] = (-25 * H[i] + 48 * H[i + 1] - 36 * H[i + 2] + 16 * H[i + 3] - 3 * H[i + 4]) / (12 * h);
        else dH[i] = (25 * H[i] - 48 * H[i - 1] + 36 * H[i - 2] - 16 * H[i - 3] + 3 * H[i - 4]) / (12 * h);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < c.Minv.size(); ++i) {
        const double t = c.Minv[i];
        const double brace = (interpolate_cubic(c.H.grid(), dH, t) + c.dQ(t) / c.Q(t)) * c.kernel.N[0] + c.kernel.M(0.0);
        worst = std::max(worst, std::abs(std::pow(c.Q(t), -0.5) * brace));
    }
    const double norm = c.A_kernel.max_abs();
    return norm > 0.0 ? worst / norm : worst;
}

// ---------------------------------------------------------------------------
// Y_n

struct TransformedMode {
    int mode = 0;
    double lambda = 0.0;
    SampledFunction Y;    // on [0, S]
    SampledFunction dY;   // Y'
    SampledFunction g_n;  // y0 cos(lambda x) + (y1/lambda) sin(lambda x)
};

namespace detail {

/// Per-level tables for the Y equation on a grid over [0, S].
struct YLevel {
    std::vector<double> V, w;  // V(x_i), Q(tau_i)^{-1/4}
    std::vector<double> tau;
    Grid1D Ktab;               // uniform table of the memory factor in d = t - s
    std::vector<double> K;

    YLevel(const TransformChain& c, const Grid1D& g) {
        const std::size_t n = g.size();
        V.resize(n);
        w.resize(n);
        tau.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            tau[i] = i + 1 == n ? c.T : c.tau(g[i]);
            V[i] = c.V_tilde(tau[i]);
            w[i] = std::pow(c.Q(tau[i]), -0.25);
        }
        Ktab = Grid1D(0.0, c.T, 4 * (n - 1) + 1);
        auto N = sample_N(c.kernel, Ktab);
        K.resize(Ktab.size());
        for (std::size_t i = 0; i < K.size(); ++i) K[i] = c.memory_factor(Ktab[i], N[i]);
    }

    double K_at(double d) const { return interpolate_cubic(Ktab, K, d); }
};

}  // namespace detail

/// Solves the Y equation for several lambdas at once on `grid_x` (spanning
/// [0, S]). The kernel row A(x_i, .) is formed once per step and shared by all
/// modes. Returns Y and Y' per mode, Richardson-extrapolated.
inline std::vector<TransformedMode> solve_Yn_batch(std::span<const double> lambdas, const TransformChain& c,
                                                   const Grid1D& grid_x, const VolterraOptions& opt = {},
                                                   int first_mode = 1) {
    if (grid_x.start() != 0.0 || std::abs(grid_x.end() - c.S) > 1e-12 * c.S)
        throw InputError("Y_n grid must span [0, S]");
    const std::size_t nm = lambdas.size();
    auto channels = richardson(grid_x, opt.y_levels, [&](const Grid1D& g) {
        const detail::YLevel lv(c, g);
        const std::size_t n = g.size();
        const double h = g.step();
        std::vector<std::vector<double>> Y(nm, std::vector<double>(n)), P(nm, std::vector<double>(n));
        std::vector<std::vector<double>> wY(nm, std::vector<double>(n));  // w_j Y_j
        std::vector<double> F_prev(nm), row(n);
        for (std::size_t m = 0; m < nm; ++m) {
            const double l2 = lambdas[m] * lambdas[m];
            Y[m][0] = c.y0;
            P[m][0] = c.y1;
            wY[m][0] = lv.w[0] * c.y0;
            F_prev[m] = -(l2 + lv.V[0]) * c.y0;
        }
        for (std::size_t i = 1; i < n; ++i) {
            for (std::size_t j = 0; j < i; ++j) row[j] = lv.K_at(lv.tau[i] - lv.tau[j]);
            row[0] *= 0.5;
            for (std::size_t m = 0; m < nm; ++m) {
                const double l2 = lambdas[m] * lambdas[m];
                const double J = h * lv.w[i] * dot(row.data(), wY[m].data(), i);
                const double r = -l2 * J;
                const double k = l2 + lv.V[i];
                const double y = (Y[m][i - 1] + h * P[m][i - 1] + 0.25 * h * h * (F_prev[m] + r)) / (1.0 + 0.25 * h * h * k);
                const double F = -k * y + r;
                P[m][i] = P[m][i - 1] + 0.5 * h * (F_prev[m] + F);
                Y[m][i] = y;
                wY[m][i] = lv.w[i] * y;
                F_prev[m] = F;
            }
        }
        std::vector<std::vector<double>> out;
        for (std::size_t m = 0; m < nm; ++m) {
            detail::check_stability(Y[m], std::numeric_limits<double>::infinity(), "solve_Yn");
            out.push_back(std::move(Y[m]));
            out.push_back(std::move(P[m]));
        }
        return out;
    });
    std::vector<TransformedMode> modes(nm);
    for (std::size_t m = 0; m < nm; ++m) {
        auto& tm = modes[m];
        tm.mode = first_mode + static_cast<int>(m);
        tm.lambda = lambdas[m];
        channels[2 * m][0] = c.y0;
        channels[2 * m + 1][0] = c.y1;
        tm.Y = SampledFunction(grid_x, std::move(channels[2 * m]));
        tm.dY = SampledFunction(grid_x, std::move(channels[2 * m + 1]));
        const double l = lambdas[m];
        tm.g_n = SampledFunction::tabulate(grid_x, [&](double x) {
            return c.y0 * std::cos(l * x) + (l > 0.0 ? c.y1 / l * std::sin(l * x) : c.y1 * x);
        });
    }
    return modes;
}

inline TransformedMode solve_Yn(double lambda, const TransformChain& c, const Grid1D& grid_x,
                                const VolterraOptions& opt = {}, int mode = 0) {
    const double l[1] = {lambda};
    auto out = solve_Yn_batch(l, c, grid_x, opt, mode);
    return std::move(out[0]);
}

/// max_t |z(t) - e^{-H(t)} a(t) Y(L(t))| / max |z| over the nodes of z.
inline double chain_identity_defect(const KernelSolution& z, const TransformedMode& Y, const TransformChain& c) {
    double worst = 0.0;
    const auto& g = z.z.grid();
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double t = g[i];
        const double rec = c.z_scale(t) * Y.Y(c.L_at(t));
        worst = std::max(worst, std::abs(z.z[i] - rec));
    }
    return worst / max_abs(z.z.values());
}

// ---------------------------------------------------------------------------
// C, B and Z_n

struct CBKernels {
    TriangularKernel C, B;
    std::vector<double> C_diag;  // C(x, x) = e^{M0 t/2} Q(t)^{-1/4}
};

/// C(x,s) = N(tau x - tau s) e^{M0 tau s/2} Q(tau s)^{-1/4};  B = C / C(x,x).
inline CBKernels build_C_and_B(const TransformChain& c, const MemoryKernel& kernel) {
    const Grid1D& xg = c.Minv.grid();
    const std::size_t n = xg.size();
    CBKernels k{TriangularKernel(xg), TriangularKernel(xg), std::vector<double>(n)};
    std::vector<double> back(n);
    for (std::size_t j = 0; j < n; ++j) back[j] = std::exp(0.5 * c.M0 * c.Minv[j]) * std::pow(c.Q(c.Minv[j]), -0.25);
    k.C_diag = back;
    for (double d : k.C_diag)
        if (!(d > 0.0)) throw NumericError("C(x,x) not positive");
    parallel_for(n, [&](std::size_t i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double Cij = i == j ? back[j] : kernel.N(c.Minv[i] - c.Minv[j]) * back[j];
            k.C.at(i, j) = Cij;
            k.B.at(i, j) = i == j ? 1.0 : Cij / back[i];
        }
    });
    return k;
}

/// Z_n(x_i) = phi_n'(0) * trapezoid over [0, x_i] of B(x_i, .) Y_n.
inline SampledFunction compute_Zn(double slope0, const TransformedMode& Y, const TriangularKernel& B) {
    const Grid1D& g = B.grid();
    if (!(Y.Y.grid() == g)) throw InputError("compute_Zn: Y_n and B on different grids");
    const double h = g.step();
    std::vector<double> Z(g.size(), 0.0);
    const auto& y = Y.Y.values();
    for (std::size_t i = 1; i < g.size(); ++i) {
        const double* row = B.row(i);
        Z[i] = slope0 * h * (dot(row, y.data(), i + 1) - 0.5 * (row[0] * y[0] + row[i] * y[i]));
    }
    return SampledFunction(g, std::move(Z));
}

// ---------------------------------------------------------------------------
// estimate checks

struct EstimateFit {
    std::vector<double> scaled;  // n * ||residual_n||_inf
    double max = 0.0;
    double median = 0.0;
    double growth_exponent = 0.0;  // least-squares slope of log scaled vs log n
    bool bounded = false;          // max <= 2 median

    static EstimateFit from(std::vector<double> scaled) {
        EstimateFit f;
        f.scaled = std::move(scaled);
        f.max = vstring::max_abs(f.scaled);
        f.median = vstring::median(f.scaled);
        f.growth_exponent = loglog_slope(f.scaled, 0);
        f.bounded = f.max <= 2.0 * f.median + 1e-12;
        return f;
    }
};

/// n ||Y_n - y0 cos(lambda_n x)||_inf for each mode (mode numbers are 1-based).
inline EstimateFit check_Y_estimate(const std::vector<TransformedMode>& modes, const TransformChain& c) {
    std::vector<double> s;
    for (const auto& m : modes) {
        double worst = 0.0;
        const auto& g = m.Y.grid();
        for (std::size_t i = 0; i < g.size(); ++i)
            worst = std::max(worst, std::abs(m.Y[i] - c.y0 * std::cos(m.lambda * g[i])));
        s.push_back(m.mode * worst);
    }
    return EstimateFit::from(std::move(s));
}

/// n ||Z_n - y0 sqrt(2/pi) sin(n x)||_inf for each mode.
inline EstimateFit check_Z_estimate(const std::vector<SampledFunction>& Z, std::span<const int> mode_numbers,
                                    const TransformChain& c) {
    std::vector<double> s;
    const double amp = c.y0 * std::sqrt(2.0 / kPi);
    for (std::size_t k = 0; k < Z.size(); ++k) {
        const int n = mode_numbers[k];
        double worst = 0.0;
        const auto& g = Z[k].grid();
        for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(Z[k][i] - amp * std::sin(n * g[i])));
        s.push_back(n * worst);
    }
    return EstimateFit::from(std::move(s));
}

// ---------------------------------------------------------------------------
// CSV dumps

inline void write_zn_csv(const KernelSolution& s, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.header({"t", "z_n"});
    for (std::size_t i = 0; i < s.z.size(); ++i) w.row({s.z.grid()[i], s.z[i]});
}

inline void write_mode_csv(const TransformedMode& m, const SampledFunction& Z, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.header({"x", "Y_n", "Z_n"});
    for (std::size_t i = 0; i < m.Y.size(); ++i) w.row({m.Y.grid()[i], m.Y[i], Z[i]});
}

inline void write_chain_csv(const TransformChain& c, const std::filesystem::path& t_path,
                            const std::filesystem::path& x_path) {
    csv::Writer wt(t_path);
    wt.header({"t", "H", "a", "L"});
    for (std::size_t i = 0; i < c.H.size(); ++i) wt.row({c.H.grid()[i], c.H[i], c.a[i], c.L[i]});
    csv::Writer wx(x_path);
    wx.header({"x", "Minv", "V"});
    for (std::size_t i = 0; i < c.V.size(); ++i) wx.row({c.V.grid()[i], c.Minv[i], c.V[i]});
}

}  // namespace vstring
