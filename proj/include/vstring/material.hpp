#pragma once

// Physical data of the string: traction P(t), inverse density c(xi), memory
// kernel M(t) with its primitive N(t) = 1 + int_0^t M, and the grids that the
// rest of the library runs on. All types are immutable after construction.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vstring/common.hpp"
#include "vstring/expression.hpp"

namespace vstring {

enum class Provenance { AnalyticExpression, FileSamples };

inline const char* to_string(Provenance p) {
    return p == Provenance::AnalyticExpression ? "analytic-expression" : "file-samples";
}

/// Nodal samples of a scalar function on a uniform grid.
///
/// Values always come from the samples, except when the function was built
/// from an expression: then point evaluation and derivatives use the exact
/// expression and the samples serve as the stored node data. Derivatives of
/// file samples are centred differences (one-sided at the ends) interpolated
/// with the same cubic rule as the values.
class SampledFunction {
public:
    SampledFunction() = default;

    SampledFunction(Grid1D grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
        if (values_.size() != grid_.size())
            throw InputError("sample count " + std::to_string(values_.size()) + " does not match grid size " +
                             std::to_string(grid_.size()));
        for (double v : values_)
            if (!std::isfinite(v)) throw InputError("non-finite sample value");
    }

    static SampledFunction from_expression(const Expression& e, const Grid1D& grid) {
        std::vector<double> v(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) v[i] = e(grid[i]);
        SampledFunction f(grid, std::move(v));
        f.expr_ = std::make_shared<std::array<Expression, 3>>(
            std::array<Expression, 3>{e, e.derivative(), e.derivative().derivative()});
        return f;
    }

    template <class F>
    static SampledFunction tabulate(const Grid1D& grid, F&& f) {
        std::vector<double> v(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) v[i] = f(grid[i]);
        return SampledFunction(grid, std::move(v));
    }

    const Grid1D& grid() const { return grid_; }
    const std::vector<double>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    Provenance provenance() const { return expr_ ? Provenance::AnalyticExpression : Provenance::FileSamples; }
    const Expression* expression() const { return expr_ ? &(*expr_)[0] : nullptr; }

    double operator()(double x) const {
        if (expr_) return (*expr_)[0](x);
        return interpolate_cubic(grid_, values_, x);
    }

    /// Derivative of order 1 or 2 at x.
    double derivative(double x, int order = 1) const {
        if (order < 1 || order > 2) throw std::invalid_argument("derivative order must be 1 or 2");
        if (expr_) return (*expr_)[order](x);
        ensure_fd();
        return interpolate_cubic(grid_, order == 1 ? fd_->first : fd_->second, x);
    }

    bool covers(double x) const { return x >= grid_.start() - 1e-12 && x <= grid_.end() + 1e-12; }

private:
    struct FdCache {
        std::once_flag once;
        std::vector<double> first, second;
    };

    void ensure_fd() const {
        std::call_once(fd_->once, [this] {
            fd_->first = differentiate(grid_, values_);
            fd_->second = differentiate(grid_, fd_->first);
        });
    }

    Grid1D grid_;
    std::vector<double> values_;
    std::shared_ptr<const std::array<Expression, 3>> expr_;
    // finite-difference derivatives, built on first use and shared by copies
    std::shared_ptr<FdCache> fd_ = std::make_shared<FdCache>();
};

// ---------------------------------------------------------------------------

struct TractionProfile {
    SampledFunction P;
    double p0 = 0.0;

    double operator()(double t) const {
        if (!P.covers(t))
            log::warn_once("traction queried outside its sampled range [0, " + std::to_string(P.grid().end()) +
                           "]; extending constantly");
        if (P.expression() && t > P.grid().end()) return P(P.grid().end());
        return P(t);
    }
    double derivative(double t, int order = 1) const {
        if (t > P.grid().end()) return 0.0;
        return P.derivative(t, order);
    }
};

struct DensityProfile {
    SampledFunction c;
    double c0 = 0.0;

    double operator()(double xi) const { return c(xi); }
    bool is_constant() const {
        if (auto* e = c.expression()) return e->is_constant();
        const auto& v = c.values();
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    }
    /// Travel-time integral int_0^pi c^{-1/2}.
    double travel_integral() const {
        return integrate([&](double x) { return 1.0 / std::sqrt(c(x)); }, 0.0, kPi, 0.01);
    }
};

/// Primitive N(t) = 1 + int_0^t M at the nodes of M's grid: composite trapezoid
/// with the Euler-Maclaurin end correction -h^2/12 (M'(t_i) - M'(0)).
inline SampledFunction primitive_N(const SampledFunction& M) {
    const Grid1D& g = M.grid();
    if (g.start() != 0.0) throw InputError("memory kernel grid must start at 0");
    const double h = g.step();
    const auto trap = cumulative_trapezoid(M.values(), h);
    const double d0 = M.derivative(0.0);
    std::vector<double> N(g.size());
    N[0] = 1.0;
    for (std::size_t i = 1; i < g.size(); ++i) N[i] = 1.0 + trap[i] - h * h / 12.0 * (M.derivative(g[i]) - d0);
    return SampledFunction(g, std::move(N));
}

struct MemoryKernel {
    SampledFunction M;       // N'
    SampledFunction N;       // 1 + int M
    SampledFunction Nprime;  // same data as M, kept for readability at call sites
    double Nprime0 = 0.0;    // N'(0) = M(0)

    static MemoryKernel from_M(SampledFunction M) {
        MemoryKernel k;
        k.N = primitive_N(M);
        k.Nprime = M;
        k.Nprime0 = M(0.0);
        k.M = std::move(M);
        return k;
    }

    double kernel_M(double t) const { return M(t); }
    double kernel_N(double t) const { return N(t); }
    bool is_zero() const { return max_abs(M.values()) == 0.0; }
};

struct MaterialConfig {
    TractionProfile traction;
    DensityProfile density;
    MemoryKernel kernel;
    Grid1D space_grid;
    Grid1D time_grid;
    int n_modes = 1;
    std::uint64_t seed = 0;
    nlohmann::json source;  // the resolved document, for hashing and save_config

    double horizon() const { return time_grid.end(); }
};

// ---------------------------------------------------------------------------
// validation

struct Tolerances {
    double quad = 1e-6;
    double volterra = 1e-6;
    /// Cap on |P''| estimated from second differences; P must be C^2.
    double max_second_derivative = 1e6;
};

inline void validate_traction(const TractionProfile& tr, const Tolerances& tol = {}) {
    const auto& v = tr.P.values();
    double pmin = *std::min_element(v.begin(), v.end());
    if (!(pmin > 0.0)) throw InputError("traction not strictly positive (min P = " + std::to_string(pmin) + ")");
    if (!(tr.p0 > 0.0)) throw InputError("traction lower bound p0 must be positive");
    if (pmin < tr.p0) throw InputError("P not bounded below by p0");
    // A C2 profile has second differences that converge under refinement; a kink
    // makes them scale like 1/h and a jump like 1/h^2. Compare step h against 2h.
    const double h = tr.P.grid().step();
    auto max_second_difference = [&](std::size_t stride) {
        double m = 0.0;
        std::size_t arg = 0;
        const double hs = h * static_cast<double>(stride);
        for (std::size_t i = stride; i + stride < v.size(); ++i) {
            const double d2 = std::abs(v[i + stride] - 2.0 * v[i] + v[i - stride]) / (hs * hs);
            if (!(d2 <= m)) {
                m = d2;
                arg = i;
            }
        }
        return std::pair{m, arg};
    };
    const auto [fine, where] = max_second_difference(1);
    const double coarse = v.size() >= 5 ? max_second_difference(2).first : fine;
    const double floor = 1e-6 * (1.0 + max_abs(v));
    if (!(fine <= tol.max_second_derivative) || fine > 1.5 * coarse + floor)
        throw InputError("traction not C2: second differences unbounded near t = " +
                         std::to_string(tr.P.grid()[where]));
}

inline void validate_density(const DensityProfile& d) {
    const auto& v = d.c.values();
    double cmin = *std::min_element(v.begin(), v.end());
    if (!(cmin > 0.0)) throw InputError("density not strictly positive (min c = " + std::to_string(cmin) + ")");
    if (!(d.c0 > 0.0)) throw InputError("density lower bound c0 must be positive");
    if (cmin < d.c0) throw InputError("c not bounded below by c0");
    if (std::abs(d.c.grid().start()) > 1e-12 || std::abs(d.c.grid().end() - kPi) > 1e-12)
        throw InputError("density must be sampled on [0, pi]");
}

inline void validate_kernel(const MemoryKernel& k, const Tolerances& tol = {}) {
    if (k.N[0] != 1.0) throw InputError("kernel primitive violates N(0) = 1");
    const Grid1D& g = k.M.grid();
    const double h = g.step();
    const auto trap = cumulative_trapezoid(k.M.values(), h);
    const double d0 = k.M.derivative(0.0);
    double scale = 1.0 + max_abs(k.N.values());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double q = trap[i] - h * h / 12.0 * (k.M.derivative(g[i]) - d0);
        if (std::abs(k.N[i] - 1.0 - q) > tol.quad * scale)
            throw InputError("kernel primitive inconsistent with M at t = " + std::to_string(g[i]));
        if (!std::isfinite(k.M.derivative(g[i])) || !std::isfinite(k.M.derivative(g[i], 2)))
            throw InputError("memory kernel derivatives not finite (kernel must be W^{2,2})");
    }
}

// ---------------------------------------------------------------------------
// config I/O
//
// {
//   "traction":   {"kind": "expr", "expr": "1 + 0.3*sin(t)"}  |  {"kind": "samples", "values": [...], "t_max": 10},
//   "density":    {"kind": "expr", "expr": "1"}               |  {"kind": "samples", "values": [...]},
//   "memory":     {"kind": "expr", "expr": "-0.5*exp(-0.5*t)"} |  {"kind": "samples", "values": [...], "t_max": 10},
//   "space_grid": {"n": 801},
//   "time_grid":  {"n": 2001, "t_max": 10},
//   "n_modes": 16,
//   "seed": 1
// }
//
// Profiles accept an optional lower bound ("p0" for traction, "c0" for
// density); when absent the sampled minimum is used. Density samples span
// [0, pi]; time samples span [0, t_max] of the profile (default: the time grid's).

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw InputError("missing key '" + std::string(key) + "' in " + where);
    return j.at(key);
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw InputError("unknown key '" + it.key() + "' in " + where);
    }
}

inline double as_real(const nlohmann::json& j, const std::string& where) {
    if (!j.is_number()) throw InputError(where + " must be a number");
    double v = j.get<double>();
    if (!std::isfinite(v)) throw InputError(where + " must be finite");
    return v;
}

inline std::int64_t as_int(const nlohmann::json& j, const std::string& where) {
    if (!j.is_number_integer()) throw InputError(where + " must be an integer");
    return j.get<std::int64_t>();
}

inline SampledFunction parse_profile(const nlohmann::json& j, const std::string& where, const char* variable,
                                     double start, double default_end, const Grid1D& expr_grid,
                                     std::initializer_list<const char*> extra) {
    if (!j.is_object()) throw InputError(where + " must be an object");
    const auto& kind = require(j, "kind", where);
    if (!kind.is_string()) throw InputError(where + ".kind must be a string");
    const std::string k = kind.get<std::string>();
    std::vector<const char*> allowed{"kind"};
    allowed.insert(allowed.end(), extra.begin(), extra.end());
    if (k == "expr") {
        allowed.push_back("expr");
        for (auto it = j.begin(); it != j.end(); ++it)
            if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; }) ==
                allowed.end())
                throw InputError("unknown key '" + it.key() + "' in " + where);
        const auto& e = require(j, "expr", where);
        if (!e.is_string()) throw InputError(where + ".expr must be a string");
        auto expr = Expression::parse(e.get<std::string>(), variable);
        auto f = SampledFunction::from_expression(expr, expr_grid);
        return f;
    }
    if (k == "samples") {
        allowed.push_back("values");
        allowed.push_back("t_max");
        for (auto it = j.begin(); it != j.end(); ++it)
            if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; }) ==
                allowed.end())
                throw InputError("unknown key '" + it.key() + "' in " + where);
        const auto& vals = require(j, "values", where);
        if (!vals.is_array()) throw InputError(where + ".values must be an array");
        std::vector<double> v;
        v.reserve(vals.size());
        for (const auto& x : vals) v.push_back(as_real(x, where + ".values[]"));
        if (v.size() < 2) throw InputError(where + ".values needs at least 2 samples");
        double end = default_end;
        if (j.contains("t_max")) end = as_real(j.at("t_max"), where + ".t_max");
        const Grid1D grid(start, end, v.size());
        return SampledFunction(grid, std::move(v));
    }
    throw InputError(where + ".kind must be \"expr\" or \"samples\"");
}

}  // namespace detail

inline MaterialConfig parse_config(const nlohmann::json& j, const Tolerances& tol = {}) {
    using namespace detail;
    if (!j.is_object()) throw InputError("config must be a JSON object");
    reject_unknown(j, {"traction", "density", "memory", "space_grid", "time_grid", "n_modes", "seed"}, "config");

    const auto& tg = require(j, "time_grid", "config");
    reject_unknown(tg, {"n", "t_max"}, "time_grid");
    const auto tn = as_int(require(tg, "n", "time_grid"), "time_grid.n");
    const double t_max = as_real(require(tg, "t_max", "time_grid"), "time_grid.t_max");
    if (tn < 2) throw InputError("time_grid.n must be >= 2");
    if (!(t_max > 0.0)) throw InputError("time_grid.t_max must be positive");

    const auto& sg = require(j, "space_grid", "config");
    reject_unknown(sg, {"n"}, "space_grid");
    const auto sn = as_int(require(sg, "n", "space_grid"), "space_grid.n");
    if (sn < 3) throw InputError("space_grid.n must be >= 3");

    MaterialConfig cfg;
    cfg.time_grid = Grid1D(0.0, t_max, static_cast<std::size_t>(tn));
    cfg.space_grid = Grid1D(0.0, kPi, static_cast<std::size_t>(sn));

    const auto nm = as_int(require(j, "n_modes", "config"), "n_modes");
    if (nm < 1) throw InputError("n_modes must be a positive integer");
    cfg.n_modes = static_cast<int>(nm);
    if (j.contains("seed")) {
        const auto s = as_int(j.at("seed"), "seed");
        if (s < 0) throw InputError("seed must be non-negative");
        cfg.seed = static_cast<std::uint64_t>(s);
    }

    const auto& tj = require(j, "traction", "config");
    cfg.traction.P = parse_profile(tj, "traction", "t", 0.0, t_max, cfg.time_grid, {"p0"});
    cfg.traction.p0 = tj.contains("p0") ? as_real(tj.at("p0"), "traction.p0")
                                         : *std::min_element(cfg.traction.P.values().begin(),
                                                             cfg.traction.P.values().end());
    validate_traction(cfg.traction, tol);

    const auto& dj = require(j, "density", "config");
    cfg.density.c = parse_profile(dj, "density", "xi", 0.0, kPi, cfg.space_grid, {"c0"});
    if (dj.contains("t_max")) throw InputError("density samples always span [0, pi]; t_max not allowed");
    cfg.density.c0 = dj.contains("c0") ? as_real(dj.at("c0"), "density.c0")
                                        : *std::min_element(cfg.density.c.values().begin(),
                                                            cfg.density.c.values().end());
    validate_density(cfg.density);

    const auto& mj = require(j, "memory", "config");
    cfg.kernel = MemoryKernel::from_M(parse_profile(mj, "memory", "t", 0.0, t_max, cfg.time_grid, {}));
    validate_kernel(cfg.kernel, tol);

    cfg.source = j;
    return cfg;
}

inline MaterialConfig load_config(const std::filesystem::path& path, const Tolerances& tol = {}) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError("parse error in " + path.string() + ": " + e.what());
    }
    return parse_config(j, tol);
}

/// Writes the config back out. Expression profiles stay expressions (sampling
/// is deterministic), sample profiles are written with round-trip precision,
/// so loading the result reproduces the node data bit for bit.
inline void save_config(const MaterialConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write config file " + path.string());
    out << cfg.source.dump(2) << '\n';
}

/// Stable 64-bit FNV-1a hash of the canonical config document.
inline std::uint64_t config_hash(const MaterialConfig& cfg) {
    const std::string s = cfg.source.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace vstring
