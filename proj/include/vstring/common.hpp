#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <mutex>
#include <numbers>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace vstring {

inline constexpr double kPi = std::numbers::pi;

/// Malformed or invalid input (config, specs, files). CLI exit code 2.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A numerical procedure failed (coarse grid, instability, singular system). CLI exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// logging

namespace log {

using Sink = std::function<void(const std::string&)>;

inline Sink& sink() {
    static Sink s = [](const std::string& msg) { std::cerr << "[vstring] warning: " << msg << '\n'; };
    return s;
}

inline void set_sink(Sink s) { sink() = std::move(s); }

/// Emits each distinct message once per process.
inline void warn_once(const std::string& msg) {
    static std::mutex mtx;
    static std::set<std::string> seen;
    std::lock_guard lock(mtx);
    if (seen.insert(msg).second && sink()) sink()(msg);
}

}  // namespace log

// ---------------------------------------------------------------------------
// threading

inline unsigned& thread_count_ref() {
    static unsigned n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

inline void set_thread_count(unsigned n) { thread_count_ref() = std::max(1u, n); }
inline unsigned thread_count() { return thread_count_ref(); }

/// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker, so
/// outputs written per index do not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < n; i += workers) fn(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// grids

/// Uniform grid of n_points >= 2 nodes on [start, end].
class Grid1D {
public:
    Grid1D() = default;
    Grid1D(double start, double end, std::size_t n_points) : start_(start), end_(end), n_(n_points) {
        if (!(std::isfinite(start) && std::isfinite(end)) || !(start < end))
            throw InputError("grid requires start < end");
        if (n_points < 2) throw InputError("grid requires at least 2 points");
    }

    double start() const { return start_; }
    double end() const { return end_; }
    std::size_t size() const { return n_; }
    double step() const { return (end_ - start_) / static_cast<double>(n_ - 1); }
    double length() const { return end_ - start_; }

    double operator[](std::size_t i) const {
        return i + 1 == n_ ? end_ : start_ + step() * static_cast<double>(i);
    }

    std::vector<double> samples() const {
        std::vector<double> out(n_);
        for (std::size_t i = 0; i < n_; ++i) out[i] = (*this)[i];
        return out;
    }

    /// Same interval with (n-1)*factor intervals; node i maps to node i*factor.
    Grid1D refined(std::size_t factor) const { return Grid1D(start_, end_, (n_ - 1) * factor + 1); }

    friend bool operator==(const Grid1D& a, const Grid1D& b) {
        return a.start_ == b.start_ && a.end_ == b.end_ && a.n_ == b.n_;
    }

private:
    double start_ = 0.0;
    double end_ = 1.0;
    std::size_t n_ = 2;
};

// ---------------------------------------------------------------------------
// interpolation

/// Four-point Lagrange cubic through the nodes surrounding x. The stencil is
/// centred on the interior and shifted one-sided at the ends; outside the grid
/// the end value is held constant.
inline double interpolate_cubic(const Grid1D& grid, std::span<const double> v, double x) {
    const std::size_t n = grid.size();
    if (x <= grid.start()) return v.front();
    if (x >= grid.end()) return v.back();
    const double h = grid.step();
    const double s = (x - grid.start()) / h;
    auto k = static_cast<std::ptrdiff_t>(std::floor(s));
    k = std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(n) - 2);
    if (n < 4) {
        const double u = s - static_cast<double>(k);
        return v[k] * (1.0 - u) + v[k + 1] * u;
    }
    std::ptrdiff_t base = std::clamp<std::ptrdiff_t>(k - 1, 0, static_cast<std::ptrdiff_t>(n) - 4);
    const double u = s - static_cast<double>(base);  // position relative to stencil start, nodes at 0..3
    // Newton forward-difference form: constant data is reproduced exactly
    const double d1 = v[base + 1] - v[base];
    const double d2 = v[base + 2] - 2.0 * v[base + 1] + v[base];
    const double d3 = v[base + 3] - 3.0 * v[base + 2] + 3.0 * v[base + 1] - v[base];
    return v[base] + u * (d1 + (u - 1.0) * (0.5 * d2 + (u - 2.0) / 6.0 * d3));
}

/// Second-order finite-difference derivative of nodal data (one-sided at the ends).
inline std::vector<double> differentiate(const Grid1D& grid, std::span<const double> v) {
    const std::size_t n = v.size();
    const double h = grid.step();
    std::vector<double> d(n, 0.0);
    if (n == 2) {
        d[0] = d[1] = (v[1] - v[0]) / h;
        return d;
    }
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    return d;
}

// ---------------------------------------------------------------------------
// quadrature

inline double trapezoid(std::span<const double> f, double h) {
    if (f.size() < 2) return 0.0;
    double s = 0.5 * (f.front() + f.back());
    for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
    return s * h;
}

/// Composite Simpson; an odd number of intervals closes with a 3/8 panel.
inline double simpson(std::span<const double> f, double h) {
    const std::size_t n = f.size();
    if (n < 2) return 0.0;
    if (n == 2) return 0.5 * h * (f[0] + f[1]);
    if (n == 3) return h / 3.0 * (f[0] + 4.0 * f[1] + f[2]);
    std::size_t intervals = n - 1;
    std::size_t simpson_end = intervals % 2 == 0 ? n - 1 : n - 4;
    double s = 0.0;
    for (std::size_t i = 0; i + 2 <= simpson_end; i += 2) s += f[i] + 4.0 * f[i + 1] + f[i + 2];
    s *= h / 3.0;
    if (simpson_end != n - 1) {
        const std::size_t i = simpson_end;
        s += 3.0 * h / 8.0 * (f[i] + 3.0 * f[i + 1] + 3.0 * f[i + 2] + f[i + 3]);
    }
    return s;
}

inline std::vector<double> cumulative_trapezoid(std::span<const double> f, double h) {
    std::vector<double> out(f.size(), 0.0);
    for (std::size_t i = 1; i < f.size(); ++i) out[i] = out[i - 1] + 0.5 * h * (f[i - 1] + f[i]);
    return out;
}

/// Eight-point Gauss-Legendre rule on [a, b].
template <class F>
double gauss_legendre(F&& f, double a, double b) {
    static constexpr std::array<double, 4> x = {0.1834346424956498, 0.5255324099163290,
                                                0.7966664774136267, 0.9602898564975363};
    static constexpr std::array<double, 4> w = {0.3626837833783620, 0.3137066458778873,
                                                0.2223810344533745, 0.1012285362903763};
    const double c = 0.5 * (a + b);
    const double r = 0.5 * (b - a);
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += w[i] * (f(c - r * x[i]) + f(c + r * x[i]));
    return s * r;
}

/// Composite Gauss-Legendre with panels no wider than max_panel.
template <class F>
double integrate(F&& f, double a, double b, double max_panel = 0.05) {
    if (b == a) return 0.0;
    const auto panels = static_cast<std::size_t>(std::ceil(std::abs(b - a) / max_panel));
    const double w = (b - a) / static_cast<double>(std::max<std::size_t>(panels, 1));
    double s = 0.0;
    for (std::size_t p = 0; p < std::max<std::size_t>(panels, 1); ++p)
        s += gauss_legendre(f, a + w * static_cast<double>(p), a + w * static_cast<double>(p + 1));
    return s;
}

/// Dot product with four independent accumulators (fixed order, deterministic).
inline double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

inline double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// ---------------------------------------------------------------------------
// Richardson extrapolation over nested uniform grids

/// Solves on grids with (n-1)*2^l intervals for l < levels, restricts each
/// channel to the coarse nodes and eliminates the h^2, h^4, ... error terms.
/// `solve(fine_grid)` returns a list of channels sampled on fine_grid.
template <class Solve>
std::vector<std::vector<double>> richardson(const Grid1D& coarse, int levels, Solve&& solve) {
    levels = std::max(levels, 1);
    std::vector<std::vector<std::vector<double>>> table;  // [level][channel][coarse node]
    for (int l = 0; l < levels; ++l) {
        const std::size_t factor = std::size_t{1} << l;
        const Grid1D fine = coarse.refined(factor);
        auto channels = solve(fine);
        for (auto& ch : channels) {
            std::vector<double> restricted(coarse.size());
            for (std::size_t i = 0; i < coarse.size(); ++i) restricted[i] = ch[i * factor];
            ch = std::move(restricted);
        }
        table.push_back(std::move(channels));
    }
    // Neville-style tableau, in place: after pass k, table[l] holds R_{l,k}.
    for (int k = 1; k < levels; ++k) {
        const double div = std::pow(4.0, k) - 1.0;
        for (int l = levels - 1; l >= k; --l) {
            for (std::size_t c = 0; c < table[l].size(); ++c)
                for (std::size_t i = 0; i < coarse.size(); ++i)
                    table[l][c][i] += (table[l][c][i] - table[l - 1][c][i]) / div;
        }
    }
    return table.back();
}

}  // namespace vstring
