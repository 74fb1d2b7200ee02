#pragma once

#include "vstring/material.hpp"

namespace vstring::testing {

inline nlohmann::json config_json(const std::string& P, const std::string& c, const std::string& M, double t_max,
                                  int nt = 2001, int ns = 801, int n_modes = 8) {
    return nlohmann::json{{"traction", {{"kind", "expr"}, {"expr", P}}},
                          {"density", {{"kind", "expr"}, {"expr", c}}},
                          {"memory", {{"kind", "expr"}, {"expr", M}}},
                          {"space_grid", {{"n", ns}}},
                          {"time_grid", {{"n", nt}, {"t_max", t_max}}},
                          {"n_modes", n_modes},
                          {"seed", 7}};
}

inline MaterialConfig make_config(const std::string& P, const std::string& c, const std::string& M, double t_max,
                                  int nt = 2001, int ns = 801, int n_modes = 8) {
    return parse_config(config_json(P, c, M, t_max, nt, ns, n_modes));
}

/// Density whose Liouville normal form has the constant potential k^2:
/// c^{1/4} = m(y) = cosh(k y) + B sinh(k y) in travel-time y, xi(y) = int_0^y m^2,
/// with B chosen so that xi(pi) = pi. Then c(0) = 1, the travel time is pi,
/// lambda_n = sqrt(n^2 + k^2) and phi_n'(0) = sqrt(2/pi) n exactly.
struct LiouvilleDensity {
    double k = 0.5;
    double B = 0.0;

    explicit LiouvilleDensity(double k_) : k(k_) {
        const double s2 = std::sinh(2 * k * kPi) / (4 * k), sh = std::sinh(k * kPi);
        const double a2 = -kPi / 2 + s2, a1 = sh * sh / k, a0 = kPi / 2 + s2 - kPi;
        B = (-a1 + std::sqrt(a1 * a1 - 4 * a2 * a0)) / (2 * a2);
    }
    double m(double y) const { return std::cosh(k * y) + B * std::sinh(k * y); }
    double xi(double y) const {
        const double s2 = std::sinh(2 * k * y) / (4 * k), sh = std::sinh(k * y);
        return (y / 2 + s2) + B * sh * sh / k + B * B * (-y / 2 + s2);
    }
    double c(double x) const {
        double lo = 0.0, hi = kPi;
        for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
            const double mid = 0.5 * (lo + hi);
            (xi(mid) < x ? lo : hi) = mid;
        }
        return std::pow(m(0.5 * (lo + hi)), 4);
    }
    double lambda(int n) const { return std::sqrt(n * n + k * k); }

    nlohmann::json samples(std::size_t n) const {
        std::vector<double> v(n);
        for (std::size_t j = 0; j < n; ++j) v[j] = c(kPi * static_cast<double>(j) / static_cast<double>(n - 1));
        return {{"kind", "samples"}, {"values", v}};
    }
};

inline const char* kGenericP = "1 + 0.3*sin(t)";
inline const char* kGenericC = "1 + 0.2*sin(xi)";
inline const char* kGenericM = "-0.5*exp(-0.5*t)";

inline MaterialConfig constant_config(double t_max = kPi, int nt = 2001, int n_modes = 8) {
    return make_config("1", "1", "0", t_max, nt, 801, n_modes);
}

inline MaterialConfig generic_config(double t_max = 8.0, int nt = 2001, int n_modes = 16) {
    return make_config(kGenericP, kGenericC, kGenericM, t_max, nt, 801, n_modes);
}

/// Generic traction and memory with the travel-time calibrated density above.
inline MaterialConfig calibrated_config(double k = 0.5, double t_max = 8.0, int nt = 2001, int n_modes = 32,
                                        int ns = 1601) {
    auto j = config_json(kGenericP, "1", kGenericM, t_max, nt, ns, n_modes);
    j["density"] = LiouvilleDensity(k).samples(static_cast<std::size_t>(ns));
    return parse_config(j);
}

}  // namespace vstring::testing
