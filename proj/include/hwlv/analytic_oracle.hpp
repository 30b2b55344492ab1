#pragma once

// Closed-form Black-Scholes / Hull-White results: call prices and the
// maturity/strike Greeks, the Gaussian moments of (log S(T), r(T), R(T))
// with R(T) = int_0^T r, the conditional discount projection
// Z(T,S,r) = E[e^{-R(T)} | S(T), r(T)] and the reference density P*Z.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <variant>

#include "hwlv/error.hpp"
#include "hwlv/market_models.hpp"
#include "hwlv/normal.hpp"

namespace hwlv {

struct BshwMoments {
    double mu_y = 0.0;
    double mu_r = 0.0;
    double mu_R = 0.0;
    double sigma_y = 0.0;
    double sigma_r = 0.0;
    double sigma_R = 0.0;
    std::array<std::array<double, 2>, 2> sigma_yr{};  // covariance of (Y, r)
    std::array<double, 2> sigma_yr_R{};               // Cov(Y, R), Cov(r, R)
};

struct PriceAndGreeks {
    double price = 0.0;
    double c_T = 0.0;
    double c_K = 0.0;
    double c_KK = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
    double gT = 0.0;
};

// T = 0: the option is its payoff and has no maturity Greeks.
struct IntrinsicValue {
    double price = 0.0;
};

using CallResult = std::variant<PriceAndGreeks, IntrinsicValue>;

inline double price_of(const CallResult& r) {
    return std::visit([](const auto& v) { return v.price; }, r);
}

namespace detail {

inline double require_constant_vol(const HybridModel& m) {
    validate(m);
    const auto* c = std::get_if<ConstantVol>(&m.vol);
    if (!c) throw InvalidInput("closed forms need a constant local volatility");
    return c->sigma1;
}

// Gaussian building blocks of the Hull-White integral
struct HwIntegrals {
    double B;      // (1 - e^{-aT}) / a
    double varR;   // Var(R)
    double varr;   // Var(r)
    double covrR;  // Cov(r, R)
};

inline HwIntegrals hw_integrals(double a, double s2, double T) {
    const double B = hw_b(a, T);
    const double B2 = hw_b(2.0 * a, T);  // (1 - e^{-2aT}) / (2a)
    const double k = s2 / a;
    HwIntegrals h;
    h.B = B;
    h.varR = k * k * (T + B2 - 2.0 * B);
    h.varr = s2 * s2 * B2;
    h.covrR = 0.5 * k * k * (a * B) * (a * B);
    return h;
}

}  // namespace detail

// Volatility of the T-forward price of S at time t: sigma_hat^2(t).
inline double effective_variance_rate(const HybridModel& m, double t) {
    const double s1 = detail::require_constant_vol(m);
    const double s2 = m.rate.sigma2;
    const double X = hw_b(m.rate.a, t);
    return s1 * s1 + 2.0 * m.rho * s1 * s2 * X + s2 * s2 * X * X;
}

// g(T) = int_0^T sigma_hat^2(t) dt
inline double integrated_variance(const HybridModel& m, double T) {
    const double s1 = detail::require_constant_vol(m);
    if (!(T >= 0.0)) throw InvalidInput("integrated_variance: T must be >= 0");
    const double a = m.rate.a;
    const double s2 = m.rate.sigma2;
    const auto h = detail::hw_integrals(a, s2, T);
    const double g = s1 * s1 * T + 2.0 * m.rho * s1 * s2 / a * (T - h.B) + h.varR;
    return std::max(g, 0.0);
}

inline CallResult bshw_call(const HybridModel& m, double T, double K) {
    detail::require_constant_vol(m);
    if (!(T >= 0.0) || !std::isfinite(T)) throw InvalidInput("bshw_call: T must be >= 0");
    if (!(K > 0.0) || !std::isfinite(K)) throw InvalidInput("bshw_call: K must be > 0");
    if (T == 0.0) return IntrinsicValue{std::max(m.s0 - K, 0.0)};

    const double zc = zc_price(m.rate, T);
    const double f = forward_rate(m.rate, T);
    const double g = integrated_variance(m, T);
    const double sg = std::sqrt(g);
    if (!(sg > 0.0)) throw InvalidInput("bshw_call: zero integrated variance");

    PriceAndGreeks out;
    out.gT = g;
    out.d1 = (std::log(m.s0 / K) - std::log(zc) + 0.5 * g) / sg;
    out.d2 = out.d1 - sg;
    const double N1 = norm_cdf(out.d1);
    const double N2 = norm_cdf(out.d2);
    const double n1 = norm_pdf(out.d1);
    const double n2 = norm_pdf(out.d2);
    out.price = m.s0 * N1 - K * zc * N2;
    out.c_T = 0.5 * m.s0 * n1 * effective_variance_rate(m, T) / sg + K * zc * f * N2;
    out.c_K = -zc * N2;
    out.c_KK = zc * n2 / (K * sg);
    return out;
}

// Convenience for callers that need Greeks; T must be > 0.
inline PriceAndGreeks bshw_call_greeks(const HybridModel& m, double T, double K) {
    if (!(T > 0.0)) throw InvalidInput("bshw_call_greeks: T must be > 0");
    return std::get<PriceAndGreeks>(bshw_call(m, T, K));
}

// Gaussian moments of (Y, r, R) at horizon T. Cov(Y, r) and Cov(Y, R)
// include the contribution of R through Y = log S0 + R - sigma1^2 T/2 + sigma1 W1(T).
inline BshwMoments bshw_moments(const HybridModel& m, double T) {
    const double s1 = detail::require_constant_vol(m);
    if (!(T >= 0.0) || !std::isfinite(T)) throw InvalidInput("bshw_moments: T must be >= 0");
    const double a = m.rate.a;
    const double s2 = m.rate.sigma2;
    const double rho = m.rho;
    const auto h = detail::hw_integrals(a, s2, T);

    BshwMoments mo;
    if (const double* th = std::get_if<double>(&m.rate.theta)) {
        const double e = std::exp(-a * T);
        mo.mu_r = m.rate.r0 * e + *th * (1.0 - e);
        mo.mu_R = m.rate.r0 * h.B + *th * T - *th * h.B;
    } else {
        // same quantities expressed through the fitted curve
        const double f = forward_rate(m.rate, T);
        mo.mu_r = f + 0.5 * s2 * s2 * h.B * h.B;
        mo.mu_R = -std::log(zc_price(m.rate, T)) + 0.5 * h.varR;
    }
    mo.mu_y = std::log(m.s0) + mo.mu_R - 0.5 * s1 * s1 * T;

    const double cov_w1_R = rho * s2 / a * (T - h.B);
    const double cov_w1_r = rho * s2 * h.B;
    mo.sigma_R = h.varR;
    mo.sigma_r = h.varr;
    mo.sigma_y = h.varR + s1 * s1 * T + 2.0 * s1 * cov_w1_R;
    const double cov_yr = h.covrR + s1 * cov_w1_r;
    mo.sigma_yr = {{{mo.sigma_y, cov_yr}, {cov_yr, mo.sigma_r}}};
    mo.sigma_yr_R = {h.varR + s1 * cov_w1_R, h.covrR};
    return mo;
}

namespace detail {

struct Conditioning {
    double det;
    std::array<std::array<double, 2>, 2> inv;
    std::array<double, 2> beta;  // Sigma_yr^{-1} Sigma_yr_R
    double cond_var;             // Var(R | Y, r)
};

inline Conditioning condition_on_yr(const BshwMoments& mo) {
    const auto& S = mo.sigma_yr;
    Conditioning c;
    c.det = S[0][0] * S[1][1] - S[0][1] * S[1][0];
    if (!(c.det > 1e-300)) throw SingularCovariance("Sigma_yr is singular (det=" + std::to_string(c.det) + ")");
    c.inv = {{{S[1][1] / c.det, -S[0][1] / c.det}, {-S[1][0] / c.det, S[0][0] / c.det}}};
    c.beta = {c.inv[0][0] * mo.sigma_yr_R[0] + c.inv[0][1] * mo.sigma_yr_R[1],
              c.inv[1][0] * mo.sigma_yr_R[0] + c.inv[1][1] * mo.sigma_yr_R[1]};
    c.cond_var = mo.sigma_R - (mo.sigma_yr_R[0] * c.beta[0] + mo.sigma_yr_R[1] * c.beta[1]);
    return c;
}

}  // namespace detail

// Z(T,S,r) = exp{-mu_R - beta.(Y - mu_y, r - mu_r) + Var(R | Y, r)/2}, Y = log S.
inline double analytic_Z(const HybridModel& m, double T, double S, double r) {
    if (!(T > 0.0)) throw SingularCovariance("analytic_Z: T must be > 0");
    if (!(S > 0.0)) throw InvalidInput("analytic_Z: S must be > 0");
    const auto mo = bshw_moments(m, T);
    if (m.rate.sigma2 == 0.0 && mo.sigma_y > 0.0) return std::exp(-mo.mu_R);  // R(T) deterministic
    const auto c = detail::condition_on_yr(mo);
    const double dy = std::log(S) - mo.mu_y;
    const double dr = r - mo.mu_r;
    return std::exp(-mo.mu_R - (c.beta[0] * dy + c.beta[1] * dr) + 0.5 * c.cond_var);
}

// P(T,S,r) Z(T,S,r) where P is the density of (S(T), r(T)): the bivariate
// Gaussian density of (Y, r) at (log S, r) divided by S.
inline double analytic_PZ(const HybridModel& m, double T, double S, double r) {
    if (!(T > 0.0)) throw SingularCovariance("analytic_PZ: T must be > 0");
    if (!(S > 0.0)) throw InvalidInput("analytic_PZ: S must be > 0");
    const auto mo = bshw_moments(m, T);
    const auto c = detail::condition_on_yr(mo);
    const double dy = std::log(S) - mo.mu_y;
    const double dr = r - mo.mu_r;
    const double q = dy * (c.inv[0][0] * dy + c.inv[0][1] * dr) + dr * (c.inv[1][0] * dy + c.inv[1][1] * dr);
    const double log_p = -0.5 * q - std::log(2.0 * std::numbers::pi * std::sqrt(c.det) * S);
    const double log_z = -mo.mu_R - (c.beta[0] * dy + c.beta[1] * dr) + 0.5 * c.cond_var;
    return std::exp(log_p + log_z);
}

// E[Z(T) (r(T) - f(0,T)) 1{S(T) > K}] in closed form. Under the T-forward
// measure (log S(T), r(T)) is Gaussian with E^T[r(T)] = f(0,T), so the
// expectation is ZC Cov(Y, r) n(d2) / sqrt(g).
inline double analytic_adj(const HybridModel& m, double T, double K) {
    const auto pg = bshw_call_greeks(m, T, K);
    const auto mo = bshw_moments(m, T);
    return zc_price(m.rate, T) * mo.sigma_yr[0][1] * norm_pdf(pg.d2) / std::sqrt(pg.gT);
}

// Max relative deviation of closed-form C_T, C_K, C_KK from central differences.
inline double bshw_greeks_fd_check(const HybridModel& m, double T, double K) {
    const auto pg = bshw_call_greeks(m, T, K);
    const double hT = 1e-4;
    const double hK = 1e-4 * K;
    auto C = [&](double t, double k) { return price_of(bshw_call(m, t, k)); };
    const double fd_T = (C(T + hT, K) - C(T - hT, K)) / (2.0 * hT);
    const double fd_K = (C(T, K + hK) - C(T, K - hK)) / (2.0 * hK);
    const double fd_KK = (C(T, K + hK) - 2.0 * C(T, K) + C(T, K - hK)) / (hK * hK);
    auto rel = [](double exact, double fd) { return std::abs(exact - fd) / (std::abs(exact) + 1e-12); };
    return std::max({rel(pg.c_T, fd_T), rel(pg.c_K, fd_K), rel(pg.c_KK, fd_KK)});
}

}  // namespace hwlv
