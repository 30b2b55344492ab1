#pragma once

// Coefficient functions of the hybrid local-vol / Hull-White SDE
//
//   dS/S = r dt + sigma(t,S) dW1
//   dr   = a(theta(t) - r) dt + sigma2 (rho dW1 + sqrt(1-rho^2) dW2)
//
// together with the Hull-White curve analytics (zero-coupon prices,
// instantaneous forwards, theta fitted to a forward curve).

#include <cmath>
#include <functional>
#include <memory>
#include <variant>

#include "hwlv/error.hpp"
#include "hwlv/local_vol_surface.hpp"
#include "hwlv/quadrature.hpp"

namespace hwlv {

// Instantaneous forward curve T -> f(0,T). `slope` is df/dT; it is
// required for theta fitting.
struct ForwardCurve {
    std::function<double(double)> value;
    std::function<double(double)> slope;
};

struct HullWhiteParams {
    double a = 0.5;        // mean reversion speed
    double sigma2 = 0.0;   // short-rate volatility (absolute)
    std::variant<double, ForwardCurve> theta = 0.0;
    double r0 = 0.0;

    bool constant_theta() const { return std::holds_alternative<double>(theta); }

    // Hull-White model fitted to `curve`; r0 is taken from f(0,0).
    static HullWhiteParams fitted(double a, double sigma2, ForwardCurve curve) {
        HullWhiteParams p;
        p.a = a;
        p.sigma2 = sigma2;
        p.r0 = curve.value ? curve.value(0.0) : 0.0;
        p.theta = std::move(curve);
        return p;
    }
};

inline double fit_theta(const ForwardCurve& curve, double a, double sigma2, double t);

inline void validate(const HullWhiteParams& p) {
    if (!std::isfinite(p.a) || !std::isfinite(p.sigma2) || !std::isfinite(p.r0))
        throw InvalidInput("Hull-White parameters must be finite");
    if (!(p.a > 0.0)) throw InvalidInput("Hull-White mean reversion a must be > 0");
    if (p.sigma2 < 0.0) throw InvalidInput("Hull-White sigma2 must be >= 0");
    if (const double* th = std::get_if<double>(&p.theta)) {
        if (!std::isfinite(*th)) throw InvalidInput("Hull-White theta must be finite");
    } else {
        const auto& c = std::get<ForwardCurve>(p.theta);
        if (!c.value || !c.slope)
            throw InvalidInput("fitted theta needs a forward curve with its derivative");
        if (!std::isfinite(fit_theta(c, p.a, p.sigma2, 0.0)))
            throw InvalidInput("fitted theta is not finite at t = 0");
    }
}

// theta(t) = f_T(0,t)/a + f(0,t) + (sigma2/a)^2 (1 - e^{-2at}) / 2
inline double fit_theta(const ForwardCurve& curve, double a, double sigma2, double t) {
    if (!curve.value || !curve.slope)
        throw InvalidInput("fit_theta: forward curve must be differentiable (slope missing)");
    if (!(a > 0.0) || !(sigma2 >= 0.0)) throw InvalidInput("fit_theta: need a > 0, sigma2 >= 0");
    const double f = curve.value(t);
    const double df = curve.slope(t);
    if (!std::isfinite(f) || !std::isfinite(df))
        throw InvalidInput("fit_theta: forward curve not differentiable at t");
    const double k = sigma2 / a;
    return df / a + f + 0.5 * k * k * (-std::expm1(-2.0 * a * t));
}

inline double theta_at(const HullWhiteParams& p, double t) {
    if (const double* th = std::get_if<double>(&p.theta)) return *th;
    return fit_theta(std::get<ForwardCurve>(p.theta), p.a, p.sigma2, t);
}

// B(t, t+tau) = (1 - e^{-a tau}) / a
inline double hw_b(double a, double tau) { return -std::expm1(-a * tau) / a; }

inline double zc_price(const HullWhiteParams& p, double T) {
    validate(p);
    if (!(T >= 0.0) || !std::isfinite(T)) throw InvalidInput("zc_price: T must be finite and >= 0");
    if (const double* th = std::get_if<double>(&p.theta)) {
        const double a = p.a;
        const double s2 = p.sigma2 * p.sigma2;
        const double B = hw_b(a, T);
        const double logA = (*th - s2 / (2.0 * a * a)) * (B - T) - s2 / (4.0 * a) * B * B;
        return std::exp(logA - B * p.r0);
    }
    const auto& curve = std::get<ForwardCurve>(p.theta);
    const auto panels = static_cast<std::size_t>(std::ceil(T / 0.25)) + 1;
    return std::exp(-gauss_legendre(curve.value, 0.0, T, panels));
}

inline double forward_rate(const HullWhiteParams& p, double T) {
    validate(p);
    if (!(T >= 0.0) || !std::isfinite(T)) throw InvalidInput("forward_rate: T must be finite and >= 0");
    if (const double* th = std::get_if<double>(&p.theta)) {
        const double a = p.a;
        const double k = p.sigma2 * p.sigma2 / (a * a);
        const double e = std::exp(-a * T);
        return -0.5 * k + *th - (*th - k - p.r0) * e - 0.5 * k * e * e;
    }
    return std::get<ForwardCurve>(p.theta).value(T);
}

// Forward curve of a constant-theta model, in closed form.
inline ForwardCurve forward_curve_of(const HullWhiteParams& p) {
    validate(p);
    if (!p.constant_theta()) return std::get<ForwardCurve>(p.theta);
    const double a = p.a;
    const double k = p.sigma2 * p.sigma2 / (a * a);
    const double th = std::get<double>(p.theta);
    const double r0 = p.r0;
    ForwardCurve c;
    c.value = [=](double T) {
        const double e = std::exp(-a * T);
        return -0.5 * k + th - (th - k - r0) * e - 0.5 * k * e * e;
    };
    c.slope = [=](double T) {
        const double e = std::exp(-a * T);
        return a * (th - k - r0) * e + a * k * e * e;
    };
    return c;
}

// ---------------------------------------------------------------- local vol

struct ConstantVol {
    double sigma1 = 0.2;
};

// Jaeckel's hyperbolic local volatility; beta = 1 is Black-Scholes.
struct HyperbolicVol {
    double nu = 0.2;
    double beta = 1.0;
};

struct SurfaceVol {
    std::shared_ptr<const LocalVolSurface> surface;
};

using LocalVolFunction = std::variant<ConstantVol, HyperbolicVol, SurfaceVol>;

struct VolDerivatives {
    double sigma = 0.0;
    double sigma_s = 0.0;
    double sigma_ss = 0.0;
};

namespace detail {

inline void check_hyperbolic(double nu, double beta, double S) {
    if (!(nu > 0.0) || !std::isfinite(nu)) throw InvalidInput("hyperbolic vol: nu must be > 0");
    if (!(beta > 0.0 && beta <= 1.0)) throw InvalidInput("hyperbolic vol: beta must be in (0, 1]");
    if (!(S > 0.0) || !std::isfinite(S)) throw InvalidInput("hyperbolic vol: S must be > 0");
}

}  // namespace detail

// sigma_H(S) = nu { (1-b+b^2)/b + (b-1)/(b S) (sqrt(S^2 + b^2 (1-S)^2) - b) }
//
// The bracket (q - b)/S is evaluated as (S(1+b^2) - 2b^2)/(q + b), which is
// the same quantity without the cancellation at small S.
inline VolDerivatives hyperbolic_vol_derivatives(double nu, double beta, double S) {
    detail::check_hyperbolic(nu, beta, S);
    const double b2 = beta * beta;
    const double om = 1.0 - S;
    const double q = std::sqrt(S * S + b2 * om * om);
    const double dq = (S - b2 * om) / q;
    const double d2q = ((1.0 + b2) - dq * dq) / q;
    const double u = S * (1.0 + b2) - 2.0 * b2;
    const double du = 1.0 + b2;
    const double v = q + beta;
    const double h = u / v;
    const double dh = (du * v - u * dq) / (v * v);
    const double d2h = -u * d2q / (v * v) - 2.0 * dq * dh / v;
    const double k = (beta - 1.0) / beta;
    VolDerivatives out;
    out.sigma = nu * ((1.0 - beta + b2) / beta + k * h);
    out.sigma_s = nu * k * dh;
    out.sigma_ss = nu * k * d2h;
    return out;
}

inline double hyperbolic_vol(double nu, double beta, double S) {
    return hyperbolic_vol_derivatives(nu, beta, S).sigma;
}

inline VolDerivatives local_vol_derivatives(const LocalVolFunction& vol, double t, double S) {
    if (!(S > 0.0)) throw InvalidInput("local vol: S must be > 0");
    if (const auto* c = std::get_if<ConstantVol>(&vol)) return {c->sigma1, 0.0, 0.0};
    if (const auto* h = std::get_if<HyperbolicVol>(&vol)) {
        if (h->beta == 1.0) return {h->nu, 0.0, 0.0};
        return hyperbolic_vol_derivatives(h->nu, h->beta, S);
    }
    const auto& surf = *std::get<SurfaceVol>(vol).surface;
    // central differences on the interpolant, step = node spacing floored at 1e-4 S
    const double h = std::max(surf.node_spacing(S), 1e-4 * S);
    const double lo = std::max(S - h, 0.5 * S);
    const double hl = S - lo;
    const double up = surf(t, S + h);
    const double mid = surf(t, S);
    const double dn = surf(t, lo);
    VolDerivatives out;
    out.sigma = mid;
    out.sigma_s = (up - dn) / (h + hl);
    out.sigma_ss = 2.0 * (hl * up - (h + hl) * mid + h * dn) / (h * hl * (h + hl));
    return out;
}

inline double local_vol(const LocalVolFunction& vol, double t, double S) {
    if (const auto* c = std::get_if<ConstantVol>(&vol)) return c->sigma1;
    if (const auto* h = std::get_if<HyperbolicVol>(&vol)) return hyperbolic_vol(h->nu, h->beta, S);
    if (!(S > 0.0)) throw InvalidInput("local vol: S must be > 0");
    return (*std::get<SurfaceVol>(vol).surface)(t, S);
}

// ---------------------------------------------------------------- hybrid model

struct HybridModel {
    double s0 = 1.0;
    HullWhiteParams rate;
    LocalVolFunction vol = ConstantVol{};
    double rho = 0.0;
};

inline void validate(const HybridModel& m) {
    if (!(m.s0 > 0.0) || !std::isfinite(m.s0)) throw InvalidInput("hybrid model: s0 must be > 0");
    if (!(std::abs(m.rho) <= 1.0)) throw InvalidInput("hybrid model: |rho| must be <= 1");
    validate(m.rate);
    if (const auto* c = std::get_if<ConstantVol>(&m.vol)) {
        if (!(c->sigma1 >= 0.0) || !std::isfinite(c->sigma1))
            throw InvalidInput("constant vol must be finite and >= 0");
    } else if (const auto* h = std::get_if<HyperbolicVol>(&m.vol)) {
        detail::check_hyperbolic(h->nu, h->beta, 1.0);
    } else if (!std::get<SurfaceVol>(m.vol).surface) {
        throw InvalidInput("surface vol without a surface");
    }
}

// Local coefficients of the SDE at (t, S, r), plus the spatial derivatives
// the forward equation needs. vol_s is the lognormal volatility sigma(t,S);
// drift_s = r S.
struct SdeCoefficients {
    double drift_s = 0.0;
    double vol_s = 0.0;
    double drift_r = 0.0;
    double vol_r = 0.0;
    double sigma_s = 0.0;
    double sigma_ss = 0.0;
    double alpha_r = 0.0;
    double alpha_rr = 0.0;
    double mu_r = 0.0;
};

// Rate part only; Hull-White has alpha constant and mu linear in r.
struct RateCoefficients {
    double mu = 0.0;
    double mu_r = 0.0;
    double alpha = 0.0;
    double alpha_r = 0.0;
    double alpha_rr = 0.0;
};

inline RateCoefficients rate_coefficients(const HullWhiteParams& p, double t, double r) {
    return {p.a * (theta_at(p, t) - r), -p.a, p.sigma2, 0.0, 0.0};
}

inline SdeCoefficients sde_coefficients(const HybridModel& m, double t, double S, double r) {
    if (!(S > 0.0)) throw InvalidInput("sde_coefficients: S must be > 0");
    const VolDerivatives v = local_vol_derivatives(m.vol, t, S);
    const RateCoefficients rc = rate_coefficients(m.rate, t, r);
    SdeCoefficients c;
    c.drift_s = r * S;
    c.vol_s = v.sigma;
    c.drift_r = rc.mu;
    c.vol_r = rc.alpha;
    c.sigma_s = v.sigma_s;
    c.sigma_ss = v.sigma_ss;
    c.alpha_r = rc.alpha_r;
    c.alpha_rr = rc.alpha_rr;
    c.mu_r = rc.mu_r;
    return c;
}

}  // namespace hwlv
