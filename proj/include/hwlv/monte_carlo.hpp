#pragma once

// Path simulation of the hybrid model: price and moment estimates with
// standard errors, and a kernel-regression estimate of E[Z | S(T), r(T)].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hwlv/error.hpp"
#include "hwlv/market_models.hpp"
#include "hwlv/normal.hpp"
#include "hwlv/parallel.hpp"

namespace hwlv {

enum class SpotScheme { LogEuler, Euler };
enum class RateScheme { Exact, Euler };

struct McConfig {
    std::size_t n_paths = 100000;  // pairs when antithetic
    double dt_mc = 1.0 / 300.0;
    std::uint64_t seed = 20240601;
    bool antithetic = true;
    std::size_t threads = 1;
    std::size_t n_batches = 64;  // fixes the random substreams, independent of threads
    SpotScheme spot = SpotScheme::LogEuler;
    RateScheme rate = RateScheme::Exact;

    void validate() const {
        if (n_paths < 1) throw InvalidInput("mc: n_paths must be >= 1");
        if (!(dt_mc > 0.0) || !std::isfinite(dt_mc)) throw InvalidInput("mc: dt_mc must be > 0");
        if (n_batches < 1) throw InvalidInput("mc: n_batches must be >= 1");
    }
    std::size_t effective_paths() const { return antithetic ? 2 * n_paths : n_paths; }
};

struct McEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t n_effective = 0;
};

struct PathState {
    double s_T = 0.0;
    double r_T = 0.0;
    double integrated_rate = 0.0;  // trapezoid along the path
    double discount() const { return std::exp(-integrated_rate); }
};

using Payoff = std::function<double(const PathState&)>;

// Aborted-path tolerance: above this fraction the run is abandoned.
inline constexpr double kMaxAbortedFraction = 1e-4;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// standard normal by inversion so that -xi is the exact antithetic draw
class NormalStream {
public:
    NormalStream(std::uint64_t seed, std::uint64_t stream) : eng_(splitmix64(seed ^ splitmix64(stream + 1))) {}
    double operator()() {
        const double u = (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
        return norm_inv(u);
    }

private:
    std::mt19937_64 eng_;
};

// Running mean and sum of squared deviations (Welford), mergeable.
struct Moments {
    double n = 0.0, mean = 0.0, m2 = 0.0;
    void add(double x) {
        n += 1.0;
        const double d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    void merge(const Moments& o) {
        if (o.n == 0.0) return;
        const double tot = n + o.n;
        const double d = o.mean - mean;
        mean += d * o.n / tot;
        m2 += o.m2 + d * d * n * o.n / tot;
        n = tot;
    }
};

struct TimeLattice {
    std::vector<double> t;  // t_0 = 0, ..., t_N = T; last step shortened if needed
};

inline TimeLattice time_lattice(double T, double dt) {
    const double k = T / dt;
    auto n = static_cast<std::size_t>(std::ceil(k - 1e-9));
    n = std::max<std::size_t>(n, 1);
    TimeLattice l;
    l.t.resize(n + 1);
    for (std::size_t i = 0; i < n; ++i) l.t[i] = static_cast<double>(i) * dt;
    l.t[n] = T;
    return l;
}

// One path driven by the normal pairs produced by `draw`; sign = -1 mirrors them.
class PathStepper {
public:
    PathStepper(const HybridModel& m, const McConfig& cfg, const TimeLattice& lat) : m_(m), cfg_(cfg), lat_(lat) {
        const std::size_t n = lat.t.size() - 1;
        decay_.resize(n);
        sd_.resize(n);
        shift_.resize(n);
        const double a = m.rate.a, s2 = m.rate.sigma2;
        // alpha(t) = f(0,t) + sigma2^2/(2a^2) (1 - e^{-at})^2 is the mean-reversion level
        // of the fitted process: r(t) = x(t) + alpha(t), x a zero-level OU
        auto alpha = [&](double t) {
            const double e = -std::expm1(-a * t);
            return forward_rate(m.rate, t) + 0.5 * s2 * s2 / (a * a) * e * e;
        };
        for (std::size_t k = 0; k < n; ++k) {
            const double h = lat.t[k + 1] - lat.t[k];
            decay_[k] = std::exp(-a * h);
            sd_[k] = s2 * std::sqrt(-std::expm1(-2.0 * a * h) / (2.0 * a));
            shift_[k] = alpha(lat.t[k + 1]) - alpha(lat.t[k]) * decay_[k];
        }
        rho_c_ = std::sqrt(std::max(0.0, 1.0 - m.rho * m.rho));
    }

    std::size_t steps() const { return decay_.size(); }

    // z holds 2 normals per step
    PathState run(std::span<const double> z, double sign) const {
        double S = m_.s0, r = m_.rate.r0, R = 0.0;
        for (std::size_t k = 0; k < decay_.size(); ++k) {
            const double t = lat_.t[k];
            const double h = lat_.t[k + 1] - t;
            const double x1 = sign * z[2 * k];
            const double x2 = sign * z[2 * k + 1];
            const double xr = m_.rho * x1 + rho_c_ * x2;
            const double sig = S > 0.0 ? local_vol(m_.vol, t, S) : 0.0;
            double r_next;
            if (cfg_.rate == RateScheme::Exact) {
                r_next = r * decay_[k] + shift_[k] + sd_[k] * xr;
            } else {
                r_next = r + m_.rate.a * (theta_at(m_.rate, t) - r) * h + m_.rate.sigma2 * std::sqrt(h) * xr;
            }
            const double dR = 0.5 * (r + r_next) * h;
            if (cfg_.spot == SpotScheme::LogEuler) {
                // trapezoid rate drift keeps e^{-R} S an exact martingale
                S *= std::exp(dR - 0.5 * sig * sig * h + sig * std::sqrt(h) * x1);
            } else if (S > 0.0) {
                S += r * S * h + sig * S * std::sqrt(h) * x1;
                if (S <= 1e-12) S = 0.0;  // absorbed
            }
            R += dR;
            r = r_next;
        }
        return {S, r, R};
    }

private:
    const HybridModel& m_;
    const McConfig& cfg_;
    const TimeLattice& lat_;
    std::vector<double> decay_, sd_, shift_;
    double rho_c_ = 0.0;
};

inline bool finite_state(const PathState& p) {
    return std::isfinite(p.s_T) && std::isfinite(p.r_T) && std::isfinite(p.integrated_rate);
}

inline std::size_t batch_size(const McConfig& cfg, std::size_t b) {
    return cfg.n_paths * (b + 1) / cfg.n_batches - cfg.n_paths * b / cfg.n_batches;
}

// Calls visit(batch, pair_of_states, count) for every path (pair), batch by
// batch; batches are spread over threads but each uses its own substream.
template <class Visit>
std::size_t for_each_path(const HybridModel& m, double T, const McConfig& cfg, Visit&& visit) {
    validate(m);
    cfg.validate();
    if (!(T > 0.0)) throw InvalidInput("mc: T must be > 0");
    const auto lat = time_lattice(T, cfg.dt_mc);
    const PathStepper stepper(m, cfg, lat);
    std::vector<std::size_t> aborted(cfg.n_batches, 0);
    parallel_for(cfg.n_batches, cfg.threads, [&](std::size_t b0, std::size_t b1, std::size_t) {
        std::vector<double> z(2 * stepper.steps());
        for (std::size_t b = b0; b < b1; ++b) {
            NormalStream gen(cfg.seed, b);
            const std::size_t n = batch_size(cfg, b);
            for (std::size_t p = 0; p < n; ++p) {
                for (auto& v : z) v = gen();
                const PathState a = stepper.run(z, 1.0);
                if (cfg.antithetic) {
                    const PathState c = stepper.run(z, -1.0);
                    if (!finite_state(a) || !finite_state(c)) {
                        aborted[b] += 2;
                        continue;
                    }
                    visit(b, a, &c);
                } else {
                    if (!finite_state(a)) {
                        ++aborted[b];
                        continue;
                    }
                    visit(b, a, static_cast<const PathState*>(nullptr));
                }
            }
        }
    });
    std::size_t total = 0;
    for (auto a : aborted) total += a;
    if (static_cast<double>(total) > kMaxAbortedFraction * static_cast<double>(cfg.effective_paths()))
        throw McAborted("mc: " + std::to_string(total) + " of " + std::to_string(cfg.effective_paths()) +
                        " paths produced non-finite values");
    return total;
}

}  // namespace detail

// Mean and standard error of each payoff. Under antithetic sampling the
// error comes from the spread of pair averages; n_effective counts paths.
inline std::vector<McEstimate> simulate_paths(const HybridModel& m, double T, const McConfig& cfg,
                                              const std::vector<Payoff>& payoffs) {
    const std::size_t np = payoffs.size();
    std::vector<std::vector<detail::Moments>> acc(cfg.n_batches, std::vector<detail::Moments>(np));
    const std::size_t aborted =
        detail::for_each_path(m, T, cfg, [&](std::size_t b, const PathState& a, const PathState* c) {
            for (std::size_t k = 0; k < np; ++k) {
                const double v = c ? 0.5 * (payoffs[k](a) + payoffs[k](*c)) : payoffs[k](a);
                acc[b][k].add(v);
            }
        });
    std::vector<McEstimate> out(np);
    for (std::size_t k = 0; k < np; ++k) {
        detail::Moments tot;
        for (std::size_t b = 0; b < cfg.n_batches; ++b) tot.merge(acc[b][k]);
        out[k].mean = tot.mean;
        out[k].standard_error = tot.n > 1.0 ? std::sqrt(tot.m2 / (tot.n - 1.0) / tot.n) : 0.0;
        out[k].n_effective = cfg.effective_paths() - aborted;
    }
    return out;
}

inline McEstimate simulate_path(const HybridModel& m, double T, const McConfig& cfg, const Payoff& payoff) {
    return simulate_paths(m, T, cfg, {payoff}).front();
}

// Discounted call payoffs e^{-int r} (S_T - K)^+ for a strike list.
inline std::vector<McEstimate> mc_call_prices(const HybridModel& m, double T, const McConfig& cfg,
                                              const std::vector<double>& strikes) {
    std::vector<Payoff> p;
    p.reserve(strikes.size());
    for (double K : strikes)
        p.emplace_back([K](const PathState& s) { return s.discount() * std::max(s.s_T - K, 0.0); });
    return simulate_paths(m, T, cfg, p);
}

// ---------------------------------------------------------------- conditional Z

struct KernelBandwidth {
    double log_s = 0.02;
    double r = 0.02;
};

struct ConditionalZ {
    double s = 0.0, r = 0.0;  // center
    double estimate = 0.0;
    double kernel_se = 0.0;
    double ess = 0.0;  // (sum w)^2 / sum w^2
    bool reliable = false;
};

inline constexpr double kMinKernelEss = 100.0;

// Nadaraya-Watson estimate of E[e^{-int r} | S(T) = s, r(T) = r] with a
// product Gaussian kernel in (log S, r).
inline std::vector<ConditionalZ> conditional_Z_estimate(const HybridModel& m, double T, const McConfig& cfg,
                                                        const std::vector<std::pair<double, double>>& centers,
                                                        KernelBandwidth h) {
    if (!(h.log_s > 0.0) || !(h.r > 0.0)) throw InvalidInput("conditional_Z: bandwidth must be > 0");
    for (const auto& c : centers)
        if (!(c.first > 0.0)) throw InvalidInput("conditional_Z: center S must be > 0");
    // per batch, per center: sum w, w x, w^2, w^2 x, w^2 x^2 with x shifted by e^{-r0 T}
    const std::size_t nc = centers.size();
    std::vector<std::vector<std::array<double, 5>>> acc(cfg.n_batches, std::vector<std::array<double, 5>>(nc));
    const double shift = std::exp(-m.rate.r0 * T);
    auto add = [&](std::size_t b, const PathState& p) {
        if (!(p.s_T > 0.0)) return;
        const double y = std::log(p.s_T);
        const double x = p.discount() - shift;
        for (std::size_t c = 0; c < nc; ++c) {
            const double u = (y - std::log(centers[c].first)) / h.log_s;
            const double v = (p.r_T - centers[c].second) / h.r;
            const double w = std::exp(-0.5 * (u * u + v * v));
            auto& a = acc[b][c];
            a[0] += w;
            a[1] += w * x;
            a[2] += w * w;
            a[3] += w * w * x;
            a[4] += w * w * x * x;
        }
    };
    detail::for_each_path(m, T, cfg, [&](std::size_t b, const PathState& a, const PathState* c) {
        add(b, a);
        if (c) add(b, *c);
    });
    std::vector<ConditionalZ> out(nc);
    for (std::size_t c = 0; c < nc; ++c) {
        std::array<double, 5> s{};
        for (std::size_t b = 0; b < cfg.n_batches; ++b)
            for (std::size_t k = 0; k < 5; ++k) s[k] += acc[b][c][k];
        auto& o = out[c];
        o.s = centers[c].first;
        o.r = centers[c].second;
        if (!(s[0] > 0.0))
            throw NoData("conditional_Z: no kernel weight at center (" + std::to_string(o.s) + ", " +
                         std::to_string(o.r) + ")");
        const double mx = s[1] / s[0];
        o.estimate = shift + mx;
        const double resid = std::max(0.0, s[4] - 2.0 * mx * s[3] + mx * mx * s[2]);
        o.kernel_se = std::sqrt(resid) / s[0];
        o.ess = s[0] * s[0] / s[2];
        o.reliable = o.ess >= kMinKernelEss;
    }
    return out;
}

}  // namespace hwlv
