#pragma once

// Corrective terms, Dupire and stochastic-rate local volatilities, call
// pricing by integration of a P*Z snapshot, and the maturity bootstrap.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hwlv/analytic_oracle.hpp"
#include "hwlv/error.hpp"
#include "hwlv/grid.hpp"
#include "hwlv/local_vol_surface.hpp"
#include "hwlv/market_models.hpp"
#include "hwlv/pde_engine.hpp"

namespace hwlv {

// ---------------------------------------------------------------- S-marginals

// Piecewise-linear function of S on the full node set of a grid
// (boundary nodes included, where it vanishes).
class SMarginal {
public:
    template <class W>
    SMarginal(const Field2D& field, W&& r_weight) : grid_(field.grid()) {
        const auto inner = field.s_marginal(std::forward<W>(r_weight));
        values_.assign(grid_.n_s + 2, 0.0);
        std::copy(inner.begin(), inner.end(), values_.begin() + 1);
    }

    double node(std::size_t k) const { return grid_.s_min + static_cast<double>(k) * grid_.ds(); }
    std::size_t nodes() const { return values_.size(); }

    // cell index c with node(c) <= S < node(c+1)
    std::size_t cell(double S) const {
        const double x = (S - grid_.s_min) / grid_.ds();
        const auto c = static_cast<std::ptrdiff_t>(std::floor(x));
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(values_.size()) - 2));
    }

    double value(double S) const {
        const std::size_t c = cell(S);
        const double w = (S - node(c)) / grid_.ds();
        return (1.0 - w) * values_[c] + w * values_[c + 1];
    }

    // exact integrals of g and S g over [lo, hi], both inside one cell
    double cell_integral(double lo, double hi) const { return 0.5 * (hi - lo) * (value(lo) + value(hi)); }
    double cell_moment(double lo, double hi) const {
        const double mid = 0.5 * (lo + hi);
        return (hi - lo) / 6.0 * (lo * value(lo) + 4.0 * mid * value(mid) + hi * value(hi));
    }

    // int_lo^hi g(S) dS (and S g(S)) for any lo <= hi in [s_min, s_max]
    double integral(double lo, double hi) const { return accumulate(lo, hi, false); }
    double moment(double lo, double hi) const { return accumulate(lo, hi, true); }

    const Grid2D& grid() const { return grid_; }

private:
    double accumulate(double lo, double hi, bool first_moment) const {
        if (hi <= lo) return 0.0;
        double total = 0.0;
        std::size_t c = cell(lo);
        double a = lo;
        while (a < hi) {
            const double b = std::min(hi, node(c + 1));
            total += first_moment ? cell_moment(a, b) : cell_integral(a, b);
            a = b;
            if (++c + 1 >= values_.size()) break;
        }
        return total;
    }

    Grid2D grid_;
    std::vector<double> values_;
};

namespace detail {

inline void check_strikes(const Grid2D& g, const std::vector<double>& strikes, bool closed) {
    for (std::size_t i = 0; i < strikes.size(); ++i) {
        const double K = strikes[i];
        const bool inside = closed ? (K >= g.s_min && K <= g.s_max) : (K > g.s_min && K < g.s_max);
        if (!inside) throw InvalidInput("strike " + std::to_string(K) + " outside the grid");
        if (i > 0 && !(K > strikes[i - 1])) throw InvalidInput("strikes must be strictly increasing");
    }
}

}  // namespace detail

// ---------------------------------------------------------------- corrective terms

// Adj(K) = E[Z(T) (r(T) - f(0,T)) 1{S(T) > K}] on a strike grid.
struct CorrectiveTermCurve {
    double maturity = 0.0;
    std::vector<double> strikes;
    std::vector<double> adj;

    // linear between nodes, flat outside
    double at(double K) const {
        if (strikes.empty()) throw InvalidInput("empty corrective-term curve");
        if (K <= strikes.front()) return adj.front();
        if (K >= strikes.back()) return adj.back();
        const auto it = std::upper_bound(strikes.begin(), strikes.end(), K);
        const std::size_t j = static_cast<std::size_t>(it - strikes.begin()) - 1;
        const double w = (K - strikes[j]) / (strikes[j + 1] - strikes[j]);
        return (1.0 - w) * adj[j] + w * adj[j + 1];
    }
};

// Adj(K_N) from one tail integral, then Adj(K_i) = Adj(K_{i+1}) + slice(K_i, K_{i+1}].
// The r-integral is the trapezoid rule; along S the marginal is integrated
// exactly as a piecewise-linear function, cutting cells at the strikes.
inline CorrectiveTermCurve corrective_terms(const Field2D& field, double maturity, double f0T,
                                            const std::vector<double>& strikes) {
    const Grid2D& g = field.grid();
    detail::check_strikes(g, strikes, false);
    CorrectiveTermCurve out;
    out.maturity = maturity;
    out.strikes = strikes;
    out.adj.assign(strikes.size(), 0.0);
    if (strikes.empty()) return out;

    const SMarginal marg(field, [f0T](double r) { return r - f0T; });
    const std::size_t n = strikes.size();
    out.adj[n - 1] = marg.integral(strikes[n - 1], g.s_max);
    for (std::size_t i = n - 1; i-- > 0;)
        out.adj[i] = out.adj[i + 1] + marg.integral(strikes[i], strikes[i + 1]);
    return out;
}

// Direct tail integral for a single strike (no telescoping).
inline double corrective_term_direct(const Field2D& field, double f0T, double K) {
    const SMarginal marg(field, [f0T](double r) { return r - f0T; });
    return marg.integral(K, field.grid().s_max);
}

// ---------------------------------------------------------------- pricing

// C(K) = int (S - K)^+ (P Z) dS dr = M1(K) - K M0(K), with M0, M1 the tail
// mass and first moment of the S-marginal, accumulated in one descending sweep.
inline std::vector<double> price_calls_from_pz(const Field2D& field, const std::vector<double>& strikes) {
    const Grid2D& g = field.grid();
    detail::check_strikes(g, strikes, true);
    const SMarginal marg(field, [](double) { return 1.0; });
    const std::size_t n = strikes.size();
    std::vector<double> prices(n, 0.0);
    double m0 = 0.0, m1 = 0.0;
    double upper = g.s_max;
    for (std::size_t k = n; k-- > 0;) {
        const double K = strikes[k];
        m0 += marg.integral(K, upper);
        m1 += marg.moment(K, upper);
        upper = K;
        prices[k] = m1 - K * m0;
    }
    return prices;
}

// ---------------------------------------------------------------- call surfaces

enum class PriceProvider { Analytic, Pde, External };

inline const char* to_string(PriceProvider p) {
    switch (p) {
        case PriceProvider::Analytic: return "analytic";
        case PriceProvider::Pde: return "pde";
        case PriceProvider::External: return "external";
    }
    return "?";
}

struct CallDerivatives {
    double c_T = 0.0;
    double c_K = 0.0;
    double c_KK = 0.0;
};

// C(T, K) on a (maturity, strike) lattice. An analytic surface keeps its
// generating model and differentiates in closed form; other providers use
// lattice finite differences.
class CallSurface {
public:
    CallSurface(std::vector<double> maturities, std::vector<double> strikes, std::vector<double> prices,
                PriceProvider provider = PriceProvider::External)
        : maturities_(std::move(maturities)), strikes_(std::move(strikes)), prices_(std::move(prices)),
          provider_(provider) {
        if (maturities_.empty() || strikes_.empty()) throw InvalidInput("call surface: empty axes");
        if (prices_.size() != maturities_.size() * strikes_.size())
            throw InvalidInput("call surface: price count mismatch");
        for (std::size_t i = 1; i < maturities_.size(); ++i)
            if (!(maturities_[i] > maturities_[i - 1])) throw InvalidInput("call surface: maturities must increase");
        for (std::size_t j = 1; j < strikes_.size(); ++j)
            if (!(strikes_[j] > strikes_[j - 1])) throw InvalidInput("call surface: strikes must increase");
    }

    static CallSurface analytic(const HybridModel& m, std::vector<double> maturities, std::vector<double> strikes) {
        std::vector<double> p;
        p.reserve(maturities.size() * strikes.size());
        for (double T : maturities)
            for (double K : strikes) p.push_back(price_of(bshw_call(m, T, K)));
        CallSurface s(std::move(maturities), std::move(strikes), std::move(p), PriceProvider::Analytic);
        s.model_ = m;
        return s;
    }

    const std::vector<double>& maturities() const { return maturities_; }
    const std::vector<double>& strikes() const { return strikes_; }
    PriceProvider provider() const { return provider_; }
    double price(std::size_t i, std::size_t j) const { return prices_[i * strikes_.size() + j]; }

    // Decreasing and convex in K at every maturity (tolerance 1e-10).
    void check_arbitrage(double tol = 1e-10) const {
        const std::size_t nk = strikes_.size();
        for (std::size_t i = 0; i < maturities_.size(); ++i) {
            for (std::size_t j = 1; j < nk; ++j)
                if (price(i, j) > price(i, j - 1) + tol)
                    throw InvalidInput("call surface not decreasing in K at T=" + std::to_string(maturities_[i]));
            for (std::size_t j = 1; j + 1 < nk; ++j) {
                const double left = (price(i, j) - price(i, j - 1)) / (strikes_[j] - strikes_[j - 1]);
                const double right = (price(i, j + 1) - price(i, j)) / (strikes_[j + 1] - strikes_[j]);
                if (right - left < -tol)
                    throw InvalidInput("call surface not convex in K at T=" + std::to_string(maturities_[i]) +
                                       " K=" + std::to_string(strikes_[j]));
            }
        }
    }

    CallDerivatives derivatives(double T, double K) const {
        if (provider_ == PriceProvider::Analytic && model_) {
            const auto pg = bshw_call_greeks(*model_, T, K);
            return {pg.c_T, pg.c_K, pg.c_KK};
        }
        const std::size_t i = node_index(maturities_, T, "maturity");
        const std::size_t j = node_index(strikes_, K, "strike");
        if (maturities_.size() < 2) throw InvalidInput("lattice C_T needs at least two maturities");
        if (strikes_.size() < 3) throw InvalidInput("lattice C_KK needs at least three strikes");
        CallDerivatives d;
        d.c_T = first_derivative(maturities_, i, [&](std::size_t k) { return price(k, j); });
        d.c_K = first_derivative(strikes_, j, [&](std::size_t k) { return price(i, k); });
        const std::size_t jc = std::clamp<std::size_t>(j, 1, strikes_.size() - 2);
        const double hl = strikes_[jc] - strikes_[jc - 1], hr = strikes_[jc + 1] - strikes_[jc];
        d.c_KK = 2.0 * (hl * price(i, jc + 1) - (hl + hr) * price(i, jc) + hr * price(i, jc - 1)) /
                 (hl * hr * (hl + hr));
        return d;
    }

private:
    static std::size_t node_index(const std::vector<double>& v, double x, const char* what) {
        for (std::size_t k = 0; k < v.size(); ++k)
            if (std::abs(v[k] - x) <= 1e-12 * std::max(1.0, std::abs(x))) return k;
        throw InvalidInput(std::string("lattice derivative requested off the lattice ") + what);
    }

    // central (non-uniform) inside, one-sided at the edges
    template <class F>
    static double first_derivative(const std::vector<double>& x, std::size_t k, F&& f) {
        const std::size_t n = x.size();
        if (k == 0) return (f(1) - f(0)) / (x[1] - x[0]);
        if (k == n - 1) return (f(n - 1) - f(n - 2)) / (x[n - 1] - x[n - 2]);
        const double hl = x[k] - x[k - 1], hr = x[k + 1] - x[k];
        return (hl * hl * f(k + 1) + (hr * hr - hl * hl) * f(k) - hr * hr * f(k - 1)) / (hl * hr * (hl + hr));
    }

    std::vector<double> maturities_;
    std::vector<double> strikes_;
    std::vector<double> prices_;
    PriceProvider provider_;
    std::optional<HybridModel> model_;
};

// ---------------------------------------------------------------- local volatility

inline constexpr double kButterflyFloor = 1e-12;

struct DupireTerms {
    CallDerivatives d;
    double forward = 0.0;
    double numerator = 0.0;    // C_T + K f C_K
    double denominator = 0.0;  // K^2 C_KK / 2
    double variance = 0.0;     // sigma_Dup^2
};

inline DupireTerms dupire_terms(const CallSurface& surface, const ForwardCurve& f0, double T, double K,
                                double floor = kButterflyFloor) {
    if (!(T > 0.0) || !(K > 0.0)) throw InvalidInput("dupire_vol: need T > 0 and K > 0");
    DupireTerms t;
    t.d = surface.derivatives(T, K);
    if (!(t.d.c_KK > floor)) throw ButterflyDegenerate(T, K, t.d.c_KK);
    t.forward = f0.value(T);
    t.numerator = t.d.c_T + K * t.forward * t.d.c_K;
    t.denominator = 0.5 * K * K * t.d.c_KK;
    t.variance = t.numerator / t.denominator;
    return t;
}

// sigma_Dup^2 = (C_T + K f(0,T) C_K) / (K^2 C_KK / 2)
inline double dupire_vol(const CallSurface& surface, const ForwardCurve& f0, double T, double K,
                         double floor = kButterflyFloor) {
    const auto t = dupire_terms(surface, f0, T, K, floor);
    if (t.numerator < 0.0) {
        NegativeVarianceInfo info{T, K, t.variance, 0.0, t.d.c_KK, t.variance};
        throw NegativeVariance(info);
    }
    return t.variance;
}

// sigma^2 = sigma_Dup^2 - Adj(K) / (K C_KK / 2)
inline double local_vol_stochastic_rates(const CallSurface& surface, const ForwardCurve& f0,
                                         const CorrectiveTermCurve& adj, double T, double K,
                                         double floor = kButterflyFloor) {
    if (std::abs(adj.maturity - T) > 1e-12 * std::max(1.0, T))
        throw InvalidInput("corrective terms computed at a different maturity");
    const auto t = dupire_terms(surface, f0, T, K, floor);
    const double a = adj.at(K);
    const double var = t.variance - a / (0.5 * K * t.d.c_KK);
    if (!(var >= 0.0)) throw NegativeVariance({T, K, t.variance, a, t.d.c_KK, var});
    return var;
}

// ---------------------------------------------------------------- bootstrap

struct CalibrationSettings {
    double ds = 0.0156;
    double dr = 0.0026;
    double dt = 0.0099;
    std::optional<GridBounds> bounds;  // default_bounds() at the last maturity when empty
    double kernel_cells = kDefaultKernelCells;
    double butterfly_floor = kButterflyFloor;
    bool continuation = false;          // resume from the previous maturity instead of restarting at t = 0
    std::size_t fixed_point_iterations = 0;  // 0 = single pass
    double fixed_point_tolerance = 1e-4;
    std::size_t threads = 1;
};

struct MaturityReport {
    double maturity = 0.0;
    std::size_t steps = 0;
    double max_mass_drift = 0.0;
    double max_negative_fraction = 0.0;
    double max_negative_mass_ratio = 0.0;
    double adj_full_domain = 0.0;  // Adj at s_min
    std::size_t passes = 1;
    std::vector<double> skipped_strikes;
    std::vector<std::string> warnings;
};

struct CalibrationResult {
    LocalVolSurface surface;
    std::vector<CorrectiveTermCurve> corrective_terms;
    std::vector<MaturityReport> report;
    Grid2D grid;
};

namespace detail {

// sqrt of the positive sigma^2 values; degenerate nodes are filled flat
// from the nearest valid strike.
inline std::vector<double> fill_slice(const std::vector<double>& var, const std::vector<bool>& valid) {
    const std::size_t n = var.size();
    std::vector<double> s(n, 0.0);
    std::ptrdiff_t last = -1;
    for (std::size_t j = 0; j < n; ++j)
        if (valid[j]) last = static_cast<std::ptrdiff_t>(j);
    if (last < 0) throw InvalidInput("no strike with a usable local variance in this slice");
    for (std::size_t j = 0; j < n; ++j) {
        if (valid[j]) {
            s[j] = std::sqrt(var[j]);
            continue;
        }
        std::size_t best = n;
        for (std::size_t d = 1; d < n && best == n; ++d) {
            if (j >= d && valid[j - d]) best = j - d;
            else if (j + d < n && valid[j + d]) best = j + d;
        }
        s[j] = std::sqrt(var[best]);
    }
    return s;
}

}  // namespace detail

// Bootstrap over market maturities. For each T_i the forward equation is
// solved from t = 0 (or from T_{i-1} in continuation mode) with the local
// vol calibrated so far, piecewise constant in t; the slice at T_i starts as
// a copy of the previous one (the deterministic-rate Dupire vol for T_1).
// Corrective terms from the P*Z snapshot at T_i then give sigma(T_i, .).
inline CalibrationResult calibrate(const CallSurface& market, const HybridModel& m0,
                                   const CalibrationSettings& cfg = {}) {
    validate(m0);
    market.check_arbitrage();
    const auto& mats = market.maturities();
    const auto& strikes = market.strikes();
    const std::size_t nk = strikes.size();
    const ForwardCurve f0 = forward_curve_of(m0.rate);

    // initial slice: deterministic-rate Dupire at T_1
    std::vector<double> guess_var(nk, 0.0);
    std::vector<bool> guess_ok(nk, false);
    for (std::size_t j = 0; j < nk; ++j) {
        try {
            const auto t = dupire_terms(market, f0, mats[0], strikes[j], cfg.butterfly_floor);
            if (t.variance > 0.0) {
                guess_var[j] = t.variance;
                guess_ok[j] = true;
            }
        } catch (const ButterflyDegenerate&) {
        }
    }
    std::vector<double> slice = detail::fill_slice(guess_var, guess_ok);

    const double sigma_ref = *std::max_element(slice.begin(), slice.end());
    GridBounds b;
    if (cfg.bounds) {
        b = *cfg.bounds;
    } else {
        HybridModel ref = m0;
        ref.vol = ConstantVol{sigma_ref};
        b = default_bounds(ref, mats.back());
    }
    const Grid2D space = Grid2D::from_spacing(b.s_min, b.s_max, b.r_min, b.r_max, cfg.ds, cfg.dr, mats.back(), cfg.dt);

    CalibrationResult result;
    result.grid = space;
    std::vector<double> sigma;  // calibrated slices, row-major
    std::optional<Field2D> carried;  // continuation: field at T_{i-1}
    double carried_t = 0.0;

    auto make_model = [&](const std::vector<double>& trial, std::size_t i) {
        std::vector<double> nodes = sigma;
        nodes.insert(nodes.end(), trial.begin(), trial.end());
        std::vector<double> ts(mats.begin(), mats.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        auto surf = std::make_shared<LocalVolSurface>(std::move(ts), strikes, std::move(nodes),
                                                      TimeInterpolation::PiecewiseConstant);
        HybridModel m = m0;
        m.vol = SurfaceVol{std::move(surf)};
        return m;
    };

    EvolveOptions eo;
    eo.threads = cfg.threads;

    for (std::size_t i = 0; i < mats.size(); ++i) {
        const double T = mats[i];
        MaturityReport rep;
        rep.maturity = T;
        const double t0 = cfg.continuation && carried ? carried_t : 0.0;
        const auto n_steps = static_cast<std::size_t>(std::max(1.0, std::round((T - t0) / cfg.dt)));
        const double dt = (T - t0) / static_cast<double>(n_steps);
        const double fT = f0.value(T);

        auto solve = [&](const std::vector<double>& trial) {
            const HybridModel m = make_model(trial, i);
            Grid2D g = space;
            Field2D start = carried && cfg.continuation
                                ? *carried
                                : init_dirac(g, m0.s0, m0.rate.r0, DiracKernel::grid_cells(g, cfg.kernel_cells));
            const double snap[] = {T};
            return evolve_from(m, std::move(start), t0, dt, n_steps, snap, eo);
        };

        std::vector<double> var(nk, 0.0);
        std::vector<bool> ok(nk, false);
        std::vector<NegativeVarianceInfo> offending;
        EvolveResult ev;
        CorrectiveTermCurve adj;
        std::size_t passes = 0;
        const std::size_t max_passes = 1 + cfg.fixed_point_iterations;
        while (true) {
            ++passes;
            ev = solve(slice);
            const Field2D& pz = ev.at(T);
            adj = corrective_terms(pz, T, fT, strikes);
            offending.clear();
            rep.skipped_strikes.clear();
            for (std::size_t j = 0; j < nk; ++j) {
                ok[j] = false;
                try {
                    var[j] = local_vol_stochastic_rates(market, f0, adj, T, strikes[j], cfg.butterfly_floor);
                    ok[j] = true;
                } catch (const ButterflyDegenerate&) {
                    rep.skipped_strikes.push_back(strikes[j]);
                } catch (const NegativeVariance& e) {
                    offending.push_back(e.info());
                }
            }
            if (!offending.empty()) throw CalibrationFailure(offending);
            const auto next = detail::fill_slice(var, ok);
            double change = 0.0;
            for (std::size_t j = 0; j < nk; ++j) change = std::max(change, std::abs(next[j] - slice[j]));
            slice = next;
            if (passes >= max_passes || change < cfg.fixed_point_tolerance) break;
        }

        for (double K : rep.skipped_strikes)
            rep.warnings.push_back("C_KK below floor at K=" + std::to_string(K) + "; filled from nearest strike");
        rep.passes = passes;
        rep.steps = n_steps;
        rep.max_mass_drift = ev.max_abs_drift();
        rep.max_negative_mass_ratio = ev.max_negative_mass_ratio();
        for (const auto& s : ev.steps) rep.max_negative_fraction = std::max(rep.max_negative_fraction, s.negative_fraction);
        rep.adj_full_domain = ev.at(T).integrate([fT](double, double r) { return r - fT; });
        rep.warnings.insert(rep.warnings.end(), ev.warnings.begin(), ev.warnings.end());

        sigma.insert(sigma.end(), slice.begin(), slice.end());
        result.corrective_terms.push_back(adj);
        result.report.push_back(std::move(rep));

        if (cfg.continuation) {
            // re-run the last interval with the calibrated slice so the carried
            // field is consistent with the final surface
            HybridModel m = m0;
            auto surf = std::make_shared<LocalVolSurface>(
                std::vector<double>(mats.begin(), mats.begin() + static_cast<std::ptrdiff_t>(i) + 1), strikes, sigma,
                TimeInterpolation::PiecewiseConstant);
            m.vol = SurfaceVol{std::move(surf)};
            Field2D start = carried ? *carried
                                    : init_dirac(space, m0.s0, m0.rate.r0, DiracKernel::grid_cells(space, cfg.kernel_cells));
            const double snap[] = {T};
            auto fin = evolve_from(m, std::move(start), t0, dt, n_steps, snap, eo);
            carried = fin.at(T);
            carried_t = T;
        }
    }

    result.surface = LocalVolSurface(mats, strikes, std::move(sigma), TimeInterpolation::Bilinear);
    return result;
}

}  // namespace hwlv
