// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hwlv/analytic_oracle.hpp"
#include "hwlv/calibration.hpp"
#include "hwlv/monte_carlo.hpp"
#include "hwlv/pde_engine.hpp"
#include "hwlv/tridiagonal.hpp"
#include "oracles.hpp"

using namespace hwlv;

namespace {

int failures = 0;

void report(const char* id, bool ok, const std::string& detail) {
    std::printf("%s %s %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::vector<double> range(double lo, double hi, double step) {
    std::vector<double> v;
    const int n = static_cast<int>(std::round((hi - lo) / step));
    for (int k = 0; k <= n; ++k) v.push_back(lo + k * step);
    return v;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct SetCase {
    const char* name;
    HybridModel m;
    double T;
    PdeSettings ps;
};

SetCase set_case(int k) {
    PdeSettings ps;
    if (k == 1) return {"set1", oracle::set1(), 1.0, ps};
    ps.ds = 0.025;
    ps.dr = 0.0037;
    ps.dt = 0.019;
    return {"set2", oracle::set2(), 2.0, ps};
}

PdeSettings halved(PdeSettings ps) {
    ps.ds *= 0.5;
    ps.dr *= 0.5;
    ps.dt *= 0.5;
    return ps;
}

// AC1, AC2 and AC4 share one solve per set
void pricing_and_mass() {
    bool mass_ok = true;
    std::string mass_detail;
    for (int k : {1, 2}) {
        const auto c = set_case(k);
        const auto t0 = std::chrono::steady_clock::now();
        const auto ev = solve_pde(c.m, c.T, c.ps);
        const auto K = range(0.5, 1.5, 0.01);
        const auto p = price_calls_from_pz(ev.at(c.T), K);
        const double secs = seconds_since(t0);
        double worst = 0.0, kw = 0.0;
        for (std::size_t j = 0; j < K.size(); ++j) {
            const double d = std::abs(p[j] - oracle::bshw_reference(c.m, c.T, K[j]).call);
            if (d > worst) worst = d, kw = K[j];
        }
        report(k == 1 ? "AC1" : "AC2", worst <= 5e-4 && (k != 1 || secs < 60.0),
               std::string(c.name) + " max|PDE-analytic|=" + fmt("%.3g", worst) + " at K=" + fmt("%.2f", kw) +
                   " (tol 5e-4) solve+price " + fmt("%.2f", secs) + "s");

        double mass_err = 0.0, drift = 0.0;
        for (const auto& s : ev.steps) {
            mass_err = std::max(mass_err, std::abs(s.mass - zc_price(c.m.rate, s.t)));
            drift = std::max(drift, std::abs(s.drift()));
        }
        mass_ok = mass_ok && mass_err <= 1e-12 && drift <= 0.05;
        mass_detail += std::string(c.name) + ": max|mass-ZC|=" + fmt("%.2g", mass_err) + " max|drift|=" +
                       fmt("%.3g", drift) + " over " + std::to_string(ev.steps.size()) + " steps; ";
    }
    report("AC4", mass_ok, mass_detail + "(tol 1e-12, 5%)");
}

void field_fidelity() {
    bool ok = true;
    std::string detail;
    for (int k : {1, 2}) {
        const auto c = set_case(k);
        const double zc = zc_price(c.m.rate, c.T);
        auto l1_for = [&](const PdeSettings& ps) {
            const auto ev = solve_pde(c.m, c.T, ps);
            const auto& f = ev.at(c.T);
            return oracle::l1_distance(f, oracle::analytic_field(c.m, c.T, f.grid()), zc);
        };
        const double base = l1_for(c.ps);
        const double fine = l1_for(halved(c.ps));
        const double gain = base / fine;
        ok = ok && base <= 2e-2 && gain >= 1.5;
        detail += std::string(c.name) + ": L1=" + fmt("%.3g", base) + " halved=" + fmt("%.3g", fine) + " ratio=" +
                  fmt("%.2f", gain) + "; ";
    }
    report("AC3", ok, detail + "(tol L1 <= 2e-2, ratio >= 1.5)");
}

// AC5 and AC6: corrective terms on T in 0.25..2, K in 0.2..2 with bounds sized for T = 2
void corrective_terms_checks() {
    const auto Ts = range(0.25, 2.0, 0.25);
    const auto Ks = range(0.2, 2.0, 0.02);
    bool sign_ok = true, zero_ok = true;
    std::string sign_detail, zero_detail;
    for (int k : {1, 2}) {
        auto c = set_case(k);
        c.ps.bounds = default_bounds(c.m, 2.0);
        const double sgn = k == 1 ? 1.0 : -1.0;
        double worst_wrong = -1e300;  // most negative of sgn*Adj, reported as sgn*Adj min
        double extreme_far = 0.0;     // largest |K* - 1| of the per-maturity extremum
        double zero_worst = 0.0;
        for (double T : Ts) {
            const auto ev = solve_pde(c.m, T, c.ps);
            const auto& pz = ev.at(T);
            const double fT = forward_rate(c.m.rate, T);
            const auto adj = corrective_terms(pz, T, fT, Ks);
            double best = -1e300, kbest = 0.0, lowest = 1e300;
            for (std::size_t j = 0; j < Ks.size(); ++j) {
                const double v = sgn * adj.adj[j];
                lowest = std::min(lowest, v);
                if (v > best) best = v, kbest = Ks[j];
            }
            worst_wrong = std::max(worst_wrong, -lowest);
            extreme_far = std::max(extreme_far, std::abs(kbest - 1.0));
            if (std::abs(T - 0.5) < 1e-12 || std::abs(T - 1.0) < 1e-12 || std::abs(T - 2.0) < 1e-12) {
                const double full = corrective_term_direct(pz, fT, pz.grid().s_min);
                zero_worst = std::max(zero_worst, std::abs(full));
            }
        }
        sign_ok = sign_ok && worst_wrong <= 1e-5 && extreme_far <= 0.2;
        zero_ok = zero_ok && zero_worst <= 5e-4;
        sign_detail += std::string(c.name) + (k == 1 ? ": min Adj=" : ": max Adj=") + fmt("%.3g", -sgn * worst_wrong) +
                       " extremum within |K-1|<=" + fmt("%.2f", extreme_far) + "; ";
        zero_detail += std::string(c.name) + ": max|Adj(s_min)|=" + fmt("%.3g", zero_worst) + "; ";
    }
    report("AC5", sign_ok, sign_detail + "(tol 1e-5, extremum within 0.2 of K=1)");
    report("AC6", zero_ok, zero_detail + "(T in {0.5,1,2}, tol 5e-4)");
}

void calibration_round_trip() {
    const auto m = oracle::set1();
    const auto t0 = std::chrono::steady_clock::now();
    const auto market = CallSurface::analytic(m, {0.25, 0.5, 0.75, 1.0}, range(0.7, 1.3, 0.05));
    const auto res = calibrate(market, m);
    double worst = 0.0;
    for (double v : res.surface.values()) worst = std::max(worst, std::abs(v - 0.2));
    report("AC7", worst <= 0.005,
           "max|sigma-0.20|=" + fmt("%.3g", worst) + " over " + std::to_string(res.surface.values().size()) +
               " nodes (tol 0.005) " + fmt("%.2f", seconds_since(t0)) + "s");
}

void hyperbolic_vs_mc() {
    bool ok = true;
    std::string detail;
    for (double rho : {0.3, -0.3}) {
        const auto m = oracle::table1(rho);
        const double T = 1.0;
        PdeSettings ps;
        ps.ds = 0.012;
        ps.dr = 0.002;
        ps.dt = 0.0099;
        const auto K = range(0.1, 2.0, 0.05);
        const auto pde = price_calls_from_pz(solve_pde(m, T, ps).at(T), K);
        McConfig mc;
        mc.n_paths = 100000;  // antithetic pairs: 2e5 paths
        mc.dt_mc = 1.0 / 300.0;
        const auto est = mc_call_prices(m, T, mc, K);
        double ratio = 0.0, kw = 0.0, gap = 0.0;
        for (std::size_t j = 0; j < K.size(); ++j) {
            const double d = std::abs(pde[j] - est[j].mean);
            const double q = d / std::max(5e-4, 3.0 * est[j].standard_error);
            if (q > ratio) ratio = q, kw = K[j], gap = d;
        }
        ok = ok && ratio <= 1.0;
        detail += "rho=" + fmt("%+.1f", rho) + ": worst |PDE-MC|/tol=" + fmt("%.2f", ratio) + " (gap " +
                  fmt("%.2g", gap) + " at K=" + fmt("%.2f", kw) + "); ";
    }
    report("AC8", ok, detail + std::to_string(2 * 100000) + " paths");
}

// Central differences of the out-of-the-money option, mapped to the call by
// parity C = P + S0 - K ZC(T); the ITM call would lose digits to cancellation.
void greeks() {
    const auto m = oracle::set1();
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> uT(0.1, 5.0), uK(0.5, 2.0);
    double worst = 0.0, lemma = 0.0;
    for (int n = 0; n < 50; ++n) {
        const double T = uT(rng), K = uK(rng);
        const auto g = bshw_call_greeks(m, T, K);
        const double zc = zc_price(m.rate, T);
        const double f = forward_rate(m.rate, T);
        const bool use_put = K * zc < m.s0;
        auto price = [&](double t, double k) {
            const auto r = oracle::bshw_reference(m, t, k);
            return use_put ? r.put : r.call;
        };
        const double hT = 1e-4 * T, hK = 1e-4 * K;
        double cT = (price(T + hT, K) - price(T - hT, K)) / (2 * hT);
        double cK = (price(T, K + hK) - price(T, K - hK)) / (2 * hK);
        const double cKK = (price(T, K + hK) - 2 * price(T, K) + price(T, K - hK)) / (hK * hK);
        if (use_put) {
            cT += K * f * zc;
            cK -= zc;
        }
        worst = std::max({worst, std::abs(g.c_T - cT) / std::abs(cT), std::abs(g.c_K - cK) / std::abs(cK),
                          std::abs(g.c_KK - cKK) / std::abs(cKK)});
        const double lhs = m.s0 * norm_pdf(g.d1), rhs = K * zc * norm_pdf(g.d2);
        lemma = std::max(lemma, std::abs(lhs - rhs) / std::max(std::abs(rhs), 1e-300));
    }
    report("AC9", worst <= 1e-4 && lemma <= 1e-12,
           "max rel err vs FD=" + fmt("%.3g", worst) + " (tol 1e-4), lemma S0 n(d1)=K ZC n(d2) rel err=" +
               fmt("%.3g", lemma) + " (tol 1e-12) over 50 points");
}

void oracle_checks() {
    // tridiagonal residuals
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst_res = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial) * 3;
        TridiagonalSystem sys;
        sys.lower.resize(n);
        sys.main.resize(n);
        sys.upper.resize(n);
        sys.rhs.resize(n);
        double fmax = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sys.lower[i] = i > 0 ? u(rng) : 0.0;
            sys.upper[i] = i + 1 < n ? u(rng) : 0.0;
            sys.main[i] = std::abs(sys.lower[i]) + std::abs(sys.upper[i]) + 0.5 + std::abs(u(rng));
            sys.rhs[i] = 10.0 * u(rng);
            fmax = std::max(fmax, std::abs(sys.rhs[i]));
        }
        worst_res = std::max(worst_res, tridiagonal_residual(sys, solve_tridiagonal(sys)) / (1.0 + fmax));
    }
    bool ok = worst_res <= 1e-10;
    std::string detail = "tridiagonal max residual/(1+max|f|)=" + fmt("%.2g", worst_res) + "; ";

    struct Case {
        const char* name;
        HybridModel m;
        double T;
        std::vector<std::pair<double, double>> centers;
    };
    const Case cases[] = {{"set1", oracle::set1(), 1.0, {{1.0, 0.02}, {0.9, 0.03}, {1.1, 0.01}}},
                          {"set2", oracle::set2(), 2.0, {{1.2, 0.01}, {1.0, 0.02}, {0.9, 0.03}}}};
    McConfig mc;
    mc.n_paths = 100000;
    mc.dt_mc = 1.0 / 300.0;
    const KernelBandwidth h{0.02, 0.02};
    for (const auto& c : cases) {
        const auto est = simulate_paths(c.m, c.T, mc,
                                        {[](const PathState& p) { return p.discount() * p.s_T; },
                                         [](const PathState& p) { return p.discount(); }});
        const double zm = std::abs(est[0].mean - c.m.s0) / est[0].standard_error;
        const double zd = std::abs(est[1].mean - zc_price(c.m.rate, c.T)) / est[1].standard_error;
        ok = ok && zm <= 4.0 && zd <= 4.0;
        detail += std::string(c.name) + ": martingale z=" + fmt("%.2f", zm) + " discount z=" + fmt("%.2f", zd);
        const auto z = conditional_Z_estimate(c.m, c.T, mc, c.centers, h);
        double zz = 0.0, point_gap = 0.0;
        for (const auto& e : z) {
            const double ref = oracle::smoothed_Z(c.m, c.T, e.s, e.r, h.log_s, h.r);
            const double pointwise = analytic_Z(c.m, c.T, e.s, e.r);
            zz = std::max(zz, std::abs(e.estimate - ref) / e.kernel_se);
            point_gap = std::max(point_gap, std::abs(e.estimate - pointwise));
            ok = ok && e.reliable;
        }
        ok = ok && zz <= 3.0;
        detail += " conditional-Z max|MC-ref|/kernel SE=" + fmt("%.2f", zz) + " (max|MC-analytic_Z|=" +
                  fmt("%.2g", point_gap) + "); ";
    }
    report("AC10", ok, detail + "(tol 1e-10, 4 SE, 3 kernel SE)");
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<void()>>> steps = {
        {"AC1/AC2/AC4", pricing_and_mass}, {"AC3", field_fidelity}, {"AC5/AC6", corrective_terms_checks},
        {"AC7", calibration_round_trip},   {"AC8", hyperbolic_vs_mc}, {"AC9", greeks},
        {"AC10", oracle_checks}};
    for (const auto& [name, run] : steps) {
        try {
            run();
        } catch (const std::exception& e) {
            std::printf("%s FAIL exception: %s\n", name, e.what());
            ++failures;
        }
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
