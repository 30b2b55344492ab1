#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "hwlv/calibration.hpp"
#include "oracles.hpp"

using namespace hwlv;

namespace {

std::vector<double> range(double lo, double hi, double step) {
    std::vector<double> v;
    const int n = static_cast<int>(std::round((hi - lo) / step));
    for (int k = 0; k <= n; ++k) v.push_back(lo + k * step);
    return v;
}

// set 1 at T = 1 on the reference grid, solved once
const Field2D& set1_field() {
    static const Field2D f = solve_pde(oracle::set1(), 1.0, PdeSettings{}).at(1.0);
    return f;
}

double f0(const HybridModel& m, double T) { return forward_rate(m.rate, T); }

}  // namespace

TEST(CorrectiveTerms, TelescopingEqualsDirectIntegral) {
    const auto& pz = set1_field();
    const auto K = range(0.2, 2.0, 0.02);
    const double fT = f0(oracle::set1(), 1.0);
    const auto curve = corrective_terms(pz, 1.0, fT, K);
    for (std::size_t j = 0; j < K.size(); ++j)
        ASSERT_NEAR(curve.adj[j], corrective_term_direct(pz, fT, K[j]), 1e-12) << "K=" << K[j];
}

TEST(CorrectiveTerms, ZeroStrikeIdentity) {
    const auto& pz = set1_field();
    const double fT = f0(oracle::set1(), 1.0);
    const double full = pz.integrate([fT](double, double r) { return r - fT; });
    EXPECT_LT(std::abs(full), 5e-4);
    EXPECT_NEAR(corrective_term_direct(pz, fT, pz.grid().s_min), full, 1e-12);
}

TEST(CorrectiveTerms, MatchesClosedFormOnSet1) {
    const auto m = oracle::set1();
    const auto K = range(0.5, 1.5, 0.05);
    const auto curve = corrective_terms(set1_field(), 1.0, f0(m, 1.0), K);
    double peak = 0.0, kpeak = 0.0;
    for (std::size_t j = 0; j < K.size(); ++j) {
        EXPECT_NEAR(curve.adj[j], analytic_adj(m, 1.0, K[j]), 5e-5) << "K=" << K[j];
        EXPECT_GE(curve.adj[j], -1e-5);
        if (curve.adj[j] > peak) peak = curve.adj[j], kpeak = K[j];
    }
    EXPECT_NEAR(kpeak, 1.0, 0.15);
}

TEST(CorrectiveTerms, CurveInterpolatesLinearlyAndFlat) {
    CorrectiveTermCurve c{1.0, {0.8, 1.0, 1.2}, {1.0, 3.0, 2.0}};
    EXPECT_DOUBLE_EQ(c.at(0.5), 1.0);
    EXPECT_DOUBLE_EQ(c.at(0.9), 2.0);
    EXPECT_DOUBLE_EQ(c.at(1.1), 2.5);
    EXPECT_DOUBLE_EQ(c.at(5.0), 2.0);
    EXPECT_THROW(CorrectiveTermCurve{}.at(1.0), InvalidInput);
}

TEST(CorrectiveTerms, StrikesMustLieInsideAndIncrease) {
    const auto& pz = set1_field();
    EXPECT_THROW(corrective_terms(pz, 1.0, 0.02, {0.5, 10.0}), InvalidInput);
    EXPECT_THROW(corrective_terms(pz, 1.0, 0.02, {1.0, 0.9}), InvalidInput);
}

TEST(PriceFromPz, MatchesClosedFormAndIsConvex) {
    const auto m = oracle::set1();
    const auto K = range(0.5, 1.5, 0.01);
    const auto p = price_calls_from_pz(set1_field(), K);
    double worst = 0.0;
    for (std::size_t j = 0; j < K.size(); ++j) worst = std::max(worst, std::abs(p[j] - oracle::bshw_reference(m, 1.0, K[j]).call));
    EXPECT_LE(worst, 5e-4);
    for (std::size_t j = 1; j + 1 < K.size(); ++j) {
        EXPECT_LE(p[j + 1], p[j]);
        EXPECT_GE(p[j + 1] - 2 * p[j] + p[j - 1], -1e-8);
    }
}

TEST(PriceFromPz, LowestStrikeMartingaleIdentity) {
    const auto m = oracle::set1();
    const auto& pz = set1_field();
    const double smin = pz.grid().s_min;
    const double c = price_calls_from_pz(pz, {smin})[0];
    EXPECT_NEAR(c, m.s0 - smin * zc_price(m.rate, 1.0), 2e-3);
}

TEST(Dupire, DeterministicRatesRecoverConstantVol) {
    auto m = oracle::set1();
    m.rate.sigma2 = 0.0;
    const auto surf = CallSurface::analytic(m, {0.5, 1.0, 2.0}, {0.7, 1.0, 1.3});
    const auto f = forward_curve_of(m.rate);
    for (double T : {0.5, 1.0, 2.0})
        for (double K : {0.7, 1.0, 1.3}) EXPECT_NEAR(dupire_vol(surf, f, T, K), 0.04, 1e-10) << T << "," << K;
}

TEST(Dupire, StochasticRatesWithClosedFormAdjRecoverConstantVol) {
    for (const auto& m : {oracle::set1(), oracle::set2()}) {
        const auto Ks = range(0.6, 1.4, 0.01);
        const auto surf = CallSurface::analytic(m, {1.0}, Ks);
        const auto f = forward_curve_of(m.rate);
        CorrectiveTermCurve adj{1.0, Ks, {}};
        for (double K : Ks) adj.adj.push_back(analytic_adj(m, 1.0, K));
        for (double K : {0.7, 0.85, 1.0, 1.15, 1.3}) {
            const double v = std::sqrt(local_vol_stochastic_rates(surf, f, adj, 1.0, K));
            EXPECT_NEAR(v, 0.2, 1e-3) << "rho=" << m.rho << " K=" << K;
        }
    }
}

TEST(Dupire, ZeroCorrectiveTermReducesToDupire) {
    const auto m = oracle::set1();
    const auto surf = CallSurface::analytic(m, {1.0}, {0.9, 1.0, 1.1});
    const auto f = forward_curve_of(m.rate);
    const CorrectiveTermCurve zero{1.0, {0.9, 1.1}, {0.0, 0.0}};
    for (double K : {0.9, 1.0, 1.1})
        EXPECT_EQ(local_vol_stochastic_rates(surf, f, zero, 1.0, K), dupire_vol(surf, f, 1.0, K));
}

TEST(Dupire, PositiveCorrelationLowersLocalVol) {
    const auto m = oracle::set1();
    const auto surf = CallSurface::analytic(m, {1.0}, {1.0});
    const auto f = forward_curve_of(m.rate);
    const CorrectiveTermCurve adj{1.0, {1.0}, {analytic_adj(m, 1.0, 1.0)}};
    EXPECT_GT(adj.adj[0], 0.0);
    EXPECT_LT(local_vol_stochastic_rates(surf, f, adj, 1.0, 1.0), dupire_vol(surf, f, 1.0, 1.0));
}

TEST(Dupire, DegenerateButterflyFarOutOfTheMoney) {
    const auto m = oracle::set1();
    const std::vector<double> T{0.25, 0.5}, K{2.3, 2.4, 2.5, 2.6, 2.7};
    std::vector<double> p;
    for (double t : T)
        for (double k : K) p.push_back(oracle::bshw_reference(m, t, k).call);
    const CallSurface lattice(T, K, p);
    const auto f = forward_curve_of(m.rate);
    try {
        dupire_vol(lattice, f, 0.25, 2.5);
        FAIL() << "expected ButterflyDegenerate";
    } catch (const ButterflyDegenerate& e) {
        EXPECT_EQ(e.strike(), 2.5);
        EXPECT_LT(e.c_kk(), kButterflyFloor);
    }
}

TEST(Dupire, NegativeVarianceCarriesDiagnostics) {
    const auto m = oracle::set1();
    const auto surf = CallSurface::analytic(m, {1.0}, {1.0});
    const auto f = forward_curve_of(m.rate);
    const CorrectiveTermCurve huge{1.0, {1.0}, {1.0}};
    try {
        local_vol_stochastic_rates(surf, f, huge, 1.0, 1.0);
        FAIL() << "expected NegativeVariance";
    } catch (const NegativeVariance& e) {
        EXPECT_EQ(e.info().strike, 1.0);
        EXPECT_EQ(e.info().adj, 1.0);
        EXPECT_LT(e.info().variance, 0.0);
    }
    EXPECT_THROW(local_vol_stochastic_rates(surf, f, CorrectiveTermCurve{0.5, {1.0}, {0.0}}, 1.0, 1.0), InvalidInput);
}

TEST(Dupire, AdjInterpolationResolutionInvariance) {
    const auto m = oracle::set1();
    const auto surf = CallSurface::analytic(m, {1.0}, range(0.7, 1.3, 0.05));
    const auto f = forward_curve_of(m.rate);
    auto curve = [&](double step, double offset) {
        CorrectiveTermCurve c{1.0, range(0.6 + offset, 1.4 + offset, step), {}};
        for (double K : c.strikes) c.adj.push_back(analytic_adj(m, 1.0, K));
        return c;
    };
    const auto coarse = curve(0.01, 0.005), fine = curve(0.005, 0.0025);
    for (double K : range(0.7, 1.3, 0.05)) {
        const double a = std::sqrt(local_vol_stochastic_rates(surf, f, coarse, 1.0, K));
        const double b = std::sqrt(local_vol_stochastic_rates(surf, f, fine, 1.0, K));
        EXPECT_NEAR(a, b, 1e-4) << "K=" << K;
    }
}

TEST(CallSurface, Validation) {
    EXPECT_THROW(CallSurface({1.0}, {1.0, 1.1}, {0.1}), InvalidInput);
    EXPECT_THROW(CallSurface({1.0, 0.5}, {1.0}, {0.1, 0.1}), InvalidInput);
    EXPECT_THROW(CallSurface({1.0}, {1.1, 1.0}, {0.1, 0.2}), InvalidInput);
    EXPECT_THROW(CallSurface({1.0}, {0.9, 1.0}, {0.1, 0.2}).check_arbitrage(), InvalidInput);
    EXPECT_THROW(CallSurface({1.0}, {0.9, 1.0, 1.1}, {0.2, 0.18, 0.12}).check_arbitrage(), InvalidInput);
    const CallSurface ok({0.5, 1.0}, {0.9, 1.0, 1.1}, {0.12, 0.06, 0.02, 0.15, 0.09, 0.05});
    EXPECT_NO_THROW(ok.check_arbitrage());
    EXPECT_THROW(ok.derivatives(0.75, 1.0), InvalidInput);
    EXPECT_THROW(ok.derivatives(1.0, 1.05), InvalidInput);
    EXPECT_THROW(CallSurface({1.0}, {0.9, 1.0, 1.1}, {0.12, 0.06, 0.02}).derivatives(1.0, 1.0), InvalidInput);
}

TEST(CallSurface, LatticeDerivativesApproachClosedForm) {
    const auto m = oracle::set1();
    const auto T = range(0.9, 1.1, 0.01), K = range(0.9, 1.1, 0.002);
    std::vector<double> p;
    for (double t : T)
        for (double k : K) p.push_back(oracle::bshw_reference(m, t, k).call);
    const CallSurface lattice(T, K, p, PriceProvider::Pde);
    const auto exact = bshw_call_greeks(m, 1.0, 1.0);
    const auto d = lattice.derivatives(1.0, 1.0);
    EXPECT_NEAR(d.c_T, exact.c_T, 1e-4 * std::abs(exact.c_T) + 1e-7);
    EXPECT_NEAR(d.c_K, exact.c_K, 1e-5);
    EXPECT_NEAR(d.c_KK, exact.c_KK, 1e-3 * exact.c_KK);
    // edges fall back to one-sided differences and stay finite
    const auto e = lattice.derivatives(0.9, 0.9);
    EXPECT_TRUE(std::isfinite(e.c_T) && std::isfinite(e.c_K) && e.c_KK > 0.0);
}

TEST(Calibrate, FlatVolRoundTrip) {
    const auto m = oracle::set1();
    const auto market = CallSurface::analytic(m, {0.25, 0.5, 0.75, 1.0}, range(0.7, 1.3, 0.05));
    const auto res = calibrate(market, m);
    const auto& s = res.surface;
    for (std::size_t i = 0; i < s.maturities().size(); ++i)
        for (std::size_t j = 0; j < s.strikes().size(); ++j)
            EXPECT_NEAR(s.node(i, j), 0.2, 0.005) << "T=" << s.maturities()[i] << " K=" << s.strikes()[j];
    ASSERT_EQ(res.report.size(), 4u);
    for (const auto& r : res.report) {
        EXPECT_LT(r.max_mass_drift, 0.05);
        EXPECT_LT(std::abs(r.adj_full_domain), 5e-4);
        EXPECT_TRUE(r.skipped_strikes.empty());
        EXPECT_EQ(r.passes, 1u);
    }
    EXPECT_EQ(s.mode(), TimeInterpolation::Bilinear);
}

TEST(Calibrate, ContinuationAgreesWithRestart) {
    const auto m = oracle::set1();
    const auto market = CallSurface::analytic(m, {0.5, 1.0}, range(0.8, 1.2, 0.1));
    CalibrationSettings a;
    a.ds = 0.03;
    a.dr = 0.005;
    a.dt = 0.02;
    CalibrationSettings b = a;
    b.continuation = true;
    const auto ra = calibrate(market, m, a);
    const auto rb = calibrate(market, m, b);
    for (std::size_t k = 0; k < ra.surface.values().size(); ++k)
        EXPECT_NEAR(ra.surface.values()[k], rb.surface.values()[k], 2e-3);
}

TEST(Calibrate, FixedPointIterationsStopAtTolerance) {
    const auto m = oracle::set1();
    const auto market = CallSurface::analytic(m, {0.5}, range(0.8, 1.2, 0.1));
    CalibrationSettings c;
    c.ds = 0.03;
    c.dr = 0.005;
    c.dt = 0.02;
    c.fixed_point_iterations = 5;
    c.fixed_point_tolerance = 1e-3;
    const auto r = calibrate(market, m, c);
    EXPECT_GE(r.report[0].passes, 2u);
    EXPECT_LE(r.report[0].passes, 6u);
    for (double v : r.surface.values()) EXPECT_NEAR(v, 0.2, 0.005);
}

TEST(Calibrate, IgnoringRateVolatilityMisfitsTheWings) {
    const auto m = oracle::set1();
    const auto market = CallSurface::analytic(m, {0.5, 1.0}, range(0.7, 1.3, 0.1));
    auto blind = m;
    blind.rate.sigma2 = 0.0;
    CalibrationSettings c;
    c.ds = 0.03;
    c.dr = 0.005;
    c.dt = 0.02;
    const auto r = calibrate(market, blind, c);
    double worst = 0.0;
    for (double v : r.surface.values()) worst = std::max(worst, std::abs(v - 0.2));
    EXPECT_GT(worst, 0.005);
}

TEST(Calibrate, SingleStrikeDeterministicRates) {
    auto m = oracle::set1();
    m.rate.sigma2 = 0.0;
    const auto market = CallSurface::analytic(m, {0.5}, {1.0});
    CalibrationSettings c;
    c.ds = 0.02;
    c.dr = 0.004;
    c.dt = 0.01;
    const auto r = calibrate(market, m, c);
    EXPECT_NEAR(r.surface.node(0, 0), 0.2, 1e-3);
}

TEST(Calibrate, RejectsArbitrageableMarket) {
    const CallSurface bad({1.0}, {0.9, 1.0, 1.1}, {0.2, 0.18, 0.12});
    EXPECT_THROW(calibrate(bad, oracle::set1()), InvalidInput);
}
