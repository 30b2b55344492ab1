#pragma once

// Forward equation for P*Z (joint density of (S, r) times the projected
// discount factor) on a truncated uniform grid, stepped with a two-stage
// Peaceman-Rachford splitting:
//
//   stage 1 (dt/2): S-direction implicit, r-direction and cross term explicit
//   stage 2 (dt/2): r-direction implicit, S-direction and cross term explicit
//
// The reaction coefficient C6 is implicit in both stages. Coefficients are
// frozen at t_n for the whole step. After every step the field is rescaled
// so that its mass equals ZC(0, t_{n+1}).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hwlv/error.hpp"
#include "hwlv/grid.hpp"
#include "hwlv/market_models.hpp"
#include "hwlv/parallel.hpp"
#include "hwlv/tridiagonal.hpp"

namespace hwlv {

// Per-node C1..C6 of the discretized forward equation
//
//   u_t + C1 u_S + C2 u_r + C3 u_SS + C4 u_rr + C5 u_Sr + C6 u = 0.
struct AdiCoefficients {
    Grid2D grid;
    double t = 0.0;
    std::vector<double> c1, c2, c3, c4, c5, c6;

    std::size_t index(std::size_t i, std::size_t j) const { return i * grid.n_r + j; }
};

inline AdiCoefficients build_coefficients(const HybridModel& m, const Grid2D& g, double t) {
    validate(m);
    const std::size_t ns = g.n_s, nr = g.n_r, n = ns * nr;
    AdiCoefficients c;
    c.grid = g;
    c.t = t;
    c.c1.resize(n);
    c.c2.resize(n);
    c.c3.resize(n);
    c.c4.resize(n);
    c.c5.resize(n);
    c.c6.resize(n);

    std::vector<VolDerivatives> vol(ns);
    for (std::size_t i = 0; i < ns; ++i) vol[i] = local_vol_derivatives(m.vol, t, g.s(i));
    std::vector<RateCoefficients> rate(nr);
    for (std::size_t j = 0; j < nr; ++j) rate[j] = rate_coefficients(m.rate, t, g.r(j));

    const double rho = m.rho;
    for (std::size_t i = 0; i < ns; ++i) {
        const double S = g.s(i);
        const double sg = vol[i].sigma, sgS = vol[i].sigma_s, sgSS = vol[i].sigma_ss;
        for (std::size_t j = 0; j < nr; ++j) {
            const double r = g.r(j);
            const auto& q = rate[j];
            const std::size_t k = i * nr + j;
            c.c1[k] = r * S - 2.0 * S * sg * sg - 2.0 * S * S * sg * sgS - rho * sg * S * q.alpha_r;
            c.c2[k] = q.mu - rho * sg * q.alpha - rho * sgS * S * q.alpha - 2.0 * q.alpha * q.alpha_r;
            c.c3[k] = -0.5 * S * S * sg * sg;
            c.c4[k] = -0.5 * q.alpha * q.alpha;
            c.c5[k] = -rho * sg * S * q.alpha;
            c.c6[k] = 2.0 * r + q.mu_r - sg * sg - 4.0 * S * sg * sgS - sgS * sgS * S * S -
                      sg * sgSS * S * S - q.alpha_r * q.alpha_r - q.alpha * q.alpha_rr -
                      rho * sgS * S * q.alpha_r - rho * sg * q.alpha_r;
        }
    }
    return c;
}

namespace detail {

inline double cross_difference(const Field2D& u, std::size_t i, std::size_t j) {
    const auto I = static_cast<std::ptrdiff_t>(i), J = static_cast<std::ptrdiff_t>(j);
    return u.at(I + 1, J + 1) + u.at(I - 1, J - 1) - u.at(I - 1, J + 1) - u.at(I + 1, J - 1);
}

}  // namespace detail

// Right-hand side f1 of stage 1 at node (i, j), from the field at t_n.
inline double step1_rhs(const Field2D& u, const AdiCoefficients& c, double dt, std::size_t i,
                        std::size_t j) {
    const double ds = c.grid.ds(), dr = c.grid.dr();
    const std::size_t k = c.index(i, j);
    const auto I = static_cast<std::ptrdiff_t>(i), J = static_cast<std::ptrdiff_t>(j);
    return u(i, j) * (2.0 / dt + 2.0 * c.c4[k] / (dr * dr)) -
           u.at(I, J + 1) * (c.c2[k] / (2.0 * dr) + c.c4[k] / (dr * dr)) +
           u.at(I, J - 1) * (c.c2[k] / (2.0 * dr) - c.c4[k] / (dr * dr)) -
           c.c5[k] * detail::cross_difference(u, i, j) / (4.0 * ds * dr);
}

// Right-hand side f2 of stage 2 at node (i, j), from the half-step field.
inline double step2_rhs(const Field2D& h, const AdiCoefficients& c, double dt, std::size_t i,
                        std::size_t j) {
    const double ds = c.grid.ds(), dr = c.grid.dr();
    const std::size_t k = c.index(i, j);
    const auto I = static_cast<std::ptrdiff_t>(i), J = static_cast<std::ptrdiff_t>(j);
    return h(i, j) * (2.0 / dt + 2.0 * c.c3[k] / (ds * ds)) -
           h.at(I + 1, J) * (c.c1[k] / (2.0 * ds) + c.c3[k] / (ds * ds)) +
           h.at(I - 1, J) * (c.c1[k] / (2.0 * ds) - c.c3[k] / (ds * ds)) -
           c.c5[k] * detail::cross_difference(h, i, j) / (4.0 * ds * dr);
}

// One full time step t_n -> t_n + dt.
inline Field2D adi_step(const Field2D& u, const AdiCoefficients& c, double dt, std::size_t threads = 1) {
    const Grid2D& g = c.grid;
    if (!u.grid().same_shape(g)) throw InvalidInput("adi_step: field and coefficients on different grids");
    if (!(dt > 0.0)) throw InvalidInput("adi_step: dt must be > 0");
    const std::size_t ns = g.n_s, nr = g.n_r;
    const double ds = g.ds(), dr = g.dr();
    const double ds2 = ds * ds, dr2 = dr * dr;

    Field2D half(g);
    parallel_for(nr, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        std::vector<double> lo(ns), mid(ns), up(ns), rhs(ns), x(ns), scratch(ns);
        for (std::size_t j = begin; j < end; ++j) {
            for (std::size_t i = 0; i < ns; ++i) {
                const std::size_t k = c.index(i, j);
                lo[i] = -c.c1[k] / (2.0 * ds) + c.c3[k] / ds2;
                mid[i] = 2.0 / dt - 2.0 * c.c3[k] / ds2 + c.c6[k];
                up[i] = c.c1[k] / (2.0 * ds) + c.c3[k] / ds2;
                rhs[i] = step1_rhs(u, c, dt, i, j);
            }
            solve_tridiagonal(lo, mid, up, rhs, x, scratch);
            for (std::size_t i = 0; i < ns; ++i) half(i, j) = x[i];
        }
    });

    Field2D next(g);
    parallel_for(ns, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        std::vector<double> lo(nr), mid(nr), up(nr), rhs(nr), scratch(nr);
        for (std::size_t i = begin; i < end; ++i) {
            for (std::size_t j = 0; j < nr; ++j) {
                const std::size_t k = c.index(i, j);
                lo[j] = -c.c2[k] / (2.0 * dr) + c.c4[k] / dr2;
                mid[j] = 2.0 / dt - 2.0 * c.c4[k] / dr2 + c.c6[k];
                up[j] = c.c2[k] / (2.0 * dr) + c.c4[k] / dr2;
                rhs[j] = step2_rhs(half, c, dt, i, j);
            }
            solve_tridiagonal(lo, mid, up, rhs, next.row(i), scratch);
        }
    });
    return next;
}

// ---------------------------------------------------------------- initial condition

// Gaussian approximation of the Dirac mass at (s0, r0), with independent
// standard deviations along S and r.
struct DiracKernel {
    double std_s = 0.0;
    double std_r = 0.0;

    // Sigma = diag(1/N, 1/N)
    static DiracKernel isotropic(double N) {
        if (!(N > 0.0)) throw InvalidInput("kernel concentration N must be > 0");
        const double sd = 1.0 / std::sqrt(N);
        return {sd, sd};
    }
    // Standard deviations of `cells` grid spacings along each axis.
    static DiracKernel grid_cells(const Grid2D& g, double cells) {
        if (!(cells > 0.0)) throw InvalidInput("kernel width in cells must be > 0");
        return {cells * g.ds(), cells * g.dr()};
    }
};

// Smallest kernel width, in grid spacings, accepted along either axis.
inline constexpr double kMinKernelCells = 0.5;
// Default width. Wider kernels smear the initial Dirac and cost accuracy in
// the prices at T; narrower ones alias on the grid.
inline constexpr double kDefaultKernelCells = 0.6;

inline Field2D init_dirac(const Grid2D& g, double s0, double r0, const DiracKernel& k) {
    g.validate();
    if (!(s0 > g.s_min && s0 < g.s_max && r0 > g.r_min && r0 < g.r_max))
        throw InvalidInput("init_dirac: (s0, r0) must lie strictly inside the grid");
    if (!(k.std_s > 0.0) || !(k.std_r > 0.0)) throw InvalidInput("init_dirac: kernel widths must be > 0");
    if (k.std_s < kMinKernelCells * g.ds() || k.std_r < kMinKernelCells * g.dr())
        throw UnderResolvedKernel("init_dirac: kernel narrower than half a grid cell; the Dirac would alias");

    Field2D f(g);
    const double norm = 1.0 / (2.0 * std::numbers::pi * k.std_s * k.std_r);
    for (std::size_t i = 0; i < g.n_s; ++i) {
        const double zs = (g.s(i) - s0) / k.std_s;
        for (std::size_t j = 0; j < g.n_r; ++j) {
            const double zr = (g.r(j) - r0) / k.std_r;
            f(i, j) = norm * std::exp(-0.5 * (zs * zs + zr * zr));
        }
    }
    const double m = f.mass();
    if (!(m > 0.0)) throw UnderResolvedKernel("init_dirac: kernel has no mass on the grid");
    f.scale(1.0 / m);
    return f;
}

// Isotropic kernel gamma_{1/N}; rejects 1/sqrt(N) < 2 max(ds, dr).
inline Field2D init_dirac(const Grid2D& g, double s0, double r0, double N) {
    const auto k = DiracKernel::isotropic(N);
    if (k.std_s < 2.0 * std::max(g.ds(), g.dr()))
        throw UnderResolvedKernel("init_dirac: 1/sqrt(N) < 2 max(ds, dr)");
    return init_dirac(g, s0, r0, k);
}

// ---------------------------------------------------------------- grid defaults

struct GridBounds {
    double s_min, s_max, r_min, r_max;
};

// s in [1e-4 S0, S0 exp(5 sigma_ref sqrt(T) + fbar T)], r within six
// stationary Hull-White deviations of the range spanned by r0 and E[r(T)].
inline GridBounds default_bounds(const HybridModel& m, double T) {
    validate(m);
    if (!(T > 0.0)) throw InvalidInput("default_bounds: T must be > 0");
    const double sigma_ref = local_vol(m.vol, 0.0, m.s0);
    const double fbar = -std::log(zc_price(m.rate, T)) / T;
    const double a = m.rate.a, s2 = m.rate.sigma2;
    const double B = hw_b(a, T);
    const double mean_rT = forward_rate(m.rate, T) + 0.5 * s2 * s2 * B * B;
    const double half = std::max(6.0 * s2 / std::sqrt(2.0 * a), 0.02);
    return {1e-4 * m.s0, m.s0 * std::exp(5.0 * sigma_ref * std::sqrt(T) + std::max(fbar, 0.0) * T),
            std::min(m.rate.r0, mean_rT) - half, std::max(m.rate.r0, mean_rT) + half};
}

inline Grid2D default_grid(const HybridModel& m, double T, double ds, double dr, double dt) {
    const auto b = default_bounds(m, T);
    return Grid2D::from_spacing(b.s_min, b.s_max, b.r_min, b.r_max, ds, dr, T, dt);
}

// ---------------------------------------------------------------- time marching

struct StepDiagnostic {
    std::size_t step = 0;     // index n of t_{n+1}
    double t = 0.0;           // t_{n+1}
    double raw_mass = 0.0;    // mass before rescaling
    double zc = 0.0;          // ZC(0, t_{n+1})
    double mass = 0.0;        // mass after rescaling
    double negative_fraction = 0.0;
    double negative_mass = 0.0;

    double drift() const { return raw_mass / zc - 1.0; }
};

struct Snapshot {
    double t = 0.0;
    Field2D field;
};

struct EvolveResult {
    std::vector<Snapshot> snapshots;
    std::vector<StepDiagnostic> steps;
    std::vector<std::string> warnings;

    double max_abs_drift() const {
        double w = 0.0;
        for (const auto& s : steps) w = std::max(w, std::abs(s.drift()));
        return w;
    }
    double max_negative_mass_ratio() const {
        double w = 0.0;
        for (const auto& s : steps) w = std::max(w, s.negative_mass / s.zc);
        return w;
    }
    const Field2D& at(double t) const {
        for (const auto& s : snapshots)
            if (std::abs(s.t - t) <= 1e-9 * std::max(1.0, std::abs(t))) return s.field;
        throw InvalidInput("no snapshot at t=" + std::to_string(t));
    }
};

struct EvolveOptions {
    std::size_t threads = 1;
    bool normalize = true;
    double divergence_warning = 0.20;  // |raw/ZC - 1| above this is reported
};

// March `start` (the field at t_start) through n_steps steps of size dt.
// Snapshot times must be on the step lattice t_start + k dt.
inline EvolveResult evolve_from(const HybridModel& m, Field2D start, double t_start, double dt,
                                std::size_t n_steps, std::span<const double> snapshot_times,
                                const EvolveOptions& opt = {}) {
    validate(m);
    const Grid2D& g = start.grid();
    if (!(dt > 0.0)) throw InvalidInput("evolve: dt must be > 0");

    std::vector<std::size_t> wanted;
    for (double ts : snapshot_times) {
        const double k = (ts - t_start) / dt;
        const double kr = std::round(k);
        if (kr < 0.0 || kr > static_cast<double>(n_steps) || std::abs(k - kr) > 1e-6)
            throw InvalidInput("evolve: snapshot time " + std::to_string(ts) + " is not on the time lattice");
        wanted.push_back(static_cast<std::size_t>(kr));
    }

    EvolveResult out;
    auto record = [&](std::size_t k, const Field2D& f) {
        for (std::size_t w = 0; w < wanted.size(); ++w)
            if (wanted[w] == k) out.snapshots.push_back({snapshot_times[w], f});
    };
    record(0, start);

    Field2D u = std::move(start);
    out.steps.reserve(n_steps);
    for (std::size_t n = 0; n < n_steps; ++n) {
        const double tn = t_start + static_cast<double>(n) * dt;
        const double tn1 = t_start + static_cast<double>(n + 1) * dt;
        const auto coeffs = build_coefficients(m, g, tn);
        u = adi_step(u, coeffs, dt, opt.threads);
        if (!u.all_finite())
            throw BlowUp(n, "non-finite P*Z values at step " + std::to_string(n) + " (t=" + std::to_string(tn1) + ")");

        StepDiagnostic d;
        d.step = n;
        d.t = tn1;
        d.raw_mass = u.mass();
        d.zc = zc_price(m.rate, tn1);
        const auto neg = u.negative_stats();
        d.negative_fraction = neg.fraction;
        d.negative_mass = neg.mass;
        if (opt.normalize) {
            if (!(d.raw_mass > 0.0)) throw BlowUp(n, "non-positive P*Z mass at step " + std::to_string(n));
            u.scale(d.zc / d.raw_mass);
        }
        d.mass = u.mass();
        if (std::abs(d.drift()) > opt.divergence_warning)
            out.warnings.push_back("step " + std::to_string(n) + ": raw mass deviates from ZC by " +
                                   std::to_string(100.0 * d.drift()) + "%");
        out.steps.push_back(d);
        record(n + 1, u);
    }
    return out;
}

// Algorithm: Dirac kernel at (s0, r0), then n_t steps of the grid.
inline EvolveResult evolve(const HybridModel& m, const Grid2D& g, const DiracKernel& kernel,
                           std::span<const double> snapshot_times, const EvolveOptions& opt = {}) {
    validate(m);
    g.validate();
    auto u0 = init_dirac(g, m.s0, m.rate.r0, kernel);
    return evolve_from(m, std::move(u0), 0.0, g.dt(), g.n_t, snapshot_times, opt);
}

// Grid and kernel settings for a single solve to T.
struct PdeSettings {
    double ds = 0.0156;
    double dr = 0.0026;
    double dt = 0.0099;
    std::optional<GridBounds> bounds;   // default_bounds(m, T) when empty
    double kernel_cells = kDefaultKernelCells;
    std::optional<double> kernel_n;     // isotropic gamma_{1/N} instead of kernel_cells
    EvolveOptions evolve;
};

inline Grid2D pde_grid(const HybridModel& m, double T, const PdeSettings& ps) {
    const GridBounds b = ps.bounds ? *ps.bounds : default_bounds(m, T);
    return Grid2D::from_spacing(b.s_min, b.s_max, b.r_min, b.r_max, ps.ds, ps.dr, T, ps.dt);
}

inline Field2D pde_initial(const HybridModel& m, const Grid2D& g, const PdeSettings& ps) {
    if (ps.kernel_n) return init_dirac(g, m.s0, m.rate.r0, *ps.kernel_n);
    return init_dirac(g, m.s0, m.rate.r0, DiracKernel::grid_cells(g, ps.kernel_cells));
}

// Evolve from the Dirac at t = 0 to T; snapshots default to {T}.
inline EvolveResult solve_pde(const HybridModel& m, double T, const PdeSettings& ps,
                              std::span<const double> snapshot_times = {}) {
    const Grid2D g = pde_grid(m, T, ps);
    const double only_T[] = {T};
    if (snapshot_times.empty()) snapshot_times = only_T;
    return evolve_from(m, pde_initial(m, g, ps), 0.0, g.dt(), g.n_t, snapshot_times, ps.evolve);
}

}  // namespace hwlv
