// Command-line front end: runs one experiment from a JSON config and
// writes CSV data products into the output directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hwlv/analytic_oracle.hpp"
#include "hwlv/calibration.hpp"
#include "hwlv/config.hpp"
#include "hwlv/csv.hpp"
#include "hwlv/monte_carlo.hpp"
#include "hwlv/pde_engine.hpp"

namespace fs = std::filesystem;
using namespace hwlv;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

struct Context {
    ExperimentConfig cfg;
    std::string command;
    fs::path out;

    std::string tag() const { return "hwlv " + command + " config_hash=" + cfg.hash(); }
    std::string file(const std::string& name) const { return (out / name).string(); }
};

Context open_context(const std::string& command, const Common& c) {
    Context ctx;
    ctx.command = command;
    ctx.cfg = load_config(c.config, c.seed, c.threads);
    if (!c.out.empty()) ctx.cfg.run.out_dir = c.out;
    ctx.out = ctx.cfg.run.out_dir;
    fs::create_directories(ctx.out);
    const std::string echo = ctx.cfg.resolved.dump(2);
    std::cout << "resolved config (hash " << ctx.cfg.hash() << "):\n" << echo << "\n";
    std::ofstream(ctx.file("resolved_config.json"), std::ios::binary) << echo << "\n";
    return ctx;
}

std::string num(double x) { return format_number(x); }

void report_mass(const std::string& label, const EvolveResult& ev) {
    std::cout << label << " steps=" << ev.steps.size() << " max_abs_drift=" << num(ev.max_abs_drift())
              << " max_negative_mass_ratio=" << num(ev.max_negative_mass_ratio()) << "\n";
    for (const auto& w : ev.warnings) std::cout << "warning: " << w << "\n";
}

int cmd_solve_pde(const Common& c) {
    auto ctx = open_context("solve-pde", c);
    const auto& cfg = ctx.cfg;
    const double T = cfg.run.maturities.back();
    const auto ps = cfg.grid.for_maturity(cfg.model, T);
    const Grid2D g = pde_grid(cfg.model, T, ps);
    const auto ev = evolve_from(cfg.model, pde_initial(cfg.model, g, ps), 0.0, g.dt(), g.n_t, cfg.run.maturities,
                                ps.evolve);
    CsvWriter pz(ctx.file("pz.csv"), ctx.tag(), {"t", "S", "r", "pz"});
    for (const auto& snap : ev.snapshots)
        for (std::size_t i = 0; i < g.n_s; ++i)
            for (std::size_t j = 0; j < g.n_r; ++j) pz.row({snap.t, g.s(i), g.r(j), snap.field(i, j)});
    CsvWriter mass(ctx.file("mass.csv"), ctx.tag(),
                   {"step", "t", "raw_mass", "zc", "mass", "drift", "negative_fraction", "negative_mass"});
    for (const auto& d : ev.steps)
        mass.row({static_cast<double>(d.step), d.t, d.raw_mass, d.zc, d.mass, d.drift(), d.negative_fraction,
                  d.negative_mass});
    std::cout << "grid n_s=" << g.n_s << " n_r=" << g.n_r << " n_t=" << g.n_t << " ds=" << num(g.ds())
              << " dr=" << num(g.dr()) << " dt=" << num(g.dt()) << "\n";
    report_mass("mass", ev);
    return 0;
}

int cmd_price_pde(const Common& c) {
    auto ctx = open_context("price-pde", c);
    const auto& cfg = ctx.cfg;
    CsvWriter out(ctx.file("prices_pde.csv"), ctx.tag(), {"T", "K", "price", "se"});
    for (double T : cfg.run.maturities) {
        const auto ev = solve_pde(cfg.model, T, cfg.grid.for_maturity(cfg.model, T, cfg.run.maturities.back()));
        const auto prices = price_calls_from_pz(ev.at(T), cfg.run.strikes);
        for (std::size_t k = 0; k < prices.size(); ++k) out.row({T, cfg.run.strikes[k], prices[k], 0.0});
        report_mass("T=" + num(T), ev);
    }
    return 0;
}

int cmd_price_analytic(const Common& c) {
    auto ctx = open_context("price-analytic", c);
    const auto& cfg = ctx.cfg;
    CsvWriter out(ctx.file("prices_analytic.csv"), ctx.tag(), {"T", "K", "price", "se", "c_T", "c_K", "c_KK"});
    for (double T : cfg.run.maturities)
        for (double K : cfg.run.strikes) {
            const auto g = bshw_call_greeks(cfg.model, T, K);
            out.row({T, K, g.price, 0.0, g.c_T, g.c_K, g.c_KK});
        }
    return 0;
}

int cmd_price_mc(const Common& c) {
    auto ctx = open_context("price-mc", c);
    const auto& cfg = ctx.cfg;
    CsvWriter out(ctx.file("prices_mc.csv"), ctx.tag(), {"T", "K", "price", "se"});
    for (double T : cfg.run.maturities) {
        const auto est = mc_call_prices(cfg.model, T, cfg.mc, cfg.run.strikes);
        for (std::size_t k = 0; k < est.size(); ++k)
            out.row({T, cfg.run.strikes[k], est[k].mean, est[k].standard_error});
    }
    if (!cfg.conditional.centers.empty()) {
        const bool analytic = std::holds_alternative<ConstantVol>(cfg.model.vol);
        CsvWriter z(ctx.file("conditional_z.csv"), ctx.tag(),
                    {"T", "S", "r", "estimate", "kernel_se", "ess", "reliable", "analytic"});
        for (double T : cfg.run.maturities) {
            const auto est = conditional_Z_estimate(cfg.model, T, cfg.mc, cfg.conditional.centers,
                                                    cfg.conditional.bandwidth);
            for (const auto& e : est) {
                const double a = analytic ? analytic_Z(cfg.model, T, e.s, e.r) : std::nan("");
                z.row({T, e.s, e.r, e.estimate, e.kernel_se, e.ess, e.reliable ? 1.0 : 0.0, a});
                if (!e.reliable)
                    std::cout << "warning: center (" << num(e.s) << ", " << num(e.r) << ") effective sample "
                              << num(e.ess) << " below " << num(kMinKernelEss) << "\n";
            }
        }
    }
    return 0;
}

int cmd_corrective_terms(const Common& c) {
    auto ctx = open_context("corrective-terms", c);
    const auto& cfg = ctx.cfg;
    const auto f0 = forward_curve_of(cfg.model.rate);
    CsvWriter out(ctx.file("adj.csv"), ctx.tag(), {"T", "K", "adj"});
    for (double T : cfg.run.maturities) {
        const auto ev = solve_pde(cfg.model, T, cfg.grid.for_maturity(cfg.model, T, cfg.run.maturities.back()));
        const auto& pz = ev.at(T);
        const double fT = f0.value(T);
        const auto adj = corrective_terms(pz, T, fT, cfg.run.strikes);
        for (std::size_t k = 0; k < adj.adj.size(); ++k) out.row({T, adj.strikes[k], adj.adj[k]});
        const double zero = pz.integrate([fT](double, double r) { return r - fT; });
        std::cout << "T=" << num(T) << " adj_zero_strike=" << num(zero) << "\n";
        report_mass("T=" + num(T), ev);
    }
    return 0;
}

CallSurface market_surface(const ExperimentConfig& cfg) {
    const auto& mk = cfg.calibration.market;
    if (mk.source == "analytic") return CallSurface::analytic(cfg.model, mk.maturities, mk.strikes);
    const auto t = read_csv(mk.file);
    const auto T = t.column("T"), K = t.column("K"), p = t.column("price");
    std::vector<double> mats, strikes;
    for (double x : T)
        if (mats.empty() || x != mats.back()) mats.push_back(x);
    for (std::size_t i = 0; i < K.size() && (strikes.empty() || K[i] > strikes.back()); ++i) strikes.push_back(K[i]);
    if (mats.size() * strikes.size() != p.size())
        throw InvalidInput(mk.file + ": expected a full T x K price lattice, T outer and K inner");
    return CallSurface(mats, strikes, p, PriceProvider::External);
}

int cmd_calibrate(const Common& c) {
    auto ctx = open_context("calibrate", c);
    const auto& cfg = ctx.cfg;
    const CallSurface market = market_surface(cfg);
    HybridModel m0 = cfg.model;
    if (cfg.calibration.calibrator_sigma2) m0.rate.sigma2 = *cfg.calibration.calibrator_sigma2;
    const auto res = calibrate(market, m0, cfg.calibration.settings);

    CsvWriter lv(ctx.file("local_vol.csv"), ctx.tag(), {"T", "K", "sigma"});
    const auto& mats = res.surface.maturities();
    const auto& ks = res.surface.strikes();
    for (std::size_t i = 0; i < mats.size(); ++i)
        for (std::size_t j = 0; j < ks.size(); ++j) lv.row({mats[i], ks[j], res.surface.node(i, j)});
    CsvWriter adj(ctx.file("adj.csv"), ctx.tag(), {"T", "K", "adj"});
    for (const auto& curve : res.corrective_terms)
        for (std::size_t k = 0; k < curve.strikes.size(); ++k) adj.row({curve.maturity, curve.strikes[k], curve.adj[k]});

    std::ostringstream rep;
    rep << "# " << ctx.tag() << "\n";
    rep << "calibration report: provider=" << to_string(market.provider()) << " grid n_s=" << res.grid.n_s
        << " n_r=" << res.grid.n_r << " continuation=" << (cfg.calibration.settings.continuation ? "yes" : "no")
        << "\n";
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < mats.size(); ++i) {
        const auto& r = res.report[i];
        double slo = 1e300, shi = -1e300;
        for (std::size_t j = 0; j < ks.size(); ++j) {
            slo = std::min(slo, res.surface.node(i, j));
            shi = std::max(shi, res.surface.node(i, j));
        }
        lo = std::min(lo, slo);
        hi = std::max(hi, shi);
        rep << "T=" << num(r.maturity) << " steps=" << r.steps << " passes=" << r.passes
            << " max_abs_mass_drift=" << num(r.max_mass_drift) << " max_negative_fraction=" << num(r.max_negative_fraction)
            << " max_negative_mass_ratio=" << num(r.max_negative_mass_ratio) << " adj_zero_strike=" << num(r.adj_full_domain)
            << " sigma_min=" << num(slo) << " sigma_max=" << num(shi) << " skipped_strikes=" << r.skipped_strikes.size()
            << "\n";
        for (const auto& w : r.warnings) rep << "  warning: " << w << "\n";
    }
    rep << "sigma range over surface: [" << num(lo) << ", " << num(hi) << "]\n";
    std::ofstream(ctx.file("calibration_report.txt"), std::ios::binary) << rep.str();
    std::cout << rep.str();
    return 0;
}

int cmd_compare(const std::string& left, const std::string& right, const std::string& out_dir) {
    const auto a = read_csv(left), b = read_csv(right);
    const auto aT = a.column("T"), aK = a.column("K"), ap = a.column("price");
    const auto bT = b.column("T"), bK = b.column("K"), bp = b.column("price");
    std::map<std::pair<double, double>, double> rhs;
    for (std::size_t i = 0; i < bT.size(); ++i) rhs[{bT[i], bK[i]}] = bp[i];

    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        return s.str();
    };
    const std::string tag = "hwlv compare inputs_hash=" + hex64(fnv1a64(slurp(left) + '\0' + slurp(right)));
    fs::create_directories(out_dir);
    CsvWriter out((fs::path(out_dir) / "discrepancy.csv").string(), tag, {"T", "K", "price_a", "price_b", "abs_diff"});
    double worst = 0.0, sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < aT.size(); ++i) {
        const auto it = rhs.find({aT[i], aK[i]});
        if (it == rhs.end()) continue;
        const double d = std::abs(ap[i] - it->second);
        out.row({aT[i], aK[i], ap[i], it->second, d});
        worst = std::max(worst, d);
        sum += d;
        ++n;
    }
    if (n == 0) throw InvalidInput("compare: no common (T, K) rows");
    std::ostringstream s;
    s << "# " << tag << "\nrows=" << n << " max_abs_diff=" << num(worst) << " mean_abs_diff=" << num(sum / n) << "\n";
    std::ofstream((fs::path(out_dir) / "compare_summary.txt").string(), std::ios::binary) << s.str();
    std::cout << s.str();
    return 0;
}

std::string json_escape(const std::string& s) { return Json(s).dump(); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid local-volatility / Hull-White toolkit"};
    app.require_subcommand(1);
    Common common;
    std::string left, right;
    std::string command;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", common.out, "output directory (overrides run.out_dir)");
        sub->add_option("--seed", common.seed, "Monte Carlo seed (overrides mc.seed)");
        sub->add_option("--threads", common.threads, "worker threads (overrides run.threads)")
            ->check(CLI::PositiveNumber);
    };
    std::map<std::string, int (*)(const Common&)> handlers = {
        {"solve-pde", cmd_solve_pde},           {"price-pde", cmd_price_pde},
        {"price-analytic", cmd_price_analytic}, {"price-mc", cmd_price_mc},
        {"corrective-terms", cmd_corrective_terms}, {"calibrate", cmd_calibrate},
    };
    const std::map<std::string, std::string> help = {
        {"solve-pde", "evolve P*Z and export snapshots and mass diagnostics"},
        {"price-pde", "call prices by integrating the P*Z snapshot"},
        {"price-analytic", "closed-form call prices and Greeks (constant vol)"},
        {"price-mc", "Monte Carlo call prices with standard errors"},
        {"corrective-terms", "corrective terms Adj(T, K) from the P*Z snapshot"},
        {"calibrate", "bootstrap a local-vol surface from call prices"},
    };
    for (const auto& [name, text] : help) add_common(app.add_subcommand(name, text));
    auto* cmp = app.add_subcommand("compare", "join two price CSVs on (T, K) and report discrepancies");
    cmp->add_option("left", left, "first price CSV")->required()->check(CLI::ExistingFile);
    cmp->add_option("right", right, "second price CSV")->required()->check(CLI::ExistingFile);
    cmp->add_option("--out", common.out, "output directory")->default_val("out");

    CLI11_PARSE(app, argc, argv);
    command = app.get_subcommands().front()->get_name();
    try {
        if (command == "compare") return cmd_compare(left, right, common.out);
        return handlers.at(command)(common);
    } catch (const Error& e) {
        std::cerr << "{\"error\":{\"command\":" << json_escape(command) << ",\"kind\":" << json_escape(e.kind())
                  << ",\"message\":" << json_escape(e.what()) << "}}\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "{\"error\":{\"command\":" << json_escape(command) << ",\"kind\":\"internal\",\"message\":"
                  << json_escape(e.what()) << "}}\n";
        return 1;
    }
}
