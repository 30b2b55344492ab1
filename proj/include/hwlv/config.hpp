#pragma once

// JSON experiment configuration. Parsing produces the typed settings and a
// resolved copy of the document with every default written out; the hash of
// that copy tags all exported files.

#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hwlv/calibration.hpp"
#include "hwlv/csv.hpp"
#include "hwlv/error.hpp"
#include "hwlv/market_models.hpp"
#include "hwlv/monte_carlo.hpp"
#include "hwlv/pde_engine.hpp"

namespace hwlv {

using Json = nlohmann::ordered_json;

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct GridSpec {
    PdeSettings pde;
    // node counts override the spacings when given
    std::optional<std::size_t> n_s, n_r, n_t;

    // settings for one solve to T with counts turned into spacings; automatic
    // bounds are sized for `horizon` (>= T) so all maturities share one grid
    PdeSettings for_maturity(const HybridModel& m, double T, std::optional<double> horizon = std::nullopt) const {
        PdeSettings ps = pde;
        const GridBounds b = pde.bounds ? *pde.bounds : default_bounds(m, std::max(T, horizon.value_or(T)));
        ps.bounds = b;
        if (n_s) ps.ds = (b.s_max - b.s_min) / static_cast<double>(*n_s + 1);
        if (n_r) ps.dr = (b.r_max - b.r_min) / static_cast<double>(*n_r + 1);
        if (n_t) ps.dt = T / static_cast<double>(*n_t);
        return ps;
    }
};

struct RunSpec {
    std::vector<double> maturities;
    std::vector<double> strikes;
    std::string out_dir = "out";
    std::size_t threads = 1;
};

struct MarketSpec {
    std::string source = "analytic";  // analytic | csv
    std::string file;                 // T,K,price when source = csv
    std::vector<double> maturities;
    std::vector<double> strikes;
};

struct CalibrationSpec {
    MarketSpec market;
    CalibrationSettings settings;
    std::optional<double> calibrator_sigma2;  // rate vol seen by the calibrator, if different
};

struct ConditionalSpec {
    std::vector<std::pair<double, double>> centers;
    KernelBandwidth bandwidth;
};

struct ExperimentConfig {
    Json resolved;
    HybridModel model;
    GridSpec grid;
    RunSpec run;
    McConfig mc;
    ConditionalSpec conditional;
    CalibrationSpec calibration;

    // threads do not change any output, so they are left out of the hash
    std::string hash() const {
        Json h = resolved;
        h["run"].erase("threads");
        h["mc"].erase("threads");
        return hex64(fnv1a64(h.dump()));
    }
};

namespace detail {

class ConfigReader {
public:
    ConfigReader(const Json& in, Json& out, std::string path) : in_(in), out_(out), path_(std::move(path)) {
        if (!in_.is_object()) fail("expected an object");
        out_ = Json::object();
    }

    ~ConfigReader() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (auto it = in_.begin(); it != in_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("config: " + where(it.key()) + ": unknown field");
    }

    bool has(const std::string& key) const { return in_.contains(key); }

    double number(const std::string& key, std::optional<double> def = std::nullopt) {
        const Json* v = lookup(key, def.has_value());
        double x;
        if (!v) {
            x = *def;
        } else {
            if (!v->is_number()) fail_at(key, "expected a number");
            x = v->get<double>();
        }
        if (!std::isfinite(x)) fail_at(key, "must be finite");
        out_[key] = x;
        return x;
    }

    std::size_t count(const std::string& key, std::optional<std::size_t> def = std::nullopt) {
        const Json* v = lookup(key, def.has_value());
        std::size_t x;
        if (!v) {
            x = *def;
        } else {
            if (!v->is_number_integer() || v->get<long long>() < 0) fail_at(key, "expected a non-negative integer");
            x = v->get<std::size_t>();
        }
        out_[key] = x;
        return x;
    }

    std::uint64_t u64(const std::string& key, std::uint64_t def) {
        const Json* v = lookup(key, true);
        std::uint64_t x = def;
        if (v) {
            if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
                fail_at(key, "expected an unsigned integer");
            x = v->get<std::uint64_t>();
        }
        out_[key] = x;
        return x;
    }

    bool flag(const std::string& key, bool def) {
        const Json* v = lookup(key, true);
        bool x = def;
        if (v) {
            if (!v->is_boolean()) fail_at(key, "expected true or false");
            x = v->get<bool>();
        }
        out_[key] = x;
        return x;
    }

    std::string text(const std::string& key, std::optional<std::string> def = std::nullopt,
                     const std::vector<std::string>& allowed = {}) {
        const Json* v = lookup(key, def.has_value());
        std::string x;
        if (!v) {
            x = *def;
        } else {
            if (!v->is_string()) fail_at(key, "expected a string");
            x = v->get<std::string>();
        }
        if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), x) == allowed.end()) {
            std::string opts;
            for (const auto& a : allowed) opts += (opts.empty() ? "" : "|") + a;
            fail_at(key, "expected one of " + opts);
        }
        out_[key] = x;
        return x;
    }

    // list of numbers, or {"from", "to", "step"}
    std::vector<double> grid_list(const std::string& key, std::optional<std::vector<double>> def = std::nullopt) {
        const Json* v = lookup(key, def.has_value());
        std::vector<double> x;
        if (!v) {
            x = *def;
            out_[key] = x;
            return x;
        }
        if (v->is_array()) {
            for (const auto& e : *v) {
                if (!e.is_number()) fail_at(key, "expected numbers");
                x.push_back(e.get<double>());
            }
            out_[key] = x;
        } else if (v->is_object()) {
            Json r;
            ConfigReader sub(*v, r, where(key));
            const double from = sub.number("from"), to = sub.number("to"), step = sub.number("step");
            if (!(step > 0.0) || !(to >= from)) fail_at(key, "need step > 0 and to >= from");
            const auto n = static_cast<std::size_t>(std::llround((to - from) / step));
            for (std::size_t i = 0; i <= n; ++i) x.push_back(from + static_cast<double>(i) * step);
            out_[key] = r;
        } else {
            fail_at(key, "expected a list or {from, to, step}");
        }
        for (std::size_t i = 1; i < x.size(); ++i)
            if (!(x[i] > x[i - 1])) fail_at(key, "values must be strictly increasing");
        return x;
    }

    // sub-object (possibly absent, treated as empty)
    template <class F>
    void object(const std::string& key, F&& body) {
        seen_.insert(key);
        static const Json empty = Json::object();
        const Json& v = in_.contains(key) ? in_.at(key) : empty;
        Json r;
        {
            ConfigReader sub(v, r, where(key));
            body(sub);
        }
        out_[key] = r;
    }

    const Json& raw(const std::string& key) {
        seen_.insert(key);
        return in_.at(key);
    }
    void put(const std::string& key, Json v) { out_[key] = std::move(v); }

    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError("config: " + path_ + ": " + msg); }
    [[noreturn]] void fail_at(const std::string& key, const std::string& msg) const {
        throw ConfigError("config: " + where(key) + ": " + msg);
    }
    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const Json* lookup(const std::string& key, bool optional) {
        seen_.insert(key);
        if (in_.contains(key) && !in_.at(key).is_null()) return &in_.at(key);
        if (!optional) fail_at(key, "required field missing");
        return nullptr;
    }

    const Json& in_;
    Json& out_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::shared_ptr<const LocalVolSurface> load_surface(const std::string& file, TimeInterpolation mode) {
    const auto t = read_csv(file);
    const auto T = t.column("T"), K = t.column("K"), s = t.column("sigma");
    std::vector<double> mats, strikes;
    for (double x : T)
        if (mats.empty() || x != mats.back()) mats.push_back(x);
    for (std::size_t i = 0; i < K.size() && (strikes.empty() || K[i] > strikes.back()); ++i) strikes.push_back(K[i]);
    if (mats.size() * strikes.size() != s.size())
        throw InvalidInput(file + ": expected a full T x K lattice, T outer and K inner");
    for (std::size_t i = 0; i < T.size(); ++i)
        if (T[i] != mats[i / strikes.size()] || K[i] != strikes[i % strikes.size()])
            throw InvalidInput(file + ": rows must enumerate the T x K lattice, T outer and K inner");
    return std::make_shared<LocalVolSurface>(mats, strikes, s, mode);
}

inline ForwardCurve read_forward_curve(ConfigReader& c) {
    const std::string type = c.text("type", std::nullopt, {"flat", "nelson_siegel"});
    if (type == "flat") {
        const double f = c.number("rate");
        return {[f](double) { return f; }, [](double) { return 0.0; }};
    }
    const double b0 = c.number("beta0"), b1 = c.number("beta1"), b2 = c.number("beta2"), tau = c.number("tau");
    if (!(tau > 0.0)) c.fail_at("tau", "must be > 0");
    // f(0,T) = b0 + b1 e^{-T/tau} + b2 (T/tau) e^{-T/tau}
    return {[=](double T) {
                const double x = T / tau, e = std::exp(-x);
                return b0 + b1 * e + b2 * x * e;
            },
            [=](double T) {
                const double x = T / tau, e = std::exp(-x);
                return (-b1 * e + b2 * (1.0 - x) * e) / tau;
            }};
}

inline HybridModel read_model(ConfigReader& c) {
    HybridModel m;
    m.s0 = c.number("s0", 1.0);
    m.rho = c.number("rho", 0.0);
    c.object("rate", [&](ConfigReader& r) {
        const double a = r.number("a", 0.5);
        const double s2 = r.number("sigma2", 0.0);
        if (r.has("forward_curve")) {
            ForwardCurve curve;
            r.object("forward_curve", [&](ConfigReader& f) { curve = read_forward_curve(f); });
            m.rate = HullWhiteParams::fitted(a, s2, std::move(curve));
            r.put("r0", m.rate.r0);
        } else {
            m.rate.a = a;
            m.rate.sigma2 = s2;
            m.rate.r0 = r.number("r0", 0.0);
            m.rate.theta = r.number("theta", m.rate.r0);
        }
    });
    c.object("vol", [&](ConfigReader& v) {
        const std::string type = v.text("type", "constant", {"constant", "hyperbolic", "surface"});
        if (type == "constant") {
            m.vol = ConstantVol{v.number("sigma1", 0.2)};
        } else if (type == "hyperbolic") {
            m.vol = HyperbolicVol{v.number("nu"), v.number("beta")};
        } else {
            const std::string file = v.text("file");
            const std::string mode = v.text("time_interpolation", "bilinear", {"bilinear", "piecewise_constant"});
            m.vol = SurfaceVol{load_surface(
                file, mode == "bilinear" ? TimeInterpolation::Bilinear : TimeInterpolation::PiecewiseConstant)};
        }
    });
    try {
        validate(m);
    } catch (const Error& e) {
        c.fail(std::string("model: ") + e.what());
    }
    return m;
}

inline GridSpec read_grid(ConfigReader& c) {
    GridSpec g;
    g.pde.ds = c.number("ds", 0.0156);
    g.pde.dr = c.number("dr", 0.0026);
    g.pde.dt = c.number("dt", 0.0099);
    if (!(g.pde.ds > 0.0)) c.fail_at("ds", "must be > 0");
    if (!(g.pde.dr > 0.0)) c.fail_at("dr", "must be > 0");
    if (!(g.pde.dt > 0.0)) c.fail_at("dt", "must be > 0");
    for (const char* key : {"n_s", "n_r", "n_t"}) {
        if (!c.has(key)) continue;
        const std::size_t n = c.count(key);
        (std::string(key) == "n_s" ? g.n_s : std::string(key) == "n_r" ? g.n_r : g.n_t) = n;
    }
    if (c.has("bounds") && c.raw("bounds").is_object()) {
        c.object("bounds", [&](ConfigReader& b) {
            g.pde.bounds = GridBounds{b.number("s_min"), b.number("s_max"), b.number("r_min"), b.number("r_max")};
        });
    } else {
        c.text("bounds", "auto", {"auto"});
    }
    if (c.has("kernel_n")) g.pde.kernel_n = c.number("kernel_n");
    else g.pde.kernel_cells = c.number("kernel_cells", kDefaultKernelCells);
    g.pde.evolve.divergence_warning = c.number("divergence_warning", 0.20);
    return g;
}

inline McConfig read_mc(ConfigReader& c, std::uint64_t seed) {
    McConfig mc;
    mc.n_paths = c.count("n_paths", mc.n_paths);
    mc.dt_mc = c.number("dt", mc.dt_mc);
    mc.seed = c.u64("seed", seed);
    mc.antithetic = c.flag("antithetic", true);
    mc.n_batches = c.count("n_batches", mc.n_batches);
    mc.spot = c.text("spot_scheme", "log_euler", {"log_euler", "euler"}) == "euler" ? SpotScheme::Euler
                                                                                  : SpotScheme::LogEuler;
    mc.rate = c.text("rate_scheme", "exact", {"exact", "euler"}) == "euler" ? RateScheme::Euler : RateScheme::Exact;
    try {
        mc.validate();
    } catch (const Error& e) {
        c.fail(e.what());
    }
    return mc;
}

}  // namespace detail

// Parse a configuration document. `seed_override` / `threads_override`
// come from the command line and win over the file.
inline ExperimentConfig parse_config(const Json& doc, std::optional<std::uint64_t> seed_override = std::nullopt,
                                     std::optional<std::size_t> threads_override = std::nullopt) {
    ExperimentConfig cfg;
    Json patched = doc;
    if (!patched.is_object()) throw ConfigError("config: top level must be an object");
    if (seed_override) patched["mc"]["seed"] = *seed_override;
    if (threads_override) patched["run"]["threads"] = *threads_override;

    detail::ConfigReader top(patched, cfg.resolved, "");
    top.object("model", [&](detail::ConfigReader& c) { cfg.model = detail::read_model(c); });
    top.object("grid", [&](detail::ConfigReader& c) { cfg.grid = detail::read_grid(c); });
    top.object("run", [&](detail::ConfigReader& c) {
        cfg.run.maturities = c.grid_list("maturities", std::vector<double>{1.0});
        cfg.run.strikes = c.grid_list("strikes", std::vector<double>{0.5, 0.75, 1.0, 1.25, 1.5});
        cfg.run.out_dir = c.text("out_dir", "out");
        cfg.run.threads = c.count("threads", 1);
        if (cfg.run.maturities.empty() || !(cfg.run.maturities.front() > 0.0))
            c.fail_at("maturities", "need at least one maturity, all > 0");
        if (cfg.run.strikes.empty() || !(cfg.run.strikes.front() > 0.0))
            c.fail_at("strikes", "need at least one strike, all > 0");
        if (cfg.run.threads < 1) c.fail_at("threads", "must be >= 1");
    });
    cfg.grid.pde.evolve.threads = cfg.run.threads;
    top.object("mc", [&](detail::ConfigReader& c) {
        cfg.mc = detail::read_mc(c, 20240601);
        cfg.mc.threads = cfg.run.threads;
        if (c.has("centers")) {
            const Json& arr = c.raw("centers");
            Json echo = Json::array();
            if (!arr.is_array()) c.fail_at("centers", "expected a list of [S, r] pairs");
            for (const auto& p : arr) {
                if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
                    c.fail_at("centers", "expected [S, r] pairs");
                cfg.conditional.centers.emplace_back(p[0].get<double>(), p[1].get<double>());
                echo.push_back(p);
            }
            c.put("centers", echo);
        } else {
            c.put("centers", Json::array());
        }
        cfg.conditional.bandwidth.log_s = c.number("bandwidth_log_s", 0.02);
        cfg.conditional.bandwidth.r = c.number("bandwidth_r", 0.02);
    });
    top.object("calibration", [&](detail::ConfigReader& c) {
        auto& cs = cfg.calibration;
        c.object("market", [&](detail::ConfigReader& mk) {
            cs.market.source = mk.text("source", "analytic", {"analytic", "csv"});
            if (cs.market.source == "csv") {
                cs.market.file = mk.text("file");
            } else {
                cs.market.maturities = mk.grid_list("maturities", std::vector<double>{0.25, 0.5, 0.75, 1.0});
                cs.market.strikes = mk.grid_list("strikes", std::vector<double>{0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0,
                                                                               1.05, 1.1, 1.15, 1.2, 1.25, 1.3});
            }
        });
        cs.settings.continuation = c.flag("continuation", false);
        cs.settings.fixed_point_iterations = c.count("fixed_point_iterations", 0);
        if (cs.settings.fixed_point_iterations > 5) c.fail_at("fixed_point_iterations", "at most 5");
        cs.settings.fixed_point_tolerance = c.number("fixed_point_tolerance", 1e-4);
        cs.settings.butterfly_floor = c.number("butterfly_floor", kButterflyFloor);
        if (c.has("calibrator_sigma2")) cs.calibrator_sigma2 = c.number("calibrator_sigma2");
    });
    {
        auto& s = cfg.calibration.settings;
        s.ds = cfg.grid.pde.ds;
        s.dr = cfg.grid.pde.dr;
        s.dt = cfg.grid.pde.dt;
        s.bounds = cfg.grid.pde.bounds;
        s.kernel_cells = cfg.grid.pde.kernel_cells;
        s.threads = cfg.run.threads;
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed = std::nullopt,
                                    std::optional<std::size_t> threads = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    Json doc;
    try {
        doc = Json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return parse_config(doc, seed, threads);
}

}  // namespace hwlv
