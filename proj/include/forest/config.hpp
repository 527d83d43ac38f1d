#pragma once

// Run configuration: a flat text file of dotted keys, e.g.
//
//   model.eta = 1.0
//   model.K = 0.3        # mandatory
//   grid.n_r = 151
//   sim.z0 = 0, 0.5, 1, 1
//
// Blank lines and '#' comments are ignored; unknown keys are errors.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "forest/chain.hpp"
#include "forest/errors.hpp"
#include "forest/model.hpp"
#include "forest/solver.hpp"

namespace forest {

struct SimConfig {
    long n_paths = 10000;
    std::uint64_t seed = 42;
    int n_sub = 32;
    State z0{0.0, 0.5, 1.0, 1.0};
    std::vector<double> pending0;
    bool profitable_filter = true;
    long record_paths = 0;
};

struct OutputConfig {
    std::string dir = "out";
    /// which value slices go to CSV: none, dates (step 0 and n_t of every interval) or all
    std::string value_slices = "dates";
    /// times whose region slices are written (regions.csv, PGM, summary)
    std::vector<double> region_times{0.5, 1.0};
    bool pgm = true;
};

struct RunConfig {
    ModelParams model;
    GridOverrides grid;
    SolverOptions solver;
    int n_t = 50;
    SimConfig sim;
    OutputConfig output;
    std::vector<std::string> warnings;

    GridSpec grid_spec() const {
        GridOverrides g = grid;
        g.n_t = n_t;
        return build_grid(model, g);
    }
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    if (!text.empty() && *begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError("config key '" + key + "': '" + text + "' is not a number");
    return v;
}

inline long long parse_integer(const std::string& key, const std::string& text) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw ConfigError("config key '" + key + "': '" + text + "' is not an integer");
    return v;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw ConfigError("config key '" + key + "': '" + text + "' is not an unsigned integer");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
    std::vector<double> out;
    if (trim(text).empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
    return out;
}

inline std::string join(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + format_double(values[i]);
    return out;
}

}  // namespace detail

/// Parses configuration text. K must be given explicitly.
inline RunConfig parse_config(const std::string& text) {
    using namespace detail;
    RunConfig cfg;
    bool k_given = false;

    using Setter = std::function<void(const std::string&, const std::string&)>;
    std::map<std::string, Setter> setters;
    auto real = [&](const char* key, double& field) {
        setters[key] = [&field](const std::string& k, const std::string& v) { field = parse_double(k, v); };
    };
    auto integer = [&](const char* key, int& field) {
        setters[key] = [&field](const std::string& k, const std::string& v) {
            field = static_cast<int>(parse_integer(k, v));
        };
    };
    auto opt_real = [&](const char* key, std::optional<double>& field) {
        setters[key] = [&field](const std::string& k, const std::string& v) { field = parse_double(k, v); };
    };
    auto opt_int = [&](const char* key, std::optional<int>& field) {
        setters[key] = [&field](const std::string& k, const std::string& v) {
            field = static_cast<int>(parse_integer(k, v));
        };
    };
    auto flag = [&](const char* key, bool& field) {
        setters[key] = [&field](const std::string& k, const std::string& v) { field = parse_bool(k, v); };
    };

    ModelParams& m = cfg.model;
    real("model.eta", m.eta);
    real("model.lambda_cap", m.lambda_cap);
    real("model.gamma", m.gamma);
    real("model.mu", m.mu);
    real("model.sigma", m.sigma);
    real("model.rho_cost", m.rho_cost);
    real("model.varsigma", m.varsigma);
    real("model.c1", m.c1);
    real("model.c2", m.c2);
    real("model.c3", m.c3);
    real("model.g0", m.g0);
    real("model.g_slope", m.g_slope);
    setters["model.K"] = [&](const std::string& k, const std::string& v) {
        m.K = parse_double(k, v);
        k_given = true;
    };
    real("model.T", m.T);
    integer("model.n_dates", m.n_dates);
    integer("model.m_delay", m.m_delay);
    flag("model.cost_equals_price", m.cost_equals_price);

    opt_real("grid.r_max", cfg.grid.r_max);
    opt_int("grid.n_r", cfg.grid.n_r);
    opt_real("grid.s_min", cfg.grid.s_min);
    opt_real("grid.s_max", cfg.grid.s_max);
    opt_int("grid.n_s", cfg.grid.n_s);
    opt_int("grid.n_e", cfg.grid.n_e);

    integer("solver.n_t", cfg.n_t);
    real("solver.tol_policy", cfg.solver.tol_policy);
    integer("solver.max_iters", cfg.solver.max_iters);
    real("solver.tol_tie", cfg.solver.tol_tie);

    setters["sim.n_paths"] = [&](const std::string& k, const std::string& v) {
        cfg.sim.n_paths = static_cast<long>(parse_integer(k, v));
    };
    setters["sim.seed"] = [&](const std::string& k, const std::string& v) { cfg.sim.seed = parse_u64(k, v); };
    integer("sim.n_sub", cfg.sim.n_sub);
    setters["sim.z0"] = [&](const std::string& k, const std::string& v) {
        const auto z = parse_list(k, v);
        if (z.size() != 4) throw ConfigError("config key 'sim.z0': expected four values x, r, p, q");
        cfg.sim.z0 = {z[0], z[1], z[2], z[3]};
    };
    setters["sim.pending0"] = [&](const std::string& k, const std::string& v) { cfg.sim.pending0 = parse_list(k, v); };
    flag("sim.profitable_filter", cfg.sim.profitable_filter);
    setters["sim.record_paths"] = [&](const std::string& k, const std::string& v) {
        cfg.sim.record_paths = static_cast<long>(parse_integer(k, v));
    };

    setters["output.dir"] = [&](const std::string&, const std::string& v) { cfg.output.dir = v; };
    setters["output.value_slices"] = [&](const std::string& k, const std::string& v) {
        if (v != "none" && v != "dates" && v != "all")
            throw ConfigError("config key '" + k + "': expected none, dates or all");
        cfg.output.value_slices = v;
    };
    setters["output.region_times"] = [&](const std::string& k, const std::string& v) {
        cfg.output.region_times = parse_list(k, v);
    };
    flag("output.pgm", cfg.output.pgm);

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (seen.count(key))
            throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key + "' repeated (first on line " +
                              std::to_string(seen[key]) + ")");
        seen[key] = lineno;
        it->second(key, value);
    }

    if (!k_given)
        throw ConfigError("model.K is required: the renewal cap has no published value, set it explicitly "
                          "(for example model.K = 0.3)");
    try {
        validate_params(cfg.model, Strictness::AllowDegenerate);
        (void)cfg.grid_spec();
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    if (cfg.solver.tol_policy <= 0.0 || cfg.solver.max_iters < 1 || cfg.solver.tol_tie < 0.0)
        throw ConfigError("solver tolerances must be positive and max_iters >= 1");
    if (cfg.sim.n_paths < 1 || cfg.sim.n_sub < 1) throw ConfigError("sim.n_paths and sim.n_sub must be >= 1");
    if (cfg.model.gamma == 0.0) cfg.warnings.push_back("gamma = 0: degenerate resource diffusion");
    if (cfg.model.sigma == 0.0) cfg.warnings.push_back("sigma = 0: degenerate price diffusion");
    if (cfg.model.K == 0.0) cfg.warnings.push_back("K = 0: renewal orders are impossible");
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

namespace detail {

inline std::string echo_model_grid_solver(const RunConfig& cfg) {
    const ModelParams& m = cfg.model;
    const GridSpec g = cfg.grid_spec();
    std::ostringstream os;
    auto put = [&](const char* key, const std::string& v) { os << key << " = " << v << "\n"; };
    auto num = [&](const char* key, double v) { put(key, format_double(v)); };
    num("model.eta", m.eta);
    num("model.lambda_cap", m.lambda_cap);
    num("model.gamma", m.gamma);
    num("model.mu", m.mu);
    num("model.sigma", m.sigma);
    num("model.rho_cost", m.rho_cost);
    num("model.varsigma", m.varsigma);
    num("model.c1", m.c1);
    num("model.c2", m.c2);
    num("model.c3", m.c3);
    num("model.g0", m.g0);
    num("model.g_slope", m.g_slope);
    num("model.K", m.K);
    num("model.T", m.T);
    put("model.n_dates", std::to_string(m.n_dates));
    put("model.m_delay", std::to_string(m.m_delay));
    put("model.cost_equals_price", m.cost_equals_price ? "true" : "false");
    num("grid.r_max", g.r_max);
    put("grid.n_r", std::to_string(g.n_r));
    num("grid.s_min", g.s_min);
    num("grid.s_max", g.s_max);
    put("grid.n_s", std::to_string(g.n_s));
    put("grid.n_e", std::to_string(g.n_e));
    put("solver.n_t", std::to_string(g.n_t));
    num("solver.tol_policy", cfg.solver.tol_policy);
    put("solver.max_iters", std::to_string(cfg.solver.max_iters));
    num("solver.tol_tie", cfg.solver.tol_tie);
    return os.str();
}

}  // namespace detail

/// Fully resolved configuration with every default written out.
inline std::string echo_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << detail::echo_model_grid_solver(cfg);
    os << "sim.n_paths = " << cfg.sim.n_paths << "\n";
    os << "sim.seed = " << cfg.sim.seed << "\n";
    os << "sim.n_sub = " << cfg.sim.n_sub << "\n";
    os << "sim.z0 = " << detail::join({cfg.sim.z0.x, cfg.sim.z0.r, cfg.sim.z0.p, cfg.sim.z0.q}) << "\n";
    os << "sim.pending0 = " << detail::join(cfg.sim.pending0) << "\n";
    os << "sim.profitable_filter = " << (cfg.sim.profitable_filter ? "true" : "false") << "\n";
    os << "sim.record_paths = " << cfg.sim.record_paths << "\n";
    os << "output.dir = " << cfg.output.dir << "\n";
    os << "output.value_slices = " << cfg.output.value_slices << "\n";
    os << "output.region_times = " << detail::join(cfg.output.region_times) << "\n";
    os << "output.pgm = " << (cfg.output.pgm ? "true" : "false") << "\n";
    return os.str();
}

/// FNV-1a over the resolved model, grid and solver settings: the inputs that
/// determine the solved field.
inline std::string config_hash(const RunConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : detail::echo_model_grid_solver(cfg)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace forest
