#pragma once

// Reading and writing run artifacts: value CSVs, region tables, the binary
// field dump, PGM label maps, run metadata and simulation reports.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "forest/config.hpp"
#include "forest/errors.hpp"
#include "forest/policy_sim.hpp"
#include "forest/solver.hpp"

namespace forest {

namespace fs = std::filesystem;

namespace detail {

inline std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    return out;
}

inline void check_written(std::ostream& out, const fs::path& path) {
    out.flush();
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

inline std::string value_csv_name(int k, int step, int level) {
    return "w_k" + std::to_string(k) + "_t" + std::to_string(step) + "_e" + std::to_string(level) + ".csv";
}

/// One slice as CSV `r,s,w`, resource-major node order.
inline void write_value_csv(const fs::path& path, const ValueField& field, int k, int step, int level) {
    const GridSpec& g = field.grid();
    auto out = detail::open_out(path);
    const auto w = field.values(k, step, level);
    out << "r,s,w\n";
    char buf[96];
    for (int i = 0; i < g.n_r; ++i)
        for (int j = 0; j < g.n_s; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", g.r(i), g.s(j), w[g.index(i, j)]);
            out << buf;
        }
    detail::check_written(out, path);
}

/// Writes value CSVs for `selection` ("dates": steps 0 and n_t; "all"; "none").
inline long write_value_slices(const fs::path& dir, const ValueField& field, const std::string& selection) {
    if (selection == "none") return 0;
    long files = 0;
    for (int k = 0; k < field.intervals(); ++k)
        for (int step = 0; step <= field.steps(); ++step) {
            if (selection == "dates" && step != 0 && step != field.steps()) continue;
            for (int level = 0; level < field.levels(k); ++level) {
                write_value_csv(dir / value_csv_name(k, step, level), field, k, step, level);
                ++files;
            }
        }
    return files;
}

/// Rows of regions.csv for the given slices: k,step,e,r,s,label,harvest_amount,plant_amount
/// where e is the pending level index.
inline void write_regions_csv(const fs::path& path, const ValueField& field, const std::vector<SliceRef>& slices) {
    const GridSpec& g = field.grid();
    auto out = detail::open_out(path);
    out << "k,step,e,r,s,label,harvest_amount,plant_amount\n";
    char buf[160];
    for (const auto& ref : slices) {
        for (int level = 0; level < field.levels(ref.k); ++level) {
            const auto labels = field.labels(ref.k, ref.step, level);
            const auto harvest = field.harvest_steps(ref.k, ref.step, level);
            const auto plant = field.plant_levels(ref.k, ref.step, level);
            for (int i = 0; i < g.n_r; ++i)
                for (int j = 0; j < g.n_s; ++j) {
                    const std::size_t idx = g.index(i, j);
                    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g,%.17g,%s,%.17g,%.17g\n", ref.k, ref.step, level,
                                  g.r(i), g.s(j), region_name(static_cast<Region>(labels[idx])),
                                  harvest[idx] * g.h_r(), g.e(plant[idx]));
                    out << buf;
                }
        }
    }
    detail::check_written(out, path);
}

/// Binary PGM, one byte per node (label * 85), highest r on the top row.
inline void write_label_pgm(const fs::path& path, const ValueField& field, const SliceRef& ref, int level) {
    const GridSpec& g = field.grid();
    auto out = detail::open_out(path, std::ios::out | std::ios::binary);
    out << "P5\n" << g.n_s << " " << g.n_r << "\n255\n";
    const auto labels = field.labels(ref.k, ref.step, level);
    for (int i = g.n_r - 1; i >= 0; --i)
        for (int j = 0; j < g.n_s; ++j) out.put(static_cast<char>(labels[g.index(i, j)] * 85));
    detail::check_written(out, path);
}

// ---------------------------------------------------------------------------
// Binary field
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kFieldMagic[8] = {'F', 'R', 'S', 'T', 'F', 'L', 'D', '1'};

template <typename T>
void put_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get_raw(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
template <typename T>
void put_span(std::ostream& out, std::span<const T> s) {
    out.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size_bytes()));
}
template <typename T>
void get_span(std::istream& in, std::span<T> s) {
    in.read(reinterpret_cast<char*>(s.data()), static_cast<std::streamsize>(s.size_bytes()));
}
}  // namespace detail

inline void write_field(const fs::path& path, const ValueField& field) {
    using namespace detail;
    auto out = open_out(path, std::ios::out | std::ios::binary);
    const GridSpec& g = field.grid();
    const Schedule& s = field.schedule();
    out.write(kFieldMagic, sizeof kFieldMagic);
    put_raw(out, g.r_max);
    put_raw(out, g.s_min);
    put_raw(out, g.s_max);
    put_raw(out, g.K);
    put_raw(out, s.horizon());
    for (int v : {g.n_r, g.n_s, g.n_e, g.n_t, s.n_dates(), s.m_delay()}) put_raw(out, static_cast<std::int32_t>(v));
    for (int k = 0; k < field.intervals(); ++k)
        for (int step = 0; step <= field.steps(); ++step)
            for (int level = 0; level < field.levels(k); ++level) {
                put_span(out, field.values(k, step, level));
                put_span(out, field.labels(k, step, level));
                put_span(out, field.harvest_steps(k, step, level));
                put_span(out, field.plant_levels(k, step, level));
            }
    check_written(out, path);
}

inline ValueField read_field(const fs::path& path) {
    using namespace detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kFieldMagic, sizeof magic) != 0)
        throw IoError("'" + path.string() + "' is not a field dump");
    GridSpec g;
    g.r_max = get_raw<double>(in);
    g.s_min = get_raw<double>(in);
    g.s_max = get_raw<double>(in);
    g.K = get_raw<double>(in);
    const double T = get_raw<double>(in);
    g.n_r = get_raw<std::int32_t>(in);
    g.n_s = get_raw<std::int32_t>(in);
    g.n_e = get_raw<std::int32_t>(in);
    g.n_t = get_raw<std::int32_t>(in);
    const int n_dates = get_raw<std::int32_t>(in);
    const int m_delay = get_raw<std::int32_t>(in);
    if (!in) throw IoError("truncated field header in '" + path.string() + "'");
    ValueField field(g, Schedule(T, n_dates, m_delay));
    for (int k = 0; k < field.intervals(); ++k)
        for (int step = 0; step <= field.steps(); ++step)
            for (int level = 0; level < field.levels(k); ++level) {
                get_span(in, field.values(k, step, level));
                get_span(in, field.labels(k, step, level));
                get_span(in, field.harvest_steps(k, step, level));
                get_span(in, field.plant_levels(k, step, level));
            }
    if (!in) throw IoError("truncated field data in '" + path.string() + "'");
    return field;
}

// ---------------------------------------------------------------------------
// Metadata and reports
// ---------------------------------------------------------------------------

inline void write_text(const fs::path& path, const std::string& text) {
    auto out = detail::open_out(path);
    out << text;
    detail::check_written(out, path);
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Plain `key: value` lines.
inline std::map<std::string, std::string> parse_meta(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        out[detail::trim(line.substr(0, colon))] = detail::trim(line.substr(colon + 1));
    }
    return out;
}

inline std::string meta_text(const RunConfig& cfg, const SolveMeta& meta, double v0) {
    std::ostringstream os;
    os << "config_hash: " << config_hash(cfg) << "\n";
    os << "wall_seconds: " << format_double(meta.wall_seconds) << "\n";
    os << "howard_iterations: " << meta.howard_iterations << "\n";
    os << "max_step_iterations: " << meta.max_step_iterations << "\n";
    os << "max_continuation_residual: " << format_double(meta.max_continuation_residual) << "\n";
    os << "factorizations: " << meta.factorizations << "\n";
    os << "clamp_count: " << meta.clamp_count << "\n";
    os << "value_at_z0: " << format_double(v0) << "\n";
    return os.str();
}

inline std::string sim_report_header() {
    return "n_paths,seed,estimate,std_error,pde_value,rel_gap,mean_harvests,mean_harvest_time,harvest_count_hist,"
           "mean_renewal,admissibility_violations,simultaneous_plant_harvest,skipped_unprofitable,r_clamps,s_clamps";
}

inline std::string sim_report_row(const SimReport& rep) {
    std::ostringstream os;
    os << rep.n_paths << "," << rep.seed << "," << format_double(rep.estimate) << "," << format_double(rep.std_error)
       << "," << format_double(rep.pde_value) << "," << format_double(rep.rel_gap) << ","
       << format_double(rep.mean_harvests) << "," << format_double(rep.mean_harvest_time) << ",";
    for (std::size_t i = 0; i < rep.harvest_count_hist.size(); ++i)
        os << (i ? "|" : "") << i << ":" << rep.harvest_count_hist[i];
    os << ",";
    for (std::size_t i = 0; i < rep.mean_renewal.size(); ++i) os << (i ? "|" : "") << format_double(rep.mean_renewal[i]);
    os << "," << rep.admissibility_violations << "," << rep.simultaneous_plant_harvest << ","
       << rep.skipped_unprofitable << "," << rep.r_clamps << "," << rep.s_clamps;
    return os.str();
}

inline void write_sim_report(const fs::path& path, const SimReport& rep) {
    write_text(path, sim_report_header() + "\n" + sim_report_row(rep) + "\n");
}

inline void write_paths_csv(const fs::path& path, const SimReport& rep) {
    auto out = detail::open_out(path);
    out << "path,time,r,p,q,action,amount\n";
    for (const auto& e : rep.events)
        out << e.path << "," << format_double(e.time) << "," << format_double(e.r) << "," << format_double(e.p) << ","
            << format_double(e.q) << "," << e.action << "," << format_double(e.amount) << "\n";
    detail::check_written(out, path);
}

inline std::string region_summary_text(double t, const SliceRef& ref, int level, const RegionMetrics& m) {
    std::ostringstream os;
    os << "time: " << format_double(t) << "\n";
    os << "slice: k=" << ref.k << " step=" << ref.step << " e=" << level << "\n";
    for (int r = 0; r < 4; ++r) os << region_name(static_cast<Region>(r)) << ": " << m.counts[r] << "\n";
    os << "harvest_area: " << m.harvest_area << "\n";
    os << "plant_area: " << m.plant_area << "\n";
    os << "harvest_area_lower_s: " << m.harvest_area_lower_s << "\n";
    os << "plant_area_lower_s: " << m.plant_area_lower_s << "\n";
    os << "plant_max_r_index: " << m.plant_max_r_index << "\n";
    os << "harvest_boundary_nodes: " << m.harvest_boundary_nodes << "\n";
    os << "monotonicity_violations: " << m.monotonicity_violations << "\n";
    return os.str();
}

}  // namespace forest
