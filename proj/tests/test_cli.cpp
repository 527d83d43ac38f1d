#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "forest/artifacts.hpp"
#include "forest/config.hpp"
#include "forest/solver.hpp"

using namespace forest;
namespace fs = std::filesystem;

namespace {

const char* kTiny =
    "model.K = 0.3\n"
    "grid.n_r = 11\n"
    "grid.n_s = 9\n"
    "grid.n_e = 3\n"
    "solver.n_t = 4\n"
    "sim.n_paths = 50\n"
    "sim.n_sub = 4\n";

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("forest_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_cfg(const fs::path& dir, const std::string& text) {
    const fs::path path = dir / "run.cfg";
    std::ofstream(path) << text;
    return path;
}

int run(const std::string& args) {
    const std::string cmd = std::string(FOREST_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ParsesKeysAndComments) {
    const auto cfg = parse_config(std::string(kTiny) + "# comment\nmodel.c2 = 0.02  \nsim.z0 = 1, 0.4, 1.2, 1.2\n");
    EXPECT_EQ(cfg.model.K, 0.3);
    EXPECT_EQ(cfg.model.c2, 0.02);
    EXPECT_EQ(cfg.grid.n_r.value(), 11);
    EXPECT_EQ(cfg.n_t, 4);
    EXPECT_EQ(cfg.sim.z0.x, 1.0);
    EXPECT_EQ(cfg.sim.z0.r, 0.4);
    EXPECT_TRUE(cfg.warnings.empty());
}

TEST(Config, RejectsUnknownRepeatedAndMissing) {
    EXPECT_THROW(parse_config("model.K = 0.3\nmodel.kappa = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("model.K = 0.3\nmodel.K = 0.2\n"), ConfigError);
    EXPECT_THROW(parse_config("model.c1 = 0.1\n"), ConfigError);
    EXPECT_THROW(parse_config("model.K = abc\n"), ConfigError);
    EXPECT_THROW(parse_config("model.K = 0.3\nmodel.gamma = -1\n"), ConfigError);
}

TEST(Config, DegenerateValuesWarn) {
    const auto cfg = parse_config("model.K = 0\nmodel.gamma = 0\n");
    EXPECT_EQ(cfg.warnings.size(), 2u);
}

TEST(Config, EchoRoundTripsAndHashTracksModel) {
    const auto cfg = parse_config(std::string(kTiny) + "model.mu = 0.0731\n");
    const auto again = parse_config(echo_config(cfg));
    EXPECT_EQ(echo_config(again), echo_config(cfg));
    EXPECT_EQ(config_hash(again), config_hash(cfg));
    EXPECT_EQ(config_hash(cfg).size(), 16u);
    auto other = cfg;
    other.sim.seed = 7;
    EXPECT_EQ(config_hash(other), config_hash(cfg));
    other.model.c3 = 0.11;
    EXPECT_NE(config_hash(other), config_hash(cfg));
}

TEST(Artifacts, FieldRoundTrip) {
    const auto cfg = parse_config(kTiny);
    const auto res = solve(cfg.model, cfg.grid_spec());
    const fs::path dir = scratch("field");
    write_field(dir / "field.bin", res.field);
    const ValueField back = read_field(dir / "field.bin");
    ASSERT_EQ(back.intervals(), res.field.intervals());
    for (int k = 0; k < back.intervals(); ++k)
        for (int step = 0; step <= back.steps(); ++step)
            for (int level = 0; level < back.levels(k); ++level) {
                const auto a = res.field.values(k, step, level);
                const auto b = back.values(k, step, level);
                ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
                const auto la = res.field.labels(k, step, level);
                const auto lb = back.labels(k, step, level);
                ASSERT_TRUE(std::equal(la.begin(), la.end(), lb.begin()));
            }
    std::ofstream(dir / "broken.bin") << "garbage";
    EXPECT_THROW(read_field(dir / "broken.bin"), IoError);
    EXPECT_THROW(read_field(dir / "missing.bin"), IoError);
}

TEST(Cli, SolveSimulateRegions) {
    const fs::path dir = scratch("cli");
    const fs::path cfg = write_cfg(dir, kTiny);
    const std::string base = "--config " + cfg.string() + " --out " + (dir / "out").string();
    ASSERT_EQ(run(base + " solve"), 0);
    for (const char* f : {"field.bin", "meta.txt", "resolved_config", "regions.csv", "regions_summary_t0.5.txt"})
        EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
    EXPECT_EQ(run(base + " simulate"), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "sim_report.csv"));
    EXPECT_EQ(run("--out " + (dir / "regions").string() + " regions --values " + (dir / "out").string() +
                  " --time 1.5"),
              0);
    EXPECT_TRUE(fs::exists(dir / "regions" / "regions_t1.5.pgm"));
    EXPECT_NE(run("regions --values " + (dir / "out").string() + " --time 4"), 0);
}

TEST(Cli, ExitCodes) {
    const fs::path dir = scratch("codes");
    const fs::path tiny = write_cfg(dir, kTiny);
    const std::string out = " --out " + (dir / "out").string();
    ASSERT_EQ(run("--config " + tiny.string() + out + " solve"), 0);

    const fs::path changed = dir / "changed.cfg";
    std::ofstream(changed) << kTiny << "model.c1 = 0.12\n";
    EXPECT_EQ(run("--config " + changed.string() + out + " simulate"), 4);

    const fs::path nok = dir / "nok.cfg";
    std::ofstream(nok) << "model.c1 = 0.1\n";
    EXPECT_EQ(run("--config " + nok.string() + out + " solve"), 1);
    EXPECT_EQ(run("solve"), 1);

    const fs::path capped = dir / "capped.cfg";
    std::ofstream(capped) << kTiny << "solver.max_iters = 1\n";
    EXPECT_EQ(run("--config " + capped.string() + out + " solve"), 2);

    EXPECT_EQ(run("--config " + tiny.string() + " --out /proc/forest_nowhere solve"), 3);
}

TEST(Cli, CheckSuiteAndFaultInjection) {
    const fs::path cfg = fs::path(FOREST_CONFIG_DIR) / "check.cfg";
    const fs::path dir = scratch("check");
    EXPECT_EQ(run("--config " + cfg.string() + " --out " + dir.string() + " check --paths 200 --inject-fault "
                  "negative_offdiag"),
              5);
}
