#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "odflow/io.hpp"
#include "odflow/network.hpp"

using namespace odflow;
namespace fs = std::filesystem;

namespace {

fs::path work_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("odflow_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(ODFLOW_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("cli: simulate produces a complete dataset directory") {
  const fs::path dir = work_dir("simulate");
  write_text(dir / "sim.ini", "[simulation]\nseed = 5\n");
  REQUIRE(run_cli("simulate --config " + (dir / "sim.ini").string() +
                  " --out " + (dir / "data").string()) == 0);

  for (const char* name :
       {"manifest.ini", "network.net", "theta.csv", "x.csv", "y.csv", "z.csv",
        "c.csv"}) {
    REQUIRE(fs::exists(dir / "data" / name));
  }
  const CsvSeries z = read_series_csv(dir / "data" / "z.csv");
  REQUIRE(z.columns.size() == 10);
  REQUIRE(z.values.rows() == 100);
  const CsvSeries c = read_series_csv(dir / "data" / "c.csv");
  REQUIRE(c.first_index == -1);
  REQUIRE(c.values.rows() == 102);
}

TEST_CASE("cli: invalid bounds exit with the config code") {
  const fs::path dir = work_dir("badbounds");
  write_text(dir / "sim.ini",
             "[simulation]\ndemand_lo = 90\ndemand_hi = 10\n");
  REQUIRE(run_cli("simulate --config " + (dir / "sim.ini").string() +
                  " --out " + (dir / "data").string()) == 2);
}

TEST_CASE("cli: unknown arguments exit with the config code") {
  REQUIRE(run_cli("simulate --nonsense") == 2);
  REQUIRE(run_cli("unknown-subcommand") == 2);
}

TEST_CASE("cli: simulate is byte-identical under a repeated seed") {
  const fs::path dir = work_dir("repeat");
  write_text(dir / "sim.ini", "[simulation]\nT = 40\n");
  REQUIRE(run_cli("simulate --config " + (dir / "sim.ini").string() +
                  " --seed 77 --out " + (dir / "a").string()) == 0);
  REQUIRE(run_cli("simulate --config " + (dir / "sim.ini").string() +
                  " --seed 77 --out " + (dir / "b").string()) == 0);
  for (const char* name : {"theta.csv", "x.csv", "y.csv", "z.csv", "c.csv"}) {
    REQUIRE(read_file(dir / "a" / name) == read_file(dir / "b" / name));
  }
  REQUIRE(run_cli("simulate --config " + (dir / "sim.ini").string() +
                  " --seed 78 --out " + (dir / "c").string()) == 0);
  REQUIRE(read_file(dir / "a" / "z.csv") != read_file(dir / "c" / "z.csv"));
}

TEST_CASE("cli: estimate writes trace, summary and theta_hat consistently") {
  const fs::path dir = work_dir("estimate");
  write_text(dir / "sim.ini", "[simulation]\nT = 12\nseed = 9\n");
  REQUIRE(run_cli("simulate --config " + (dir / "sim.ini").string() +
                  " --out " + (dir / "data").string()) == 0);

  write_text(dir / "est.ini",
             "[estimation]\n"
             "iterations = 300\n"
             "burn_in = 60\n"
             "seed = 4\n");
  REQUIRE(run_cli("estimate --config " + (dir / "est.ini").string() +
                  " --data " + (dir / "data").string() + " --out " +
                  (dir / "run").string()) == 0);
  for (const char* name : {"trace.csv", "summary.csv", "theta_hat.csv",
                           "run.log"}) {
    REQUIRE(fs::exists(dir / "run" / name));
  }

  // Determinism: a rerun with the same config produces identical CSVs.
  REQUIRE(run_cli("estimate --config " + (dir / "est.ini").string() +
                  " --data " + (dir / "data").string() + " --out " +
                  (dir / "run2").string()) == 0);
  for (const char* name : {"trace.csv", "summary.csv", "theta_hat.csv"}) {
    REQUIRE(read_file(dir / "run" / name) == read_file(dir / "run2" / name));
  }

  // The summary MSE is reproducible from the emitted theta_hat file alone.
  REQUIRE(run_cli("summarize --run " + (dir / "run").string() + " --data " +
                  (dir / "data").string() + " --out " +
                  (dir / "resummary").string()) == 0);
  const auto original = read_summary_csv(dir / "run" / "summary.csv");
  const auto recomputed = read_summary_csv(dir / "resummary" / "summary.csv");
  REQUIRE(std::abs(original.at("mse") - recomputed.at("mse")) < 1e-9);
  REQUIRE(std::abs(original.at("phi_1_mean") - recomputed.at("phi_1_mean")) <
          1e-9);
}

TEST_CASE("cli: zero iterations exit with the config code") {
  const fs::path dir = work_dir("zeroiter");
  write_text(dir / "sim.ini", "[simulation]\nT = 5\n");
  REQUIRE(run_cli("simulate --config " + (dir / "sim.ini").string() +
                  " --out " + (dir / "data").string()) == 0);
  write_text(dir / "est.ini", "[estimation]\niterations = 0\nburn_in = 0\n");
  REQUIRE(run_cli("estimate --config " + (dir / "est.ini").string() +
                  " --data " + (dir / "data").string() + " --out " +
                  (dir / "run").string()) == 2);
}

TEST_CASE("cli: a truncated pre-sample cost window is an explicit error") {
  const fs::path dir = work_dir("presample");
  write_text(dir / "sim.ini", "[simulation]\nT = 6\n");
  REQUIRE(run_cli("simulate --config " + (dir / "sim.ini").string() +
                  " --out " + (dir / "data").string()) == 0);

  // Drop the first pre-sample row of c.csv (day t = -1).
  const CsvSeries c = read_series_csv(dir / "data" / "c.csv");
  write_series_csv(dir / "data" / "c.csv", "t", c.first_index + 1,
                   c.columns, c.values.bottomRows(c.values.rows() - 1));

  write_text(dir / "est.ini", "[estimation]\niterations = 50\nburn_in = 10\n");
  REQUIRE(run_cli("estimate --config " + (dir / "est.ini").string() +
                  " --data " + (dir / "data").string() + " --out " +
                  (dir / "run").string()) == 2);
}

TEST_CASE("cli: experiment grid emits per-cell rows plus medians, "
          "independent of worker count") {
  const fs::path dir = work_dir("experiment");
  write_text(dir / "exp.ini",
             "[experiment]\n"
             "kind = discount-grid\n"
             "seeds = 3 4\n"
             "deltas = 0.7 0.9\n"
             "include_known_w = false\n"
             "[simulation]\n"
             "T = 12\n"
             "[estimation]\n"
             "iterations = 120\n"
             "burn_in = 20\n");
  REQUIRE(run_cli("experiment --config " + (dir / "exp.ini").string() +
                  " --out " + (dir / "one").string() + " --threads 1") == 0);
  REQUIRE(run_cli("experiment --config " + (dir / "exp.ini").string() +
                  " --out " + (dir / "two").string() + " --threads 2") == 0);
  REQUIRE(read_file(dir / "one" / "results.csv") ==
          read_file(dir / "two" / "results.csv"));

  const std::string results = read_file(dir / "one" / "results.csv");
  int lines = 0;
  for (char ch : results) {
    if (ch == '\n') ++lines;
  }
  // header + 2 cells x 2 seeds + 2 median rows
  REQUIRE(lines == 1 + 4 + 2);
  REQUIRE(results.find("delta=0.7,median,aggregate") != std::string::npos);
}

TEST_CASE("cli: empty experiment seed list is rejected") {
  const fs::path dir = work_dir("noseeds");
  write_text(dir / "exp.ini",
             "[experiment]\nkind = discount-grid\ndeltas = 0.9\nseeds =\n");
  REQUIRE(run_cli("experiment --config " + (dir / "exp.ini").string() +
                  " --out " + (dir / "out").string()) == 2);
}
