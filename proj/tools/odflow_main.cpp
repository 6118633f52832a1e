// Command-line front end: simulate synthetic datasets, estimate mean OD
// flows and route choice sensitivities from link counts, run experiment
// grids, and recompute summaries from emitted files.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "odflow/experiment.hpp"
#include "odflow/io.hpp"
#include "odflow/network.hpp"
#include "odflow/sampler.hpp"
#include "odflow/simulator.hpp"

namespace {

namespace fs = std::filesystem;
using namespace odflow;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct NetworkChoice {
  NetworkBundle bundle;
  std::string source;
};

NetworkChoice resolve_network(const ConfigFile& cfg,
                              const std::string& section) {
  const std::string name = cfg.get_string(section, "network", "canonical");
  if (name == "canonical") {
    return NetworkChoice{canonical_network(), "canonical"};
  }
  Network network = read_network_file(name);
  RouteSet routes = enumerate_routes(network);
  return NetworkChoice{NetworkBundle{std::move(network), std::move(routes)},
                       name};
}

ConfigFile load_config_or_empty(const std::string& path) {
  if (path.empty()) return ConfigFile{};
  return ConfigFile::parse_file(path);
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_flag) {
  const ConfigFile cfg = load_config_or_empty(config_path);
  NetworkChoice net = resolve_network(cfg, "simulation");
  SimulationConfig config = load_simulation_config(cfg, net.bundle.network);
  if (seed_flag) config.seed = *seed_flag;

  RngStream rng(config.seed, 0);
  const SyntheticDataset dataset = generate(config, net.bundle, rng);
  write_dataset(out_dir, config, net.bundle, dataset, net.source);

  const long clamp_total =
      dataset.clamps.theta_bounds + dataset.clamps.x_negative +
      dataset.clamps.y_negative + dataset.clamps.z_negative;
  std::cout << "wrote dataset to " << out_dir << " (T=" << config.horizon
            << ", seed=" << config.seed << ", clamps=" << clamp_total << ")\n";
  return kExitOk;
}

int cmd_estimate(const std::string& config_path, const std::string& data_dir,
                 const std::string& out_dir,
                 std::optional<std::uint64_t> seed_flag) {
  const auto start = std::chrono::steady_clock::now();
  const ConfigFile cfg = load_config_or_empty(config_path);
  EstimationSettings settings = load_estimation_settings(cfg);
  if (seed_flag) settings.mcmc.seed = *seed_flag;

  const LoadedDataset loaded = read_dataset(data_dir);
  if (settings.memory > loaded.data.memory) {
    throw ConfigError("dataset pre-sample cost window covers r=" +
                      std::to_string(loaded.data.memory) +
                      " days but the estimation memory length is r=" +
                      std::to_string(settings.memory));
  }
  const CostHistory costs = replay_costs(loaded.data);
  const EstimationResult result =
      run_estimation(loaded.data.z, loaded.link_ids, costs, settings,
                     loaded.bundle, &loaded.data.theta);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  write_trace_csv(out / "trace.csv", result.trace);
  write_theta_hat_csv(out / "theta_hat.csv", result.summary.theta_hat,
                      loaded.bundle.network);
  write_summary_csv(out / "summary.csv", result.summary,
                    settings.mcmc.iterations, settings.mcmc.burn_in);

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  {
    ConfigWriter log;
    log.section("run");
    log.entry("data", data_dir);
    log.entry("seed", settings.mcmc.seed);
    log.entry("iterations", static_cast<long>(settings.mcmc.iterations));
    log.entry("burn_in", static_cast<long>(settings.mcmc.burn_in));
    {
      std::string ids;
      for (std::size_t i = 0; i < result.observed_links.size(); ++i) {
        if (i > 0) ids += " ";
        ids += std::to_string(result.observed_links[i]);
      }
      log.entry("observed_links", ids);
    }
    log.entry("acceptance_rate", result.summary.acceptance_rate);
    if (result.summary.has_mse) log.entry("mse", result.summary.mse);
    log.entry("wall_seconds", wall);
    write_file_atomic(out / "run.log", log.text());
  }
  std::cout << "acceptance_rate=" << result.summary.acceptance_rate;
  if (result.summary.has_mse) std::cout << " mse=" << result.summary.mse;
  std::cout << " wall_seconds=" << wall << "\n";
  return kExitOk;
}

int cmd_experiment(const std::string& config_path, const std::string& out_dir,
                   int threads) {
  if (config_path.empty()) {
    throw ConfigError("experiment requires --config");
  }
  const ConfigFile cfg = ConfigFile::parse_file(config_path);
  NetworkChoice net = resolve_network(cfg, "experiment");
  const ExperimentSpec spec = load_experiment_spec(cfg, net.bundle.network);

  const auto start = std::chrono::steady_clock::now();
  const std::vector<CellResult> results =
      run_experiment(spec, net.bundle, threads);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  const int phi_dim = spec.est.mcmc.phi_init.size() > 0
                          ? static_cast<int>(spec.est.mcmc.phi_init.size())
                          : spec.est.memory;
  write_experiment_results_csv(out / "results.csv", results, phi_dim);
  {
    ConfigWriter log;
    log.section("experiment");
    log.entry("config", config_path);
    log.entry("threads", static_cast<long>(threads));
    log.entry("wall_seconds", wall);
    log.section("cells");
    for (const CellResult& r : results) {
      log.entry(r.cell + "/" + std::to_string(r.seed),
                (r.ok ? std::string("ok ") : "failed ") +
                    io_detail::format_double(r.wall_seconds) + "s" +
                    (r.ok ? "" : " " + r.error));
    }
    write_file_atomic(out / "run.log", log.text());
  }

  int failed = 0;
  for (const CellResult& r : results) {
    if (!r.ok) ++failed;
  }
  std::cout << "experiment finished: " << results.size() - failed << "/"
            << results.size() << " cells ok, results in " << out_dir << "\n";
  if (failed == static_cast<int>(results.size())) return kExitNumerical;
  return kExitOk;
}

int cmd_summarize(const std::string& run_dir, const std::string& data_dir,
                  const std::string& out_dir) {
  const fs::path run(run_dir);
  const TraceOnDisk trace = read_trace_csv(run / "trace.csv");

  std::string out = "metric,value\n";
  auto add = [&](const std::string& metric, double value) {
    out += metric + "," + io_detail::format_double(value) + "\n";
  };
  for (Eigen::Index c = 0; c < trace.phi.cols(); ++c) {
    std::vector<double> column(trace.phi.rows());
    for (Eigen::Index r = 0; r < trace.phi.rows(); ++r) {
      column[static_cast<std::size_t>(r)] = trace.phi(r, c);
    }
    const std::string base = "phi_" + std::to_string(c + 1);
    add(base + "_mean", trace.phi.col(c).mean());
    if (column.size() > 1) {
      const auto hpd = hpd_interval(column, 0.95);
      add(base + "_hpd_lo", hpd.first);
      add(base + "_hpd_hi", hpd.second);
    }
  }
  {
    long accepted = 0;
    for (int flag : trace.accepted) accepted += flag;
    add("stored_acceptance_rate",
        trace.accepted.empty()
            ? 0.0
            : static_cast<double>(accepted) /
                  static_cast<double>(trace.accepted.size()));
  }
  if (!data_dir.empty()) {
    const LoadedDataset loaded = read_dataset(data_dir);
    const Eigen::MatrixXd theta_hat =
        read_theta_hat_csv(run / "theta_hat.csv", loaded.bundle.network);
    if (theta_hat.rows() != loaded.data.theta.rows()) {
      throw ConfigError("summarize: theta_hat horizon does not match dataset");
    }
    add("mse", (theta_hat - loaded.data.theta).squaredNorm() /
                   static_cast<double>(loaded.data.theta.size()));
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file_atomic(fs::path(out_dir) / "summary.csv", out);
  }
  std::cout << out;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"day-to-day OD demand estimation from link counts"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  std::string run_dir;
  std::optional<std::uint64_t> seed_flag;
  int threads = 1;

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
  simulate->add_option("--config", config_path, "simulation config file");
  simulate->add_option("--out", out_dir, "output dataset directory")
      ->required();
  simulate->add_option("--seed", seed_flag, "override the config seed");

  auto* estimate = app.add_subcommand("estimate", "run the MCMC estimator");
  estimate->add_option("--config", config_path, "estimation config file");
  estimate->add_option("--data", data_dir, "dataset directory")->required();
  estimate->add_option("--out", out_dir, "output directory")->required();
  estimate->add_option("--seed", seed_flag, "override the config seed");

  auto* experiment = app.add_subcommand("experiment", "run an experiment grid");
  experiment->add_option("--config", config_path, "experiment spec file")
      ->required();
  experiment->add_option("--out", out_dir, "output directory")->required();
  experiment->add_option("--threads", threads, "parallel estimation workers")
      ->check(CLI::PositiveNumber);

  auto* summarize =
      app.add_subcommand("summarize", "recompute summaries from run files");
  summarize->add_option("--run", run_dir, "estimate output directory")
      ->required();
  summarize->add_option("--data", data_dir,
                        "dataset directory (enables MSE recomputation)");
  summarize->add_option("--out", out_dir, "optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);  // --help / --version
    }
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (simulate->parsed()) {
      return cmd_simulate(config_path, out_dir, seed_flag);
    }
    if (estimate->parsed()) {
      return cmd_estimate(config_path, data_dir, out_dir, seed_flag);
    }
    if (experiment->parsed()) {
      return cmd_experiment(config_path, out_dir, threads);
    }
    if (summarize->parsed()) {
      return cmd_summarize(run_dir, data_dir, out_dir);
    }
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const NotPsdError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitNumerical;
  }
  return kExitConfig;
}
