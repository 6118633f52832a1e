#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "odflow/dlm_filter.hpp"
#include "odflow/io.hpp"
#include "odflow/network.hpp"
#include "odflow/sampler.hpp"
#include "odflow/simulator.hpp"

namespace odflow {

/// Everything an estimation run needs beyond the data: model scalars plus
/// the MCMC configuration. Covariances enter as isotropic scales, matching
/// how the desk-scale experiments are specified.
struct EstimationSettings {
  McmcConfig mcmc;
  double sigma_x_scale = 1.0;
  double sigma_z_scale = 1.0;
  double pi = 0.01;
  int memory = 2;
  bool use_discount = false;
  double w_scale = 10.0;
  double delta = 0.9;
  double m0_value = 100.0;
  double c0_value = 1000.0;
  std::vector<int> observed_links;  // empty means all links
};

inline ModelParams make_model_params(const EstimationSettings& settings,
                                     const Network& network,
                                     const std::vector<int>& observed) {
  const int n = network.num_od_pairs();
  const int m = static_cast<int>(observed.size());
  ModelParams params;
  params.sigma_x =
      settings.sigma_x_scale * Eigen::MatrixXd::Identity(n, n);
  params.sigma_z =
      settings.sigma_z_scale * Eigen::MatrixXd::Identity(m, m);
  params.evolution =
      settings.use_discount
          ? Evolution::discounted(settings.delta)
          : Evolution::known_w(settings.w_scale *
                               Eigen::MatrixXd::Identity(n, n));
  params.pi = settings.pi;
  params.memory = settings.memory;
  params.observed_links = observed;
  params.m0 = Eigen::VectorXd::Constant(n, settings.m0_value);
  params.c0 = settings.c0_value * Eigen::MatrixXd::Identity(n, n);
  return params;
}

struct EstimationResult {
  Trace trace;
  PosteriorSummary summary;
  std::vector<int> observed_links;
};

/// Runs one Gibbs chain against a dataset: selects the observed link
/// columns, builds the routed network and model parameters, samples, and
/// summarizes (with MSE when the simulated truth is given).
inline EstimationResult run_estimation(const Eigen::MatrixXd& z_all,
                                       const std::vector<int>& z_link_ids,
                                       const CostHistory& costs,
                                       const EstimationSettings& settings,
                                       const NetworkBundle& bundle,
                                       const Eigen::MatrixXd* truth = nullptr) {
  std::vector<int> observed = settings.observed_links;
  if (observed.empty()) {
    observed = all_link_ids(bundle.network);
  }
  std::sort(observed.begin(), observed.end());

  std::map<int, Eigen::Index> column_of;
  for (std::size_t c = 0; c < z_link_ids.size(); ++c) {
    column_of[z_link_ids[c]] = static_cast<Eigen::Index>(c);
  }
  Eigen::MatrixXd z(z_all.rows(), observed.size());
  for (std::size_t i = 0; i < observed.size(); ++i) {
    auto it = column_of.find(observed[i]);
    if (it == column_of.end()) {
      throw ConfigError("observed link " + std::to_string(observed[i]) +
                        " has no column in the volume data");
    }
    z.col(static_cast<Eigen::Index>(i)) = z_all.col(it->second);
  }

  RoutedNetwork routed = build_routed_network(bundle, observed);
  ModelParams params = make_model_params(settings, bundle.network, observed);

  EstimationResult out;
  out.observed_links = observed;
  out.trace = gibbs_run(settings.mcmc, z, costs, params, routed);
  out.summary = posterior_summary(out.trace, truth);
  return out;
}

// ---------------------------------------------------------------------------
// Experiment grids.
// ---------------------------------------------------------------------------

struct ExperimentSpec {
  enum class Kind { full_observation, discount_grid, partial_links };

  Kind kind = Kind::full_observation;
  std::vector<double> deltas;               // discount-grid cells
  bool include_known_w = true;              // adds a known-W baseline cell
  std::vector<std::vector<int>> link_sets;  // partial-links cells
  std::vector<std::uint64_t> seeds;
  SimulationConfig sim;
  EstimationSettings est;

  ExperimentSpec(int num_od_pairs, int num_links)
      : sim(num_od_pairs, num_links) {}
};

struct ExperimentCell {
  std::string label;
  std::vector<int> observed_links;  // empty means all
  bool use_discount = false;
  double delta = 0.9;
};

inline std::string link_set_label(const std::vector<int>& links) {
  std::string out = "links=";
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (i > 0) out += "+";
    out += std::to_string(links[i]);
  }
  return out;
}

inline std::vector<ExperimentCell> expand_cells(const ExperimentSpec& spec) {
  std::vector<ExperimentCell> cells;
  switch (spec.kind) {
    case ExperimentSpec::Kind::full_observation:
      cells.push_back(ExperimentCell{"full", {}, spec.est.use_discount,
                                     spec.est.delta});
      break;
    case ExperimentSpec::Kind::discount_grid:
      if (spec.deltas.empty()) {
        throw ConfigError("discount-grid experiment needs a deltas list");
      }
      for (double d : spec.deltas) {
        cells.push_back(ExperimentCell{
            "delta=" + io_detail::format_label(d), {}, true, d});
      }
      if (spec.include_known_w) {
        cells.push_back(ExperimentCell{"known_w", {}, false, 1.0});
      }
      break;
    case ExperimentSpec::Kind::partial_links:
      if (spec.link_sets.empty()) {
        throw ConfigError("partial-links experiment needs link sets");
      }
      for (const auto& set : spec.link_sets) {
        if (set.empty()) {
          throw ConfigError("partial-links experiment: empty link set");
        }
        cells.push_back(ExperimentCell{link_set_label(set), set,
                                       spec.est.use_discount, spec.est.delta});
      }
      break;
  }
  return cells;
}

struct CellResult {
  std::string cell;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  PosteriorSummary summary;
  double wall_seconds = 0.0;
};

/// Runs every (cell x seed) combination. Datasets are generated once per
/// seed and shared across cells; estimation chains get distinct RNG streams
/// per task so results do not depend on worker scheduling.
inline std::vector<CellResult> run_experiment(const ExperimentSpec& spec,
                                              const NetworkBundle& bundle,
                                              int threads = 1) {
  if (spec.seeds.empty()) {
    throw ConfigError("experiment needs a non-empty seed list");
  }
  const std::vector<ExperimentCell> cells = expand_cells(spec);

  struct PerSeedData {
    SyntheticDataset data;
    std::vector<int> link_ids;
  };
  std::vector<PerSeedData> datasets;
  datasets.reserve(spec.seeds.size());
  for (std::uint64_t seed : spec.seeds) {
    SimulationConfig sim = spec.sim;
    sim.seed = seed;
    RngStream rng(seed, 0);
    PerSeedData per_seed{generate(sim, bundle, rng),
                         all_link_ids(bundle.network)};
    datasets.push_back(std::move(per_seed));
  }

  struct Task {
    std::size_t cell_index;
    std::size_t seed_index;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
      tasks.push_back(Task{c, s});
    }
  }

  std::vector<CellResult> results(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& task = tasks[i];
      const ExperimentCell& cell = cells[task.cell_index];
      CellResult& result = results[i];
      result.cell = cell.label;
      result.seed = spec.seeds[task.seed_index];
      const auto start = std::chrono::steady_clock::now();
      try {
        EstimationSettings settings = spec.est;
        settings.observed_links = cell.observed_links;
        settings.use_discount = cell.use_discount;
        settings.delta = cell.delta;
        settings.mcmc.seed = result.seed;
        settings.mcmc.stream = 1 + task.cell_index;
        const PerSeedData& per_seed = datasets[task.seed_index];
        const CostHistory costs = replay_costs(per_seed.data);
        EstimationResult est =
            run_estimation(per_seed.data.z, per_seed.link_ids, costs,
                           settings, bundle, &per_seed.data.theta);
        result.summary = std::move(est.summary);
        result.ok = true;
      } catch (const std::exception& err) {
        result.ok = false;
        result.error = err.what();
      }
      result.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                        start)
              .count();
    }
  };

  const int worker_count = std::max(1, threads);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(worker_count));
  for (int i = 0; i < worker_count; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return results;
}

namespace experiment_detail {

inline double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace experiment_detail

/// results.csv: one row per (cell, seed) plus one across-seed median row per
/// cell. Wall-clock timings deliberately stay out of this file so repeated
/// runs are byte-identical; they are reported in the run log instead.
inline void write_experiment_results_csv(const std::filesystem::path& path,
                                         const std::vector<CellResult>& results,
                                         int phi_dim) {
  std::string out = "cell,seed,status";
  for (int c = 1; c <= phi_dim; ++c) {
    const std::string base = ",phi_" + std::to_string(c);
    out += base + "_mean" + base + "_hpd_lo" + base + "_hpd_hi";
  }
  out += ",acceptance_rate,mse,note\n";

  auto append_row = [&](const std::string& cell, const std::string& seed,
                        const std::string& status, const CellResult* r) {
    out += cell + "," + seed + "," + status;
    if (r != nullptr && r->ok) {
      for (int c = 0; c < phi_dim; ++c) {
        out += "," + io_detail::format_double(r->summary.phi_mean(c));
        out += "," + io_detail::format_double(
                         r->summary.phi_hpd[static_cast<std::size_t>(c)].first);
        out += "," + io_detail::format_double(
                         r->summary.phi_hpd[static_cast<std::size_t>(c)].second);
      }
      out += "," + io_detail::format_double(r->summary.acceptance_rate);
      out += r->summary.has_mse
                 ? "," + io_detail::format_double(r->summary.mse)
                 : ",";
      out += ",";
    } else {
      for (int c = 0; c < 3 * phi_dim + 2; ++c) out += ",";
      std::string note = r != nullptr ? r->error : "";
      std::replace(note.begin(), note.end(), ',', ';');
      std::replace(note.begin(), note.end(), '\n', ' ');
      out += "," + note;
    }
    out += "\n";
  };

  std::vector<std::string> cell_order;
  std::map<std::string, std::vector<const CellResult*>> by_cell;
  for (const CellResult& r : results) {
    if (!by_cell.count(r.cell)) cell_order.push_back(r.cell);
    by_cell[r.cell].push_back(&r);
    append_row(r.cell, std::to_string(r.seed), r.ok ? "ok" : "failed", &r);
  }

  for (const std::string& cell : cell_order) {
    std::vector<double> mse;
    std::vector<double> acceptance;
    std::vector<std::vector<double>> phi_means(
        static_cast<std::size_t>(phi_dim));
    for (const CellResult* r : by_cell[cell]) {
      if (!r->ok) continue;
      if (r->summary.has_mse) mse.push_back(r->summary.mse);
      acceptance.push_back(r->summary.acceptance_rate);
      for (int c = 0; c < phi_dim; ++c) {
        phi_means[static_cast<std::size_t>(c)].push_back(
            r->summary.phi_mean(c));
      }
    }
    out += cell + ",median,aggregate";
    for (int c = 0; c < phi_dim; ++c) {
      out += "," + io_detail::format_double(experiment_detail::median(
                       phi_means[static_cast<std::size_t>(c)]));
      out += ",,";
    }
    out += "," +
           io_detail::format_double(experiment_detail::median(acceptance));
    out += mse.empty()
               ? ","
               : "," + io_detail::format_double(experiment_detail::median(mse));
    out += ",\n";
  }
  write_file_atomic(path, out);
}

/// Across-seed median MSE for one cell label.
inline double median_mse(const std::vector<CellResult>& results,
                         const std::string& cell) {
  std::vector<double> values;
  for (const CellResult& r : results) {
    if (r.cell == cell && r.ok && r.summary.has_mse) {
      values.push_back(r.summary.mse);
    }
  }
  return experiment_detail::median(values);
}

// ---------------------------------------------------------------------------
// Config loading.
// ---------------------------------------------------------------------------

inline SimulationConfig load_simulation_config(const ConfigFile& cfg,
                                               const Network& network) {
  SimulationConfig config(network.num_od_pairs(), network.num_links());
  config.horizon = static_cast<int>(
      cfg.get_long("simulation", "T", config.horizon));
  config.memory =
      static_cast<int>(cfg.get_long("simulation", "r", config.memory));
  config.pi = cfg.get_double("simulation", "pi", config.pi);
  config.demand_lo =
      cfg.get_double("simulation", "demand_lo", config.demand_lo);
  config.demand_hi =
      cfg.get_double("simulation", "demand_hi", config.demand_hi);
  config.seed = static_cast<std::uint64_t>(
      cfg.get_long("simulation", "seed", 0));
  const auto phi = cfg.get_double_list("simulation", "phi");
  if (!phi.empty()) {
    config.phi = Eigen::Map<const Eigen::VectorXd>(
        phi.data(), static_cast<Eigen::Index>(phi.size()));
  }
  const auto theta0 = cfg.get_double_list("simulation", "theta0");
  if (theta0.size() == 1) {
    config.theta0.setConstant(theta0[0]);
  } else if (!theta0.empty()) {
    if (static_cast<int>(theta0.size()) != network.num_od_pairs()) {
      throw ConfigError("simulation.theta0 needs one value per OD pair");
    }
    config.theta0 = Eigen::Map<const Eigen::VectorXd>(
        theta0.data(), static_cast<Eigen::Index>(theta0.size()));
  }
  const int n = network.num_od_pairs();
  const int num_links = network.num_links();
  config.w = cfg.get_double("simulation", "w_scale", 10.0) *
             Eigen::MatrixXd::Identity(n, n);
  config.sigma_x = cfg.get_double("simulation", "sigma_x_scale", 1.0) *
                   Eigen::MatrixXd::Identity(n, n);
  config.sigma_z = cfg.get_double("simulation", "sigma_z_scale", 1.0) *
                   Eigen::MatrixXd::Identity(num_links, num_links);
  if (!(config.demand_lo < config.demand_hi)) {
    throw ConfigError("simulation bounds: demand_lo must be < demand_hi");
  }
  if (config.horizon < 1 || config.memory < 1) {
    throw ConfigError("simulation: T and r must be >= 1");
  }
  if (config.phi.size() != config.memory) {
    throw ConfigError("simulation: phi length must equal memory length r");
  }
  return config;
}

inline EstimationSettings load_estimation_settings(const ConfigFile& cfg,
                                                   const std::string& section =
                                                       "estimation") {
  EstimationSettings s;
  s.mcmc.iterations = static_cast<int>(
      cfg.get_long(section, "iterations", s.mcmc.iterations));
  s.mcmc.burn_in =
      static_cast<int>(cfg.get_long(section, "burn_in", s.mcmc.burn_in));
  s.mcmc.proposal_scale =
      cfg.get_double(section, "proposal_scale", s.mcmc.proposal_scale);
  s.mcmc.theta_init_mean =
      cfg.get_double(section, "theta_init_mean", s.mcmc.theta_init_mean);
  s.mcmc.theta_init_var =
      cfg.get_double(section, "theta_init_var", s.mcmc.theta_init_var);
  s.mcmc.seed =
      static_cast<std::uint64_t>(cfg.get_long(section, "seed", 0));
  s.mcmc.thin = static_cast<int>(cfg.get_long(section, "thin", s.mcmc.thin));
  s.mcmc.theta_thin = static_cast<int>(
      cfg.get_long(section, "theta_thin", s.mcmc.theta_thin));
  const auto phi_init = cfg.get_double_list(section, "phi_init");
  if (!phi_init.empty()) {
    s.mcmc.phi_init = Eigen::Map<const Eigen::VectorXd>(
        phi_init.data(), static_cast<Eigen::Index>(phi_init.size()));
  }
  s.sigma_x_scale =
      cfg.get_double(section, "sigma_x_scale", s.sigma_x_scale);
  s.sigma_z_scale =
      cfg.get_double(section, "sigma_z_scale", s.sigma_z_scale);
  s.pi = cfg.get_double(section, "pi", s.pi);
  s.memory = static_cast<int>(cfg.get_long(section, "r", s.memory));
  const std::string evolution =
      cfg.get_string(section, "evolution", "known");
  if (evolution == "known") {
    s.use_discount = false;
  } else if (evolution == "discount") {
    s.use_discount = true;
  } else {
    throw ConfigError("estimation.evolution must be 'known' or 'discount'");
  }
  s.w_scale = cfg.get_double(section, "w_scale", s.w_scale);
  s.delta = cfg.get_double(section, "delta", s.delta);
  s.m0_value = cfg.get_double(section, "m0", s.m0_value);
  s.c0_value = cfg.get_double(section, "c0", s.c0_value);
  const std::string observed =
      cfg.get_string(section, "observed_links", "all");
  if (observed != "all") {
    s.observed_links = cfg.get_int_list(section, "observed_links");
    if (s.observed_links.empty()) {
      throw ConfigError("estimation.observed_links must be 'all' or a "
                        "non-empty id list");
    }
  }
  if (s.mcmc.iterations <= 0 || s.mcmc.burn_in < 0 ||
      s.mcmc.burn_in >= s.mcmc.iterations) {
    throw ConfigError("estimation: need 0 <= burn_in < iterations and "
                      "iterations > 0");
  }
  return s;
}

inline ExperimentSpec load_experiment_spec(const ConfigFile& cfg,
                                           const Network& network) {
  ExperimentSpec spec(network.num_od_pairs(), network.num_links());
  const std::string kind = cfg.require("experiment", "kind");
  if (kind == "full-observation") {
    spec.kind = ExperimentSpec::Kind::full_observation;
  } else if (kind == "discount-grid") {
    spec.kind = ExperimentSpec::Kind::discount_grid;
  } else if (kind == "partial-links") {
    spec.kind = ExperimentSpec::Kind::partial_links;
  } else {
    throw ConfigError("experiment.kind must be full-observation, "
                      "discount-grid or partial-links");
  }
  for (const auto& token :
       io_detail::split_ws(cfg.get_string("experiment", "seeds", ""))) {
    spec.seeds.push_back(static_cast<std::uint64_t>(
        io_detail::parse_long(token, "experiment.seeds")));
  }
  if (spec.seeds.empty()) {
    throw ConfigError("experiment.seeds must be a non-empty list");
  }
  const auto deltas = cfg.get_double_list("experiment", "deltas");
  spec.deltas = deltas;
  for (double d : spec.deltas) {
    if (!(d > 0.0 && d <= 1.0)) {
      throw ConfigError("experiment.deltas values must be in (0,1]");
    }
  }
  spec.include_known_w =
      cfg.get_bool("experiment", "include_known_w", spec.include_known_w);
  for (const std::string& row : cfg.values("experiment", "link_set")) {
    std::vector<int> set;
    for (const auto& token : io_detail::split_ws(row)) {
      set.push_back(static_cast<int>(
          io_detail::parse_long(token, "experiment.link_set")));
    }
    spec.link_sets.push_back(std::move(set));
  }
  if (cfg.has_section("simulation")) {
    spec.sim = load_simulation_config(cfg, network);
  }
  if (cfg.has_section("estimation")) {
    spec.est = load_estimation_settings(cfg);
  }
  return spec;
}

}  // namespace odflow
