#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "odflow/network.hpp"
#include "odflow/route_choice.hpp"
#include "odflow/stochastics.hpp"

namespace odflow {

/// Parameters of the synthetic data generator. Matrix fields default to the
/// standard desk-scale setup: theta0 = 50, W = 10 I, Sigma_x = Sigma_z = I,
/// phi = (0.5, 0.3), pi = 0.01, r = 2, T = 100, demand bounded in [10, 100].
struct SimulationConfig {
  SimulationConfig(int num_od_pairs, int num_links)
      : theta0(Eigen::VectorXd::Constant(num_od_pairs, 50.0)),
        w(10.0 * Eigen::MatrixXd::Identity(num_od_pairs, num_od_pairs)),
        sigma_x(Eigen::MatrixXd::Identity(num_od_pairs, num_od_pairs)),
        sigma_z(Eigen::MatrixXd::Identity(num_links, num_links)),
        phi((Eigen::VectorXd(2) << 0.5, 0.3).finished()) {}

  Eigen::VectorXd theta0;
  Eigen::MatrixXd w;
  Eigen::MatrixXd sigma_x;
  Eigen::MatrixXd sigma_z;
  PhiVector phi;
  double pi = 0.01;
  int memory = 2;    // r
  int horizon = 100; // T
  double demand_lo = 10.0;
  double demand_hi = 100.0;
  std::uint64_t seed = 0;
};

/// How often each clamp fired during generation, counted per component.
struct ClampCounts {
  long theta_bounds = 0;
  long x_negative = 0;
  long y_negative = 0;
  long z_negative = 0;
};

struct SyntheticDataset {
  Eigen::MatrixXd theta;  // T x n mean OD flows
  Eigen::MatrixXd x;      // T x n realized OD flows
  Eigen::MatrixXd y;      // T x K route flows
  Eigen::MatrixXd z;      // T x |L| link volumes (all links)
  Eigen::MatrixXd costs;  // (T + r) x K route costs, first row is day 1 - r
  int memory = 2;
  ClampCounts clamps;
};

namespace detail {

inline long clamp_in_place(Eigen::VectorXd& v, double lo, double hi) {
  long events = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v(i) < lo) {
      v(i) = lo;
      ++events;
    } else if (v(i) > hi) {
      v(i) = hi;
      ++events;
    }
  }
  return events;
}

}  // namespace detail

/// Runs the generative chain day by day: demand random walk (clamped into
/// the configured bounds), realized flows, logit route split driven by the
/// previous r days' route costs, route flows with multinomial-like noise,
/// BPR route costs from all-link volumes, and noisy link counts. Negative
/// draws of flows and volumes are clamped at zero; every clamp is counted.
inline SyntheticDataset generate(const SimulationConfig& config,
                                 const NetworkBundle& bundle, RngStream& rng) {
  const Network& network = bundle.network;
  const RouteSet& routes = bundle.routes;
  const int n = network.num_od_pairs();
  const int num_links = network.num_links();
  const int num_routes = routes.total_routes();
  const int horizon = config.horizon;

  if (config.theta0.size() != n || config.w.rows() != n ||
      config.sigma_x.rows() != n || config.sigma_z.rows() != num_links) {
    throw std::invalid_argument("generate: config dimensions do not match "
                                "the network");
  }
  if (!(config.demand_lo < config.demand_hi) || horizon < 1 ||
      config.memory < 1) {
    throw std::invalid_argument("generate: invalid bounds, horizon or memory");
  }

  const IncidenceMatrix incidence =
      incidence_matrix(routes, network, all_link_ids(network));
  const Eigen::MatrixXd& delta = incidence.full();

  SyntheticDataset out;
  out.memory = config.memory;
  out.theta.resize(horizon, n);
  out.x.resize(horizon, n);
  out.y.resize(horizon, num_routes);
  out.z.resize(horizon, num_links);

  // Pre-sample window: free-flow route costs on every day t <= 0.
  CostHistory history(config.memory, horizon, num_routes);
  const Eigen::VectorXd free_flow =
      route_costs(network, routes, Eigen::VectorXd::Zero(num_links));
  {
    int t = 1 - config.memory;
    for (; t <= 0; ++t) history.set_cost(t, free_flow);
  }

  const PsdFactor w_factor = factor_psd(config.w);
  const PsdFactor sigma_x_factor = factor_psd(config.sigma_x);
  const PsdFactor sigma_z_factor = factor_psd(config.sigma_z);

  Eigen::VectorXd theta_prev = config.theta0;
  for (int t = 1; t <= horizon; ++t) {
    Eigen::VectorXd theta_t = mvn_sample(theta_prev, w_factor, rng);
    out.clamps.theta_bounds +=
        detail::clamp_in_place(theta_t, config.demand_lo, config.demand_hi);

    Eigen::VectorXd x_t = mvn_sample(theta_t, sigma_x_factor, rng);
    out.clamps.x_negative += detail::clamp_in_place(
        x_t, 0.0, std::numeric_limits<double>::infinity());

    const ChoiceStructure choice =
        choice_structure(config.phi, history, config.pi, routes, t);

    Eigen::VectorXd y_t(num_routes);
    for (int j = 0; j < n; ++j) {
      const int offset = routes.pair_offset(j);
      const int nj = routes.num_routes(j);
      const Eigen::VectorXd mean = x_t(j) * choice.probabilities[j];
      const Eigen::MatrixXd cov =
          route_flow_covariance(x_t(j), choice.probabilities[j]);
      y_t.segment(offset, nj) = mvn_sample(mean, factor_psd(cov), rng);
    }
    out.clamps.y_negative += detail::clamp_in_place(
        y_t, 0.0, std::numeric_limits<double>::infinity());

    const Eigen::VectorXd link_volumes = delta * y_t;
    const Eigen::VectorXd c_t = route_costs(network, routes, link_volumes);
    history.set_cost(t, c_t);

    Eigen::VectorXd z_t = mvn_sample(link_volumes, sigma_z_factor, rng);
    out.clamps.z_negative += detail::clamp_in_place(
        z_t, 0.0, std::numeric_limits<double>::infinity());

    out.theta.row(t - 1) = theta_t;
    out.x.row(t - 1) = x_t;
    out.y.row(t - 1) = y_t;
    out.z.row(t - 1) = z_t;
    theta_prev = theta_t;
  }
  out.costs = history.rows();
  return out;
}

/// Adapts a generated dataset to the estimator's cost-history contract,
/// covering days 1 - r .. T.
inline CostHistory replay_costs(const SyntheticDataset& dataset) {
  return CostHistory(dataset.memory, dataset.costs);
}

}  // namespace odflow
