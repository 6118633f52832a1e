#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "odflow/network.hpp"
#include "odflow/route_choice.hpp"
#include "odflow/stochastics.hpp"

namespace odflow {

/// State evolution: an explicit innovation covariance W_t (constant here),
/// or a discount factor delta in (0,1] with C_bar_t = C_{t-1} / delta.
/// delta = 1 is the static model.
struct Evolution {
  enum class Kind { explicit_w, discount };

  Kind kind = Kind::explicit_w;
  Eigen::MatrixXd w;
  double delta = 1.0;

  static Evolution known_w(Eigen::MatrixXd w_matrix) {
    Evolution e;
    e.kind = Kind::explicit_w;
    e.w = std::move(w_matrix);
    return e;
  }

  static Evolution discounted(double delta) {
    if (!(delta > 0.0 && delta <= 1.0)) {
      throw std::invalid_argument("Evolution: delta must be in (0,1]");
    }
    Evolution e;
    e.kind = Kind::discount;
    e.delta = delta;
    return e;
  }
};

/// Fixed quantities of the dynamic linear model.
struct ModelParams {
  Eigen::MatrixXd sigma_x;         // OD-flow covariance, n x n
  Eigen::MatrixXd sigma_z;         // measurement covariance, |I| x |I|
  Evolution evolution;
  double pi = 0.01;                // non-choice probability
  int memory = 2;                  // route-cost memory length r
  std::vector<int> observed_links; // ascending link ids
  Eigen::VectorXd m0;              // prior mean at t = 0
  Eigen::MatrixXd c0;              // prior covariance at t = 0
};

/// Gaussian moments produced at one filter step. c_factor carries a lower
/// factor of c when the step came out of the square-root engine (discount
/// evolution); it is empty otherwise.
struct FilterStep {
  Eigen::VectorXd m_prior;  // prior mean before observing z_t
  Eigen::MatrixXd c_prior;
  Eigen::VectorXd f;        // one-step forecast of z_t
  Eigen::MatrixXd q;
  Eigen::VectorXd m;        // posterior after observing z_t
  Eigen::MatrixXd c;
  Eigen::MatrixXd c_factor;
};

struct ObservationModel {
  Eigen::MatrixXd f;  // assignment matrix F_t, |I| x n
  Eigen::MatrixXd v;  // observation covariance V_t, |I| x |I|
};

/// Prior propagation under the locally constant state equation.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> predict(
    const Eigen::VectorXd& m_prev, const Eigen::MatrixXd& c_prev,
    const Evolution& evolution) {
  if (evolution.kind == Evolution::Kind::explicit_w) {
    if (evolution.w.rows() != c_prev.rows()) {
      throw std::invalid_argument("predict: W dimension mismatch");
    }
    return {m_prev, c_prev + evolution.w};
  }
  return {m_prev, c_prev / evolution.delta};
}

/// F_t = Delta_I P_t and V_t = F_t Sigma_x F_t^T + Delta_I Sigma_y_hat
/// Delta_I^T + Sigma_z, with Delta_I the observed-row incidence selection.
inline ObservationModel assemble_observation(
    const Eigen::MatrixXd& choice_matrix, const Eigen::MatrixXd& delta_selected,
    const Eigen::MatrixXd& sigma_x, const Eigen::MatrixXd& sigma_y_hat,
    const Eigen::MatrixXd& sigma_z) {
  const Eigen::Index num_routes = delta_selected.cols();
  const Eigen::Index num_pairs = choice_matrix.cols();
  const Eigen::Index num_obs = delta_selected.rows();
  if (choice_matrix.rows() != num_routes || sigma_x.rows() != num_pairs ||
      sigma_y_hat.rows() != num_routes || sigma_z.rows() != num_obs) {
    throw std::invalid_argument("assemble_observation: dimension mismatch");
  }
  ObservationModel out;
  out.f.noalias() = delta_selected * choice_matrix;
  out.v.noalias() = out.f * sigma_x * out.f.transpose();
  out.v.noalias() += delta_selected * sigma_y_hat * delta_selected.transpose();
  out.v += sigma_z;
  return out;
}

/// One-step forecast of the observation vector. Q is symmetrized: under
/// discount evolution the prior covariance can span many orders of
/// magnitude across directions, and the triple product picks up asymmetric
/// roundoff of order |C_prior| * eps.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> forecast(
    const Eigen::VectorXd& m_prior, const Eigen::MatrixXd& c_prior,
    const Eigen::MatrixXd& f_matrix, const Eigen::MatrixXd& v_matrix) {
  Eigen::VectorXd f = f_matrix * m_prior;
  Eigen::MatrixXd q = f_matrix * c_prior * f_matrix.transpose() + v_matrix;
  q = 0.5 * (q + q.transpose()).eval();
  return {std::move(f), std::move(q)};
}

/// Kalman update. Solves against the factor of Q_t; the inverse is never
/// formed. The posterior covariance is symmetrized to stop roundoff drift.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> update(
    const Eigen::VectorXd& m_prior, const Eigen::MatrixXd& c_prior,
    const Eigen::MatrixXd& f_matrix, const Eigen::MatrixXd& v_matrix,
    const Eigen::VectorXd& z) {
  if (z.size() != f_matrix.rows()) {
    throw std::invalid_argument("update: observation dimension mismatch");
  }
  auto [f, q] = forecast(m_prior, c_prior, f_matrix, v_matrix);
  const PsdFactor q_factor = factor_psd(q);
  const Eigen::MatrixXd fc = f_matrix * c_prior;          // |I| x n
  const Eigen::MatrixXd gain_t = q_factor.solve(fc);      // Q^{-1} F C_bar
  Eigen::VectorXd m = m_prior + gain_t.transpose() * (z - f);
  Eigen::MatrixXd c = c_prior - gain_t.transpose() * fc;
  c = 0.5 * (c + c.transpose()).eval();
  return {std::move(m), std::move(c)};
}

/// Everything in the observation model that depends on phi but not on the
/// data: per-day choice probabilities, F_t, the level-independent covariance
/// part F_t Sigma_x F_t^T + Sigma_z, and per-pair congestion blocks
/// Delta_j (diag p - p p^T) Delta_j^T so that
///   V_t(levels) = base_t + sum_j level_j * pair_cov[t][j].
/// Built once per phi and shared by the filter pass and the likelihood.
class AssignmentCache {
 public:
  AssignmentCache(const PhiVector& phi, const CostHistory& history,
                  const ModelParams& params, const RoutedNetwork& net,
                  int horizon)
      : horizon_(horizon) {
    const RouteSet& routes = net.routes;
    const Eigen::MatrixXd& delta_sel = net.incidence.selected();
    const int num_pairs = routes.num_pairs();
    f_.reserve(horizon);
    base_.reserve(horizon);
    pair_cov_.reserve(horizon);
    probs_.reserve(horizon);
    for (int t = 1; t <= horizon; ++t) {
      ChoiceStructure cs =
          choice_structure(phi, history, params.pi, routes, t);
      Eigen::MatrixXd f(delta_sel.rows(), num_pairs);
      std::vector<Eigen::MatrixXd> blocks;
      blocks.reserve(num_pairs);
      for (int j = 0; j < num_pairs; ++j) {
        const int offset = routes.pair_offset(j);
        const int nj = routes.num_routes(j);
        const auto delta_j = delta_sel.middleCols(offset, nj);
        f.col(j).noalias() = delta_j * cs.probabilities[j];
        Eigen::MatrixXd sj = route_flow_covariance(1.0, cs.probabilities[j]);
        blocks.emplace_back(delta_j * sj * delta_j.transpose());
      }
      Eigen::MatrixXd base = f * params.sigma_x * f.transpose();
      base += params.sigma_z;
      f_.push_back(std::move(f));
      base_.push_back(std::move(base));
      pair_cov_.push_back(std::move(blocks));
      probs_.push_back(std::move(cs.probabilities));
    }
  }

  int horizon() const { return horizon_; }
  const Eigen::MatrixXd& assignment(int t) const { return f_.at(t - 1); }
  const std::vector<Eigen::VectorXd>& probabilities(int t) const {
    return probs_.at(t - 1);
  }

  Eigen::MatrixXd observation_cov(int t, const Eigen::VectorXd& levels) const {
    Eigen::MatrixXd v = base_.at(t - 1);
    const auto& blocks = pair_cov_[t - 1];
    for (Eigen::Index j = 0; j < levels.size(); ++j) {
      v.noalias() += levels(j) * blocks[j];
    }
    return v;
  }

 private:
  int horizon_;
  std::vector<Eigen::MatrixXd> f_;
  std::vector<Eigen::MatrixXd> base_;
  std::vector<std::vector<Eigen::MatrixXd>> pair_cov_;
  std::vector<std::vector<Eigen::VectorXd>> probs_;
};

/// Flow levels used when plugging a mean vector into the route-flow
/// covariance: negative or near-zero means would not give a valid
/// covariance, so levels are floored at 1.
inline Eigen::VectorXd covariance_levels(const Eigen::VectorXd& mean) {
  return mean.cwiseMax(1.0);
}

namespace detail {

/// Array square-root Kalman pass for discount evolution. Discounting keeps
/// inflating every data-free direction of the prior covariance, so on long
/// horizons C spans too many orders of magnitude for the covariance-form
/// recurrences; propagating a Cholesky factor halves the exponent range and
/// keeps every produced covariance PSD by construction. One QR of the
/// (m+n) x (m+n) pre-array per day yields Q^{1/2}, the gain and the
/// posterior factor at once.
inline std::vector<FilterStep> filter_pass_sqrt_discount(
    const Eigen::MatrixXd& z, const AssignmentCache& cache,
    const ModelParams& params) {
  const int horizon = static_cast<int>(z.rows());
  const auto n = params.m0.size();
  const auto m_obs = static_cast<Eigen::Index>(z.cols());
  const double sqrt_delta = std::sqrt(params.evolution.delta);

  std::vector<FilterStep> steps;
  steps.reserve(horizon);
  Eigen::VectorXd m = params.m0;
  Eigen::MatrixXd lower = factor_psd(params.c0).lower();
  for (int t = 1; t <= horizon; ++t) {
    FilterStep step;
    step.m_prior = m;
    const Eigen::MatrixXd lower_prior = lower / sqrt_delta;
    step.c_prior = lower_prior * lower_prior.transpose();

    const Eigen::MatrixXd& f_t = cache.assignment(t);
    const Eigen::MatrixXd v_t =
        cache.observation_cov(t, covariance_levels(step.m_prior));
    Eigen::MatrixXd v_factor;
    try {
      v_factor = factor_psd(v_t).lower();
    } catch (const NotPsdError& err) {
      throw NotPsdError("filter_pass: observation covariance failed at t = " +
                            std::to_string(t) + ": " + err.what(),
                        err.min_eigenvalue());
    }

    // Pre-array transpose: [[Rv^T, 0], [(F Lbar)^T, Lbar^T]].
    Eigen::MatrixXd pre = Eigen::MatrixXd::Zero(m_obs + n, m_obs + n);
    pre.topLeftCorner(m_obs, m_obs) = v_factor.transpose();
    pre.bottomLeftCorner(n, m_obs) = (f_t * lower_prior).transpose();
    pre.bottomRightCorner(n, n) = lower_prior.transpose();
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(pre);
    const Eigen::MatrixXd post =
        qr.matrixQR().triangularView<Eigen::Upper>();
    const Eigen::MatrixXd t11 = post.topLeftCorner(m_obs, m_obs);
    const Eigen::MatrixXd t12 = post.topRightCorner(m_obs, n);
    const Eigen::MatrixXd t22 = post.bottomRightCorner(n, n);

    step.f = f_t * step.m_prior;
    step.q = t11.transpose() * t11;
    // m = m_prior + T12^T T11^{-T} (z - f)
    const Eigen::VectorXd innovation = z.row(t - 1).transpose() - step.f;
    const Eigen::VectorXd whitened =
        t11.transpose().triangularView<Eigen::Lower>().solve(innovation);
    step.m = step.m_prior + t12.transpose() * whitened;
    step.c_factor = t22.transpose();
    step.c = step.c_factor * step.c_factor.transpose();

    m = step.m;
    lower = step.c_factor;
    steps.push_back(std::move(step));
  }
  return steps;
}

}  // namespace detail

/// Forward filtering over t = 1..T against observations `z` (one row per
/// day, columns in observed-link order). Runs predict, observation assembly
/// with Sigma_y_hat built from the predicted mean, forecast and update per
/// day, and returns every moment for later reuse in backward sampling.
/// Discount evolution routes through the square-root engine.
inline std::vector<FilterStep> filter_pass(const Eigen::MatrixXd& z,
                                           const AssignmentCache& cache,
                                           const ModelParams& params) {
  const int horizon = static_cast<int>(z.rows());
  if (horizon > cache.horizon()) {
    throw std::invalid_argument("filter_pass: cache shorter than data");
  }
  if (params.evolution.kind == Evolution::Kind::discount) {
    return detail::filter_pass_sqrt_discount(z, cache, params);
  }
  std::vector<FilterStep> steps;
  steps.reserve(horizon);
  Eigen::VectorXd m = params.m0;
  Eigen::MatrixXd c = params.c0;
  for (int t = 1; t <= horizon; ++t) {
    FilterStep step;
    std::tie(step.m_prior, step.c_prior) = predict(m, c, params.evolution);
    const Eigen::MatrixXd& f_t = cache.assignment(t);
    const Eigen::MatrixXd v_t =
        cache.observation_cov(t, covariance_levels(step.m_prior));
    std::tie(step.f, step.q) = forecast(step.m_prior, step.c_prior, f_t, v_t);
    try {
      std::tie(step.m, step.c) =
          update(step.m_prior, step.c_prior, f_t, v_t, z.row(t - 1));
    } catch (const NotPsdError& err) {
      throw NotPsdError("filter_pass: update failed at t = " +
                            std::to_string(t) + ": " + err.what(),
                        err.min_eigenvalue());
    }
    m = step.m;
    c = step.c;
    steps.push_back(std::move(step));
  }
  return steps;
}

inline std::vector<FilterStep> filter_pass(const Eigen::MatrixXd& z,
                                           const CostHistory& history,
                                           const PhiVector& phi,
                                           const ModelParams& params,
                                           const RoutedNetwork& net) {
  if (z.cols() != net.incidence.num_observed()) {
    throw std::invalid_argument(
        "filter_pass: observation width does not match observed links");
  }
  if (!params.observed_links.empty() &&
      params.observed_links != net.incidence.observed_links()) {
    throw std::invalid_argument(
        "filter_pass: params and incidence disagree on observed links");
  }
  AssignmentCache cache(phi, history, params, net,
                        static_cast<int>(z.rows()));
  return filter_pass(z, cache, params);
}

}  // namespace odflow
