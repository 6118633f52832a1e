#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "odflow/dlm_filter.hpp"
#include "odflow/route_choice.hpp"
#include "odflow/stochastics.hpp"

namespace odflow {

struct McmcConfig {
  int iterations = 10000;
  int burn_in = 2000;
  double proposal_scale = 0.04;   // random-walk proposal covariance = scale * I
  Eigen::MatrixXd proposal_cov;   // full proposal covariance, overrides scale
  Eigen::VectorXd phi_init;       // empty -> (1, 1, ...) of length memory
  double theta_init_mean = 100.0;
  double theta_init_var = 100.0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 1;
  int thin = 1;                   // phi trace thinning
  int theta_thin = 10;            // stored theta trajectory thinning
  bool store_theta_samples = false;
};

/// MCMC output. Stored phi rows are post-burn-in and thinned; the theta
/// posterior mean accumulates over every post-burn-in iteration regardless
/// of thinning, and acceptance is counted over the whole run.
struct Trace {
  std::vector<int> iterations;     // global iteration index per stored row
  Eigen::MatrixXd phi;             // stored samples x r
  Eigen::VectorXd log_posterior;   // per stored row
  std::vector<int> accepted;       // per stored row, 0/1
  long accept_count = 0;
  long mh_steps = 0;
  Eigen::MatrixXd theta_mean;      // T x n
  std::vector<Eigen::MatrixXd> theta_samples;
  std::vector<int> theta_sample_iterations;

  double acceptance_rate() const {
    return mh_steps > 0 ? static_cast<double>(accept_count) /
                              static_cast<double>(mh_steps)
                        : 0.0;
  }
};

/// Backward sampling through the saved filter moments: theta_T from the
/// final posterior, then for t = T-1..1 from N(h_t, H_t) with
///   B_t = C_t Cbar_{t+1}^{-1}
///   h_t = m_t + B_t (theta_{t+1} - mbar_{t+1})
///   H_t = C_t - B_t Cbar_{t+1} B_t^T
/// which is the exact joint smoothing draw for the Gaussian state chain.
/// Note the one-step-ahead prior covariance Cbar_{t+1} inside H_t: with B_t
/// as above that is the only index choice that reproduces the exact
/// smoothing distribution (verified against joint-Gaussian conditioning).
inline Eigen::MatrixXd ffbs(const std::vector<FilterStep>& steps,
                            RngStream& rng) {
  if (steps.empty()) {
    throw std::invalid_argument("ffbs: empty filter state sequence");
  }
  const int horizon = static_cast<int>(steps.size());
  const Eigen::Index n = steps.back().m.size();
  Eigen::MatrixXd theta(horizon, n);
  theta.row(horizon - 1) =
      mvn_sample(steps[horizon - 1].m, factor_psd(steps[horizon - 1].c), rng);
  for (int t = horizon - 1; t >= 1; --t) {
    const FilterStep& cur = steps[t - 1];  // day t
    const FilterStep& next = steps[t];     // day t + 1
    try {
      const PsdFactor prior_factor = factor_psd(next.c_prior);
      const Eigen::MatrixXd gain_t = prior_factor.solve(cur.c);  // B_t^T
      const Eigen::VectorXd h =
          cur.m + gain_t.transpose() *
                      (theta.row(t).transpose() - next.m_prior);
      Eigen::MatrixXd cov =
          cur.c - gain_t.transpose() * next.c_prior * gain_t;
      cov = 0.5 * (cov + cov.transpose()).eval();
      // The exact H_t satisfies 0 <= H_t <= C_t; cancellation can leave it
      // indefinite at roundoff scale (delta = 1 collapses it to zero), so a
      // C_t-scaled jitter is the fallback before giving up.
      PsdFactor cov_factor = [&]() {
        try {
          return factor_psd(cov);
        } catch (const NotPsdError&) {
          const double floor = 1e-14 * std::max(cur.c.trace(), 0.0);
          Eigen::MatrixXd padded = cov;
          padded.diagonal().array() += floor;
          return factor_psd(padded);
        }
      }();
      theta.row(t - 1) = mvn_sample(h, cov_factor, rng);
    } catch (const NotPsdError& err) {
      throw NotPsdError("ffbs: backward step failed at t = " +
                            std::to_string(t) + ": " + err.what(),
                        err.min_eigenvalue());
    }
  }
  return theta;
}

/// Evolution-aware variant. Under discount evolution Cbar_{t+1} = C_t /
/// delta holds exactly, so B_t = delta I and H_t = (1 - delta) C_t; using
/// that identity avoids solving against Cbar_{t+1}, whose unobserved
/// directions grow geometrically and make the generic solve ill-conditioned
/// on long horizons.
inline Eigen::MatrixXd ffbs(const std::vector<FilterStep>& steps,
                            const Evolution& evolution, RngStream& rng) {
  if (evolution.kind != Evolution::Kind::discount) {
    return ffbs(steps, rng);
  }
  if (steps.empty()) {
    throw std::invalid_argument("ffbs: empty filter state sequence");
  }
  const double delta = evolution.delta;
  const double sd_scale = std::sqrt(1.0 - delta);
  const int horizon = static_cast<int>(steps.size());
  const Eigen::Index n = steps.back().m.size();
  auto draw = [&](const Eigen::VectorXd& mean, const FilterStep& step,
                  double scale) {
    if (step.c_factor.size() > 0) {
      Eigen::VectorXd xi(n);
      for (Eigen::Index i = 0; i < n; ++i) xi(i) = rng.next_normal();
      return Eigen::VectorXd(mean + scale * (step.c_factor * xi));
    }
    return mvn_sample(mean, factor_psd(scale * scale * step.c), rng);
  };
  Eigen::MatrixXd theta(horizon, n);
  theta.row(horizon - 1) =
      draw(steps[horizon - 1].m, steps[horizon - 1], 1.0);
  for (int t = horizon - 1; t >= 1; --t) {
    const FilterStep& cur = steps[t - 1];
    const FilterStep& next = steps[t];
    const Eigen::VectorXd h =
        cur.m + delta * (theta.row(t).transpose() - next.m_prior);
    try {
      theta.row(t - 1) = draw(h, cur, sd_scale);
    } catch (const NotPsdError& err) {
      throw NotPsdError("ffbs: backward step failed at t = " +
                            std::to_string(t) + ": " + err.what(),
                        err.min_eigenvalue());
    }
  }
  return theta;
}

/// Log likelihood of the observed volumes given a full theta trajectory,
/// with the observation structure prebuilt for one phi. The route-flow
/// covariance level uses the conditioning trajectory, floored at 1.
inline double log_likelihood_given_theta(const AssignmentCache& cache,
                                         const Eigen::MatrixXd& theta,
                                         const Eigen::MatrixXd& z) {
  if (theta.rows() != z.rows()) {
    throw std::invalid_argument("log_likelihood: theta/z horizon mismatch");
  }
  double acc = 0.0;
  for (int t = 1; t <= static_cast<int>(z.rows()); ++t) {
    const Eigen::VectorXd theta_t = theta.row(t - 1);
    const Eigen::MatrixXd v =
        cache.observation_cov(t, covariance_levels(theta_t));
    const Eigen::VectorXd mean = cache.assignment(t) * theta_t;
    acc += mvn_logpdf(z.row(t - 1), mean, factor_psd(v));
  }
  return acc;
}

inline double log_likelihood_phi(const PhiVector& phi,
                                 const Eigen::MatrixXd& theta,
                                 const Eigen::MatrixXd& z,
                                 const CostHistory& history,
                                 const ModelParams& params,
                                 const RoutedNetwork& net) {
  AssignmentCache cache(phi, history, params, net,
                        static_cast<int>(z.rows()));
  return log_likelihood_given_theta(cache, theta, z);
}

struct MhOutcome {
  Eigen::VectorXd state;
  double log_target = 0.0;
  bool accepted = false;
};

/// One Metropolis-Hastings transition with a symmetric proposal (the
/// proposal density cancels in the ratio). A non-finite candidate target is
/// rejected outright; otherwise u ~ Uniform(0,1) is compared against
/// min(1, exp(difference)).
template <class LogTarget>
MhOutcome metropolis_step(const Eigen::VectorXd& current,
                          double log_target_current, LogTarget&& log_target,
                          const PsdFactor& proposal_factor, RngStream& rng) {
  Eigen::VectorXd candidate = mvn_sample(current, proposal_factor, rng);
  const double lt = log_target(candidate);
  if (std::isfinite(lt)) {
    const double ratio = std::exp(std::min(0.0, lt - log_target_current));
    if (rng.next_double() < ratio) {
      return {std::move(candidate), lt, true};
    }
  }
  return {current, log_target_current, false};
}

/// General-proposal variant: log_q(from, to) supplies the proposal log
/// density for asymmetric q.
template <class LogTarget, class ProposalDraw, class LogQ>
MhOutcome metropolis_hastings_step(const Eigen::VectorXd& current,
                                   double log_target_current,
                                   LogTarget&& log_target,
                                   ProposalDraw&& propose, LogQ&& log_q,
                                   RngStream& rng) {
  Eigen::VectorXd candidate = propose(current, rng);
  const double lt = log_target(candidate);
  if (std::isfinite(lt)) {
    const double log_ratio = lt - log_target_current +
                             log_q(candidate, current) -
                             log_q(current, candidate);
    const double ratio = std::exp(std::min(0.0, log_ratio));
    if (rng.next_double() < ratio) {
      return {std::move(candidate), lt, true};
    }
  }
  return {current, log_target_current, false};
}

/// Random-walk MH step on phi with the flat improper prior, so the target is
/// the likelihood alone.
struct PhiStep {
  PhiVector phi;
  bool accepted = false;
  double log_likelihood = 0.0;
};

inline PhiStep mh_step(const PhiVector& current, const Eigen::MatrixXd& theta,
                       const Eigen::MatrixXd& z, const CostHistory& history,
                       const ModelParams& params, const RoutedNetwork& net,
                       const PsdFactor& proposal_factor, RngStream& rng) {
  const double current_ll =
      log_likelihood_phi(current, theta, z, history, params, net);
  auto target = [&](const Eigen::VectorXd& phi) {
    return log_likelihood_phi(phi, theta, z, history, params, net);
  };
  MhOutcome out =
      metropolis_step(current, current_ll, target, proposal_factor, rng);
  return {std::move(out.state), out.accepted, out.log_target};
}

namespace detail {

inline PsdFactor proposal_factor_from(const McmcConfig& config, int dim) {
  if (config.proposal_cov.size() > 0) {
    if (config.proposal_cov.rows() != dim) {
      throw std::invalid_argument("gibbs_run: proposal covariance dimension");
    }
    return factor_psd(config.proposal_cov);
  }
  if (!(config.proposal_scale > 0.0)) {
    throw std::invalid_argument("gibbs_run: proposal scale must be positive");
  }
  return factor_psd(config.proposal_scale *
                    Eigen::MatrixXd::Identity(dim, dim));
}

}  // namespace detail

/// Gibbs alternation of FFBS draws for the mean OD flow trajectory and
/// random-walk MH updates for phi. Fully reproducible given (seed, stream).
inline Trace gibbs_run(const McmcConfig& config, const Eigen::MatrixXd& z,
                       const CostHistory& history, const ModelParams& params,
                       const RoutedNetwork& net) {
  if (config.iterations <= 0 || config.burn_in < 0 ||
      config.burn_in >= config.iterations) {
    throw std::invalid_argument(
        "gibbs_run: need 0 <= burn_in < iterations and iterations > 0");
  }
  if (config.thin < 1 || config.theta_thin < 1) {
    throw std::invalid_argument("gibbs_run: thinning factors must be >= 1");
  }
  const int horizon = static_cast<int>(z.rows());
  const int n = static_cast<int>(params.m0.size());

  RngStream rng(config.seed, config.stream);

  PhiVector phi = config.phi_init.size() > 0
                      ? config.phi_init
                      : PhiVector(Eigen::VectorXd::Ones(params.memory));
  const PsdFactor proposal =
      detail::proposal_factor_from(config, static_cast<int>(phi.size()));

  // theta^(0) is drawn from the configured initial distribution. The first
  // FFBS pass replaces it, but the draw keeps the documented initialization
  // sequence (and RNG stream layout) intact.
  const double init_sd = std::sqrt(config.theta_init_var);
  Eigen::MatrixXd theta(horizon, n);
  for (int t = 0; t < horizon; ++t) {
    for (int j = 0; j < n; ++j) {
      theta(t, j) = config.theta_init_mean + init_sd * rng.next_normal();
    }
  }

  AssignmentCache cache(phi, history, params, net, horizon);
  // The filter states depend on phi and the data only, so they are reused
  // until an accepted move changes phi.
  std::vector<FilterStep> steps = filter_pass(z, cache, params);

  Trace trace;
  const int stored =
      (config.iterations - config.burn_in + config.thin - 1) / config.thin;
  trace.phi.resize(stored, phi.size());
  trace.log_posterior.resize(stored);
  trace.iterations.reserve(stored);
  trace.accepted.reserve(stored);
  trace.theta_mean = Eigen::MatrixXd::Zero(horizon, n);

  long post_count = 0;
  for (int i = 0; i < config.iterations; ++i) {
    try {
      theta = ffbs(steps, params.evolution, rng);
      const double current_ll = log_likelihood_given_theta(cache, theta, z);

      Eigen::VectorXd candidate = mvn_sample(phi, proposal, rng);
      AssignmentCache candidate_cache(candidate, history, params, net,
                                      horizon);
      const double candidate_ll =
          log_likelihood_given_theta(candidate_cache, theta, z);

      bool accepted = false;
      double ll = current_ll;
      if (std::isfinite(candidate_ll)) {
        const double ratio =
            std::exp(std::min(0.0, candidate_ll - current_ll));
        if (rng.next_double() < ratio) {
          accepted = true;
          phi = std::move(candidate);
          cache = std::move(candidate_cache);
          steps = filter_pass(z, cache, params);
          ll = candidate_ll;
        }
      }
      ++trace.mh_steps;
      if (accepted) ++trace.accept_count;

      if (i >= config.burn_in) {
        const int offset = i - config.burn_in;
        trace.theta_mean += theta;
        ++post_count;
        if (offset % config.thin == 0) {
          const auto row = static_cast<Eigen::Index>(trace.iterations.size());
          trace.phi.row(row) = phi;
          trace.log_posterior(row) = ll;
          trace.iterations.push_back(i);
          trace.accepted.push_back(accepted ? 1 : 0);
        }
        if (config.store_theta_samples && offset % config.theta_thin == 0) {
          trace.theta_samples.push_back(theta);
          trace.theta_sample_iterations.push_back(i);
        }
      }
    } catch (const NotPsdError& err) {
      throw NotPsdError("gibbs_run: iteration " + std::to_string(i) + ": " +
                            err.what(),
                        err.min_eigenvalue());
    }
  }
  if (post_count > 0) {
    trace.theta_mean /= static_cast<double>(post_count);
  }
  return trace;
}

/// Shortest contiguous interval containing ceil(probability * N) of the
/// sorted samples.
inline std::pair<double, double> hpd_interval(std::vector<double> samples,
                                              double probability) {
  if (samples.empty()) {
    throw std::invalid_argument("hpd_interval: empty sample set");
  }
  if (!(probability > 0.0 && probability < 1.0)) {
    throw std::invalid_argument("hpd_interval: probability must be in (0,1)");
  }
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<long>(samples.size());
  long window = static_cast<long>(
      std::ceil(probability * static_cast<double>(n)));
  window = std::clamp(window, 1L, n);
  long best = 0;
  double best_width = samples[window - 1] - samples[0];
  for (long i = 1; i + window <= n; ++i) {
    const double width = samples[i + window - 1] - samples[i];
    if (width < best_width) {
      best_width = width;
      best = i;
    }
  }
  return {samples[best], samples[best + window - 1]};
}

struct PosteriorSummary {
  Eigen::VectorXd phi_mean;
  std::vector<std::pair<double, double>> phi_hpd;
  double hpd_probability = 0.95;
  double acceptance_rate = 0.0;
  Eigen::MatrixXd theta_hat;  // T x n posterior mean trajectory
  bool has_mse = false;
  double mse = 0.0;
};

/// Per-component phi means and HPD intervals, the posterior mean OD flow
/// trajectory, and (when the simulated truth is supplied) the mean squared
/// error between estimated and true mean OD flows.
inline PosteriorSummary posterior_summary(const Trace& trace,
                                          const Eigen::MatrixXd* truth = nullptr,
                                          double hpd_probability = 0.95) {
  if (trace.phi.rows() < 1) {
    throw std::invalid_argument("posterior_summary: empty trace");
  }
  PosteriorSummary out;
  out.hpd_probability = hpd_probability;
  out.phi_mean = trace.phi.colwise().mean();
  out.phi_hpd.reserve(trace.phi.cols());
  for (Eigen::Index c = 0; c < trace.phi.cols(); ++c) {
    std::vector<double> column(trace.phi.rows());
    for (Eigen::Index r = 0; r < trace.phi.rows(); ++r) {
      column[r] = trace.phi(r, c);
    }
    if (column.size() == 1) {
      out.phi_hpd.emplace_back(column[0], column[0]);
    } else {
      out.phi_hpd.push_back(hpd_interval(std::move(column), hpd_probability));
    }
  }
  out.acceptance_rate = trace.acceptance_rate();
  out.theta_hat = trace.theta_mean;
  if (truth != nullptr) {
    if (truth->rows() != out.theta_hat.rows() ||
        truth->cols() != out.theta_hat.cols()) {
      throw std::invalid_argument("posterior_summary: truth shape mismatch");
    }
    out.has_mse = true;
    out.mse = (out.theta_hat - *truth).squaredNorm() /
              static_cast<double>(truth->size());
  }
  return out;
}

}  // namespace odflow
