#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "odflow/network.hpp"

namespace odflow {

/// Sensitivities to past route costs, phi_1..phi_r (most recent day first).
using PhiVector = Eigen::VectorXd;

/// Route-cost vectors c_t for t = 1-r .. T, one row per day in global route
/// order. The r pre-sample rows let utilities be formed from day t = 1 on.
/// Rows are filled in increasing t; reading an unfilled or out-of-range day
/// names the offending index.
class CostHistory {
 public:
  CostHistory(int memory, int horizon, int num_routes)
      : memory_(memory), horizon_(horizon),
        costs_(Eigen::MatrixXd::Zero(memory + horizon, num_routes)),
        filled_through_(-memory) {
    if (memory < 1 || horizon < 1 || num_routes < 1) {
      throw std::invalid_argument("CostHistory: bad dimensions");
    }
  }

  /// Builds a fully populated history from a (T + r) x K matrix whose first
  /// row is day t = 1 - r.
  CostHistory(int memory, const Eigen::MatrixXd& rows)
      : memory_(memory), horizon_(static_cast<int>(rows.rows()) - memory),
        costs_(rows), filled_through_(static_cast<int>(rows.rows()) - memory) {
    if (memory < 1 || horizon_ < 1) {
      throw std::invalid_argument("CostHistory: bad dimensions");
    }
    if ((rows.array() <= 0.0).any()) {
      throw std::invalid_argument("CostHistory: costs must be positive");
    }
  }

  int memory() const { return memory_; }
  int horizon() const { return horizon_; }
  int num_routes() const { return static_cast<int>(costs_.cols()); }
  const Eigen::MatrixXd& rows() const { return costs_; }

  void set_cost(int t, const Eigen::VectorXd& c) {
    if (t != filled_through_ + 1) {
      throw std::invalid_argument("CostHistory: rows must be set in order");
    }
    if (c.size() != costs_.cols() || (c.array() <= 0.0).any()) {
      throw std::invalid_argument("CostHistory: invalid cost row");
    }
    costs_.row(row_of(t)) = c.transpose();
    filled_through_ = t;
  }

  Eigen::VectorXd cost_at(int t) const {
    if (t < 1 - memory_ || t > horizon_ || t > filled_through_) {
      throw std::out_of_range("CostHistory: no route costs for day t = " +
                              std::to_string(t));
    }
    return costs_.row(row_of(t)).transpose();
  }

 private:
  int row_of(int t) const { return t + memory_ - 1; }

  int memory_;
  int horizon_;
  Eigen::MatrixXd costs_;
  int filled_through_;
};

/// u_kt = -sum_{s=1..r} phi_s c_{k(t-s)} for every route k.
inline Eigen::VectorXd utilities(const PhiVector& phi,
                                 const CostHistory& history, int t) {
  if (phi.size() < 1) {
    throw std::invalid_argument("utilities: phi must have length >= 1");
  }
  Eigen::VectorXd u = Eigen::VectorXd::Zero(history.num_routes());
  for (int s = 1; s <= phi.size(); ++s) {
    u -= phi(s - 1) * history.cost_at(t - s);
  }
  return u;
}

/// Multinomial logit shares scaled by the choice probability mass 1 - pi,
/// computed with max-utility subtraction so large cost scales cannot
/// overflow the exponentials.
inline Eigen::VectorXd logit_probabilities(const Eigen::VectorXd& u,
                                           double pi) {
  if (!(pi > 0.0 && pi < 1.0)) {
    throw std::invalid_argument("logit_probabilities: pi must be in (0,1)");
  }
  if (u.size() < 1 || !u.allFinite()) {
    throw std::invalid_argument("logit_probabilities: utilities must be "
                                "finite and nonempty");
  }
  const double shift = u.maxCoeff();
  Eigen::VectorXd e = (u.array() - shift).exp();
  return (1.0 - pi) / e.sum() * e;
}

/// Per-pair choice probabilities and the block-diagonal route choice matrix
/// P_t (K x n, one probability block per OD-pair column).
struct ChoiceStructure {
  std::vector<Eigen::VectorXd> probabilities;  // one vector per OD pair
  Eigen::MatrixXd choice_matrix;               // K x n
  double pi = 0.0;
};

inline ChoiceStructure choice_structure(const PhiVector& phi,
                                        const CostHistory& history, double pi,
                                        const RouteSet& routes, int t) {
  const Eigen::VectorXd u = utilities(phi, history, t);
  ChoiceStructure out;
  out.pi = pi;
  out.probabilities.reserve(routes.num_pairs());
  out.choice_matrix =
      Eigen::MatrixXd::Zero(routes.total_routes(), routes.num_pairs());
  for (int j = 0; j < routes.num_pairs(); ++j) {
    const int offset = routes.pair_offset(j);
    const int nj = routes.num_routes(j);
    Eigen::VectorXd pj = logit_probabilities(u.segment(offset, nj), pi);
    out.choice_matrix.block(offset, j, nj, 1) = pj;
    out.probabilities.push_back(std::move(pj));
  }
  return out;
}

/// Multinomial-like route-flow covariance for one OD pair at a given flow
/// level: level * (diag(p) - p p^T). Singular when the probabilities sum to
/// one; the non-choice mass pi keeps it strictly positive definite.
inline Eigen::MatrixXd route_flow_covariance(double level,
                                             const Eigen::VectorXd& p) {
  if (level < 0.0) {
    throw std::invalid_argument("route_flow_covariance: negative flow level");
  }
  Eigen::MatrixXd cov = p.asDiagonal();
  cov.noalias() -= p * p.transpose();
  return level * cov;
}

/// Block-diagonal route-flow covariance over all OD pairs (K x K), with one
/// flow level per pair.
inline Eigen::MatrixXd route_flow_covariance_blockdiag(
    const Eigen::VectorXd& levels, const ChoiceStructure& choice,
    const RouteSet& routes) {
  if (levels.size() != routes.num_pairs()) {
    throw std::invalid_argument(
        "route_flow_covariance_blockdiag: level count mismatch");
  }
  Eigen::MatrixXd cov =
      Eigen::MatrixXd::Zero(routes.total_routes(), routes.total_routes());
  for (int j = 0; j < routes.num_pairs(); ++j) {
    const int offset = routes.pair_offset(j);
    const int nj = routes.num_routes(j);
    cov.block(offset, offset, nj, nj) =
        route_flow_covariance(levels(j), choice.probabilities[j]);
  }
  return cov;
}

}  // namespace odflow
