// Test-only oracles, kept independent of the library code paths they check:
// exhaustive path search by node recursion, exact joint-Gaussian
// conditioning for the linear state chain, and small statistics helpers.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "odflow/network.hpp"

namespace oracles {

/// All simple paths origin -> destination as link-id sequences, enumerated
/// by node recursion over an adjacency map and sorted lexicographically
/// afterwards (the library sorts during the search instead).
inline std::vector<std::vector<int>> simple_paths(const odflow::Network& net,
                                                  int origin,
                                                  int destination) {
  std::map<int, std::vector<std::pair<int, int>>> adj;  // node -> (to, link id)
  for (const odflow::Link& link : net.links()) {
    adj[link.from].emplace_back(link.to, link.id);
  }
  std::vector<std::vector<int>> found;
  std::vector<int> links;
  std::set<int> on_path{origin};
  auto walk = [&](auto&& self, int node) -> void {
    if (node == destination) {
      found.push_back(links);
      return;
    }
    auto it = adj.find(node);
    if (it == adj.end()) return;
    for (const auto& [to, link_id] : it->second) {
      if (on_path.count(to)) continue;
      on_path.insert(to);
      links.push_back(link_id);
      self(self, to);
      links.pop_back();
      on_path.erase(to);
    }
  };
  walk(walk, origin);
  std::sort(found.begin(), found.end());
  return found;
}

struct JointGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Exact joint law of (theta_1..theta_T, z_1..z_T) for
///   theta_t = theta_{t-1} + w_t,   w_t ~ N(0, Ws[t-1])
///   z_t     = F theta_t + v_t,     v_t ~ N(0, Vs[t-1])
/// with theta_0 ~ N(m0, C0). State blocks come first.
inline JointGaussian dlm_joint(const Eigen::VectorXd& m0,
                               const Eigen::MatrixXd& c0,
                               const std::vector<Eigen::MatrixXd>& ws,
                               const Eigen::MatrixXd& f,
                               const std::vector<Eigen::MatrixXd>& vs) {
  const int horizon = static_cast<int>(ws.size());
  const auto n = m0.size();
  const auto m = f.rows();
  const auto dim = horizon * (n + m);
  JointGaussian joint;
  joint.mean.resize(dim);
  joint.cov.resize(dim, dim);

  // Cov(theta_t, theta_s) = C0 + sum_{u <= min(t,s)} W_u
  std::vector<Eigen::MatrixXd> s_accum(horizon + 1);
  s_accum[0] = c0;
  for (int t = 1; t <= horizon; ++t) {
    s_accum[t] = s_accum[t - 1] + ws[t - 1];
  }

  auto theta_block = [&](int t) { return (t - 1) * n; };
  auto z_block = [&](int t) { return horizon * n + (t - 1) * m; };

  for (int t = 1; t <= horizon; ++t) {
    joint.mean.segment(theta_block(t), n) = m0;
    joint.mean.segment(z_block(t), m) = f * m0;
  }
  for (int t = 1; t <= horizon; ++t) {
    for (int s = 1; s <= horizon; ++s) {
      const Eigen::MatrixXd& cov_ts = s_accum[std::min(t, s)];
      joint.cov.block(theta_block(t), theta_block(s), n, n) = cov_ts;
      joint.cov.block(theta_block(t), z_block(s), n, m) =
          cov_ts * f.transpose();
      joint.cov.block(z_block(t), theta_block(s), m, n) = f * cov_ts;
      Eigen::MatrixXd zz = f * cov_ts * f.transpose();
      if (t == s) zz += vs[t - 1];
      joint.cov.block(z_block(t), z_block(s), m, m) = zz;
    }
  }
  return joint;
}

/// p(x_A | x_B = b) by plain Gaussian conditioning with an explicit inverse.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> condition(
    const JointGaussian& joint, const std::vector<int>& a_idx,
    const std::vector<int>& b_idx, const Eigen::VectorXd& b_values) {
  const auto na = static_cast<Eigen::Index>(a_idx.size());
  const auto nb = static_cast<Eigen::Index>(b_idx.size());
  Eigen::VectorXd mu_a(na), mu_b(nb);
  Eigen::MatrixXd c_aa(na, na), c_ab(na, nb), c_bb(nb, nb);
  for (Eigen::Index i = 0; i < na; ++i) {
    mu_a(i) = joint.mean(a_idx[i]);
    for (Eigen::Index j = 0; j < na; ++j) {
      c_aa(i, j) = joint.cov(a_idx[i], a_idx[j]);
    }
    for (Eigen::Index j = 0; j < nb; ++j) {
      c_ab(i, j) = joint.cov(a_idx[i], b_idx[j]);
    }
  }
  for (Eigen::Index i = 0; i < nb; ++i) {
    mu_b(i) = joint.mean(b_idx[i]);
    for (Eigen::Index j = 0; j < nb; ++j) {
      c_bb(i, j) = joint.cov(b_idx[i], b_idx[j]);
    }
  }
  const Eigen::MatrixXd c_bb_inv = c_bb.inverse();
  Eigen::VectorXd mean = mu_a + c_ab * c_bb_inv * (b_values - mu_b);
  Eigen::MatrixXd cov = c_aa - c_ab * c_bb_inv * c_ab.transpose();
  return {std::move(mean), std::move(cov)};
}

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

/// Kolmogorov-Smirnov distance between a sample and the standard normal.
inline double ks_distance_normal(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double cdf = normal_cdf(samples[i]);
    d = std::max(d, std::abs((static_cast<double>(i) + 1.0) / n - cdf));
    d = std::max(d, std::abs(static_cast<double>(i) / n - cdf));
  }
  return d;
}

inline double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

/// Batch-means standard error of the mean, robust to autocorrelation.
inline double batch_means_se(const std::vector<double>& chain) {
  const std::size_t n = chain.size();
  const std::size_t batches =
      std::max<std::size_t>(2, static_cast<std::size_t>(std::sqrt(n)));
  const std::size_t len = n / batches;
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) {
    double acc = 0.0;
    for (std::size_t i = b * len; i < (b + 1) * len; ++i) acc += chain[i];
    means.push_back(acc / static_cast<double>(len));
  }
  double grand = 0.0;
  for (double m : means) grand += m;
  grand /= static_cast<double>(means.size());
  double var = 0.0;
  for (double m : means) var += (m - grand) * (m - grand);
  var /= static_cast<double>(means.size() - 1);
  return std::sqrt(var / static_cast<double>(means.size()));
}

}  // namespace oracles
