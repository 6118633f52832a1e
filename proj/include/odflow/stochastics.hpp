#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace odflow {

/// Seeded random stream built on PCG32 (64-bit LCG state, XSH-RR output,
/// stream-selectable increment). The generator is fully specified, so a
/// given (seed, stream) pair reproduces the same draw sequence on every
/// platform. Normal variates use Box-Muller on top of 53-bit uniforms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), state_(0), inc_((stream << 1u) | 1u) {
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint32_t next_u32() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted =
        static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  /// Uniform on [0,1) with 53 random bits.
  double next_double() {
    const std::uint64_t hi = next_u32();
    const std::uint64_t lo = next_u32();
    return static_cast<double>(((hi << 32) | lo) >> 11) * 0x1.0p-53;
  }

  /// Standard normal draw. Pairs are generated by Box-Muller; the second
  /// member of each pair is cached for the next call.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_double();  // (0,1], keeps log() finite
    const double u2 = next_double();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_;
  std::uint64_t inc_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Thrown when a matrix cannot be factored as PSD even at maximum jitter.
class NotPsdError : public std::runtime_error {
 public:
  NotPsdError(const std::string& message, double min_eigenvalue)
      : std::runtime_error(message), min_eigenvalue_(min_eigenvalue) {}

  double min_eigenvalue() const { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

/// Lower-triangular factor L with L*L^T = M + jitter*I. `jitter` records the
/// diagonal shift that was required; it is 0 whenever plain Cholesky worked.
class PsdFactor {
 public:
  PsdFactor(Eigen::MatrixXd lower, double jitter, bool degenerate)
      : lower_(std::move(lower)), jitter_(jitter), degenerate_(degenerate) {}

  const Eigen::MatrixXd& lower() const { return lower_; }
  double jitter() const { return jitter_; }
  Eigen::Index dim() const { return lower_.rows(); }

  /// log det(M + jitter*I)
  double log_det() const {
    require_invertible();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < lower_.rows(); ++i) {
      acc += std::log(lower_(i, i));
    }
    return 2.0 * acc;
  }

  /// x with (M + jitter*I) x = b
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    require_invertible();
    Eigen::VectorXd y = lower_.triangularView<Eigen::Lower>().solve(b);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const {
    require_invertible();
    Eigen::MatrixXd y = lower_.triangularView<Eigen::Lower>().solve(b);
    return lower_.transpose().triangularView<Eigen::Upper>().solve(y);
  }

  /// y = L^{-1} b, so that |y|^2 is the quadratic form b^T (M+eps I)^{-1} b.
  Eigen::VectorXd half_solve(const Eigen::VectorXd& b) const {
    require_invertible();
    return lower_.triangularView<Eigen::Lower>().solve(b);
  }

 private:
  void require_invertible() const {
    if (degenerate_) {
      throw NotPsdError("PsdFactor: factor of an exactly singular matrix "
                        "supports sampling only",
                        0.0);
    }
  }

  Eigen::MatrixXd lower_;
  double jitter_;
  bool degenerate_;
};

namespace detail {

// Pivots must clear a small relative floor; borderline semidefinite inputs
// are pushed onto the jitter ladder instead of silently producing garbage
// columns.
inline bool cholesky_attempt(const Eigen::MatrixXd& m, double eps,
                             Eigen::MatrixXd& lower) {
  const Eigen::Index n = m.rows();
  lower.setZero(n, n);
  double max_diag = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    max_diag = std::max(max_diag, m(i, i) + eps);
  }
  const double pivot_floor = 1e-14 * max_diag;
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = m(j, j) + eps;
    for (Eigen::Index k = 0; k < j; ++k) {
      d -= lower(j, k) * lower(j, k);
    }
    if (!(d > pivot_floor)) {
      return false;
    }
    lower(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (Eigen::Index k = 0; k < j; ++k) {
        s -= lower(i, k) * lower(j, k);
      }
      lower(i, j) = s / lower(j, j);
    }
  }
  return true;
}

}  // namespace detail

/// Factor a symmetric PSD matrix, escalating through a small jitter ladder
/// (0, 1e-12, 1e-10, 1e-8 times the trace) for inputs that are singular or
/// indefinite at roundoff level. Throws NotPsdError, carrying a minimum
/// eigenvalue estimate, when even the largest jitter fails.
inline PsdFactor factor_psd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("factor_psd: matrix must be square");
  }
  const Eigen::Index n = m.rows();
  if (n == 0) {
    return PsdFactor(Eigen::MatrixXd(0, 0), 0.0, false);
  }
  const double scale = m.cwiseAbs().maxCoeff();
  if (scale == 0.0) {
    // Exactly zero covariance: L = 0 supports sampling (degenerate draw).
    return PsdFactor(Eigen::MatrixXd::Zero(n, n), 0.0, true);
  }
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9 * (1.0 + scale)) {
    throw std::invalid_argument("factor_psd: matrix is not symmetric");
  }
  const double trace = m.trace();
  const double ladder[] = {0.0, 1e-12, 1e-10, 1e-8};
  Eigen::MatrixXd lower;
  for (double rel : ladder) {
    const double eps = rel * trace;
    if (detail::cholesky_attempt(m, eps, lower)) {
      return PsdFactor(std::move(lower), eps, false);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m,
                                                    Eigen::EigenvaluesOnly);
  const double min_eig = es.eigenvalues().minCoeff();
  throw NotPsdError("factor_psd: not PSD at maximum jitter (min eigenvalue "
                    "approx " + std::to_string(min_eig) + ")",
                    min_eig);
}

/// mean + L xi with xi iid standard normal.
inline Eigen::VectorXd mvn_sample(const Eigen::VectorXd& mean,
                                  const PsdFactor& factor, RngStream& rng) {
  if (mean.size() != factor.dim()) {
    throw std::invalid_argument("mvn_sample: mean/cov dimension mismatch");
  }
  Eigen::VectorXd xi(mean.size());
  for (Eigen::Index i = 0; i < xi.size(); ++i) {
    xi(i) = rng.next_normal();
  }
  return mean + factor.lower() * xi;
}

inline Eigen::VectorXd mvn_sample(const Eigen::VectorXd& mean,
                                  const Eigen::MatrixXd& cov, RngStream& rng) {
  if (mean.size() != cov.rows()) {
    throw std::invalid_argument("mvn_sample: mean/cov dimension mismatch");
  }
  return mvn_sample(mean, factor_psd(cov), rng);
}

/// Log density of N(mean, cov) at x, evaluated through the factor; the
/// covariance inverse is never formed.
inline double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                         const PsdFactor& factor) {
  if (x.size() != mean.size() || x.size() != factor.dim()) {
    throw std::invalid_argument("mvn_logpdf: dimension mismatch");
  }
  static const double kLog2Pi = std::log(2.0 * 3.14159265358979323846);
  const Eigen::VectorXd w = factor.half_solve(x - mean);
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + factor.log_det() +
                 w.squaredNorm());
}

inline double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                         const Eigen::MatrixXd& cov) {
  return mvn_logpdf(x, mean, factor_psd(cov));
}

}  // namespace odflow
