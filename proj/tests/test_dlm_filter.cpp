#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "odflow/dlm_filter.hpp"
#include "odflow/network.hpp"
#include "odflow/simulator.hpp"
#include "support/oracles.hpp"
#include "support/toy_dlm.hpp"

using namespace odflow;

TEST_CASE("predict: explicit W and discount forms") {
  Eigen::VectorXd m(2);
  m << 1.0, 2.0;
  Eigen::MatrixXd c(2, 2);
  c << 3.0, 0.5, 0.5, 2.0;

  {
    auto [mp, cp] = predict(m, c, Evolution::known_w(Eigen::MatrixXd::Zero(2, 2)));
    REQUIRE((mp - m).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((cp - c).cwiseAbs().maxCoeff() == 0.0);
  }
  {
    auto [mp, cp] = predict(m, c, Evolution::discounted(1.0));
    REQUIRE((cp - c).cwiseAbs().maxCoeff() == 0.0);
  }
  {
    auto [mp, cp] = predict(m, c, Evolution::discounted(0.5));
    REQUIRE((cp - 2.0 * c).cwiseAbs().maxCoeff() < 1e-15);
  }
  REQUIRE_THROWS_AS(Evolution::discounted(0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(Evolution::discounted(1.5), std::invalid_argument);
}

TEST_CASE("assemble_observation: scalar composition") {
  const double pi = 0.2;
  Eigen::MatrixXd p(1, 1), delta(1, 1), sx(1, 1), sy(1, 1), sz(1, 1);
  p << 1.0 - pi;
  delta << 1.0;
  sx << 0.7;
  sy << 0.3;
  sz << 0.1;
  const ObservationModel obs = assemble_observation(p, delta, sx, sy, sz);
  REQUIRE(obs.f(0, 0) == Catch::Approx(1.0 - pi).margin(1e-15));
  REQUIRE(obs.v(0, 0) ==
          Catch::Approx((1.0 - pi) * (1.0 - pi) * 0.7 + 0.3 + 0.1)
              .margin(1e-15));

  const ObservationModel zero = assemble_observation(
      p, delta, Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1),
      Eigen::MatrixXd::Zero(1, 1));
  REQUIRE(zero.v(0, 0) == 0.0);

  REQUIRE_THROWS_AS(
      assemble_observation(p, Eigen::MatrixXd::Ones(1, 2), sx, sy, sz),
      std::invalid_argument);
}

TEST_CASE("forecast: frozen scalar values and linearity") {
  Eigen::VectorXd m(1);
  m << 50.0;
  Eigen::MatrixXd c(1, 1), f(1, 1), v(1, 1);
  c << 10.0;
  f << 0.99;
  v << 2.0;
  auto [mean, q] = forecast(m, c, f, v);
  REQUIRE(mean(0) == Catch::Approx(49.5).margin(1e-12));
  REQUIRE(q(0, 0) == Catch::Approx(11.801).margin(1e-12));

  {
    auto [z1, q1] = forecast(Eigen::VectorXd::Zero(1),
                             Eigen::MatrixXd::Zero(1, 1), f,
                             Eigen::MatrixXd::Zero(1, 1));
    REQUIRE(z1(0) == 0.0);
    REQUIRE(q1(0, 0) == 0.0);
  }

  Eigen::VectorXd m2(1);
  m2 << -13.0;
  auto [fa, qa] = forecast(m, c, f, v);
  auto [fb, qb] = forecast(m2, c, f, v);
  auto [fab, qab] = forecast((m + m2).eval(), c, f, v);
  REQUIRE(std::abs(fab(0) - fa(0) - fb(0)) < 1e-12);
}

TEST_CASE("update: frozen scalar Kalman step") {
  Eigen::VectorXd m(1), z(1);
  m << 50.0;
  z << 56.0;
  Eigen::MatrixXd c(1, 1), f(1, 1), v(1, 1);
  c << 10.0;
  f << 1.0;
  v << 2.0;
  auto [mean, cov] = update(m, c, f, v, z);
  REQUIRE(mean(0) == Catch::Approx(55.0).margin(1e-12));
  REQUIRE(cov(0, 0) == Catch::Approx(5.0 / 3.0).margin(1e-12));
}

TEST_CASE("update: exact-observation and no-information limits") {
  Eigen::VectorXd m(3), z(3);
  m << 10.0, 20.0, 30.0;
  z << 11.5, 19.0, 31.0;
  const Eigen::MatrixXd c = 4.0 * Eigen::MatrixXd::Identity(3, 3);
  const Eigen::MatrixXd f = Eigen::MatrixXd::Identity(3, 3);
  {
    auto [mean, cov] =
        update(m, c, f, 1e-12 * Eigen::MatrixXd::Identity(3, 3), z);
    REQUIRE((mean - z).cwiseAbs().maxCoeff() < 1e-6);
  }
  {
    auto [mean, cov] =
        update(m, c, f, 1e12 * Eigen::MatrixXd::Identity(3, 3), z);
    REQUIRE((mean - m).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("cached observation assembly matches the reference operation") {
  const toy::ToyDlm toy = toy::make_toy_dlm(4);
  AssignmentCache cache(toy.phi, toy.history, toy.params, toy.routed, 4);
  for (int t = 1; t <= 4; ++t) {
    const ChoiceStructure cs = choice_structure(
        toy.phi, toy.history, toy.params.pi, toy.routed.routes, t);
    Eigen::VectorXd levels(2);
    levels << 1.7, 3.2;
    const Eigen::MatrixXd sigma_y =
        route_flow_covariance_blockdiag(levels, cs, toy.routed.routes);
    const ObservationModel obs = assemble_observation(
        cs.choice_matrix, toy.routed.incidence.selected(), toy.params.sigma_x,
        sigma_y, toy.params.sigma_z);
    REQUIRE((cache.assignment(t) - obs.f).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((cache.observation_cov(t, levels) - obs.v).cwiseAbs().maxCoeff() <
            1e-12);
  }
}

TEST_CASE("filter_pass: T=3 toy matches exact joint-Gaussian conditioning") {
  const toy::ToyDlm toy = toy::make_toy_dlm(3);
  const std::vector<FilterStep> steps =
      filter_pass(toy.z, toy.history, toy.phi, toy.params, toy.routed);

  // The oracle needs the constant-V regime: every predicted mean must sit
  // below the level floor of 1.
  for (const FilterStep& s : steps) {
    REQUIRE(s.m_prior.maxCoeff() <= 1.0);
  }

  const std::vector<Eigen::MatrixXd> ws(3, toy.params.evolution.w);
  const std::vector<Eigen::MatrixXd> vs(3, toy.v);
  const oracles::JointGaussian joint =
      oracles::dlm_joint(toy.params.m0, toy.params.c0, ws, toy.f, vs);

  const int n = 2, m = 4, horizon = 3;
  for (int t = 1; t <= horizon; ++t) {
    std::vector<int> a_idx, b_idx;
    for (int i = 0; i < n; ++i) a_idx.push_back((t - 1) * n + i);
    Eigen::VectorXd observed(t * m);
    for (int s = 1; s <= t; ++s) {
      for (int i = 0; i < m; ++i) {
        b_idx.push_back(horizon * n + (s - 1) * m + i);
        observed((s - 1) * m + i) = toy.z(s - 1, i);
      }
    }
    const auto [mean, cov] = oracles::condition(joint, a_idx, b_idx, observed);
    REQUIRE((steps[t - 1].m - mean).cwiseAbs().maxCoeff() < 1e-8);
    REQUIRE((steps[t - 1].c - cov).cwiseAbs().maxCoeff() < 1e-8);
  }
}

namespace {

struct OneDayGls {
  Eigen::VectorXd filter_mean;
  Eigen::MatrixXd f;
  Eigen::MatrixXd v;
  Eigen::VectorXd z;
};

// One filter step under a near-flat prior (C0 = 1e6 I), plus the
// independently assembled observation model for the GLS comparison.
OneDayGls run_one_day_gls(const NetworkBundle& bundle,
                          const Eigen::VectorXd& theta_true) {
  const RoutedNetwork routed =
      build_routed_network(bundle, all_link_ids(bundle.network));
  const int n = bundle.network.num_od_pairs();
  const int m = bundle.network.num_links();
  const int memory = 2;
  CostHistory history(memory, 1, bundle.routes.total_routes());
  const Eigen::VectorXd free_flow = route_costs(
      bundle.network, bundle.routes, Eigen::VectorXd::Zero(m));
  for (int t = 1 - memory; t <= 1; ++t) history.set_cost(t, free_flow);

  PhiVector phi(2);
  phi << 0.5, 0.3;
  ModelParams params;
  params.sigma_x = Eigen::MatrixXd::Identity(n, n);
  params.sigma_z = Eigen::MatrixXd::Identity(m, m);
  params.evolution = Evolution::known_w(10.0 * Eigen::MatrixXd::Identity(n, n));
  params.pi = 0.01;
  params.memory = memory;
  params.observed_links = all_link_ids(bundle.network);
  params.m0 = Eigen::VectorXd::Constant(n, 100.0);
  params.c0 = 1e6 * Eigen::MatrixXd::Identity(n, n);

  const ChoiceStructure cs =
      choice_structure(phi, history, params.pi, bundle.routes, 1);
  OneDayGls out;
  out.f = routed.incidence.selected() * cs.choice_matrix;
  const Eigen::VectorXd levels = Eigen::VectorXd::Constant(n, 100.0);
  const Eigen::MatrixXd sigma_y =
      route_flow_covariance_blockdiag(levels, cs, bundle.routes);
  out.v = out.f * params.sigma_x * out.f.transpose() +
          routed.incidence.selected() * sigma_y *
              routed.incidence.selected().transpose() +
          params.sigma_z;
  out.z = out.f * theta_true;

  Eigen::MatrixXd z_row(1, m);
  z_row.row(0) = out.z.transpose();
  out.filter_mean = filter_pass(z_row, history, phi, params, routed)[0].m;
  return out;
}

}  // namespace

TEST_CASE("filter_pass: uninformative prior reproduces the GLS solution on "
          "a full-rank instance") {
  // Three OD pairs keep the assignment matrix at full column rank; the
  // canonical four-pair layout has the structural null direction
  // (1,-1,-1,1) because origin-1 and origin-2 pairs share their route
  // structure beyond the entry link.
  Network network = canonical_network().network;
  std::vector<OdPair> three_pairs{{1, 7}, {1, 8}, {2, 7}};
  Network reduced(network.nodes(), network.links(), three_pairs);
  NetworkBundle bundle{reduced, enumerate_routes(reduced)};

  Eigen::VectorXd theta_true(3);
  theta_true << 50.0, 60.0, 70.0;
  const OneDayGls day = run_one_day_gls(bundle, theta_true);

  const Eigen::MatrixXd v_inv = day.v.inverse();
  REQUIRE(Eigen::FullPivLU<Eigen::MatrixXd>(day.f).rank() == 3);
  const Eigen::VectorXd gls =
      (day.f.transpose() * v_inv * day.f).inverse() * day.f.transpose() *
      v_inv * day.z;
  REQUIRE(((day.filter_mean - gls).cwiseAbs().array() /
           gls.cwiseAbs().array())
              .maxCoeff() < 1e-3);
}

TEST_CASE("filter_pass: on the rank-deficient canonical network the fitted "
          "volumes match GLS and the null direction stays at the prior") {
  const NetworkBundle bundle = canonical_network();
  Eigen::VectorXd theta_true(4);
  theta_true << 50.0, 60.0, 70.0, 80.0;
  const OneDayGls day = run_one_day_gls(bundle, theta_true);

  Eigen::VectorXd null_dir(4);
  null_dir << 0.5, -0.5, -0.5, 0.5;
  REQUIRE((day.f * null_dir).cwiseAbs().maxCoeff() < 1e-12);

  // Fitted observations are identifiable even though theta is not: the
  // least-squares fit is exact because z lies in the range of F.
  REQUIRE(((day.f * day.filter_mean - day.z).cwiseAbs().array() /
           day.z.cwiseAbs().array())
              .maxCoeff() < 1e-3);
  // The unobservable combination keeps its prior value (m0 component = 0).
  REQUIRE(std::abs(day.filter_mean.dot(null_dir)) < 1e-6);
}

TEST_CASE("filter_pass: noise-free repeated observations converge to truth") {
  const NetworkBundle bundle = canonical_network();
  const RoutedNetwork routed =
      build_routed_network(bundle, all_link_ids(bundle.network));

  const int horizon = 60;
  const int memory = 2;
  CostHistory history(memory, horizon, 12);
  const Eigen::VectorXd free_flow =
      route_costs(bundle.network, bundle.routes, Eigen::VectorXd::Zero(10));
  for (int t = 1 - memory; t <= horizon; ++t) history.set_cost(t, free_flow);

  PhiVector phi(2);
  phi << 0.5, 0.3;

  ModelParams params;
  params.sigma_x = 1e-12 * Eigen::MatrixXd::Identity(4, 4);
  params.sigma_z = 1e-12 * Eigen::MatrixXd::Identity(10, 10);
  params.evolution =
      Evolution::known_w(1e-12 * Eigen::MatrixXd::Identity(4, 4));
  params.pi = 0.01;
  params.memory = memory;
  params.observed_links = all_link_ids(bundle.network);
  params.m0 = Eigen::VectorXd::Constant(4, 100.0);
  params.c0 = 1000.0 * Eigen::MatrixXd::Identity(4, 4);

  Eigen::VectorXd theta_true(4);
  theta_true << 40.0, 55.0, 62.0, 75.0;
  const ChoiceStructure cs =
      choice_structure(phi, history, params.pi, bundle.routes, 1);
  const Eigen::MatrixXd f = routed.incidence.selected() * cs.choice_matrix;

  Eigen::MatrixXd z(horizon, 10);
  for (int t = 0; t < horizon; ++t) {
    z.row(t) = (f * theta_true).transpose();
  }

  const std::vector<FilterStep> steps =
      filter_pass(z, history, phi, params, routed);
  double prev = std::numeric_limits<double>::infinity();
  for (const FilterStep& s : steps) {
    const double err = (s.m - theta_true).cwiseAbs().maxCoeff();
    REQUIRE(err <= prev + 1e-9);
    prev = err;
  }
  REQUIRE(prev < 1.0);
}

TEST_CASE("filter_pass: posterior variance never exceeds the prior") {
  const toy::ToyDlm toy = toy::make_toy_dlm(6);
  const std::vector<FilterStep> steps =
      filter_pass(toy.z, toy.history, toy.phi, toy.params, toy.routed);
  for (const FilterStep& s : steps) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.c_prior - s.c);
    REQUIRE(es.eigenvalues().minCoeff() >= -1e-8 * s.c_prior.trace());
    REQUIRE((s.c - s.c.transpose()).cwiseAbs().maxCoeff() <=
            1e-12 * (1.0 + s.c.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("filter_pass: discount and extracted explicit W coincide") {
  const toy::ToyDlm base = toy::make_toy_dlm(5);

  ModelParams discount_params = base.params;
  discount_params.evolution = Evolution::discounted(0.8);
  const std::vector<FilterStep> discounted =
      filter_pass(base.z, base.history, base.phi, discount_params, base.routed);

  // Re-run with the W_t sequence the discount path implies.
  Eigen::VectorXd m = base.params.m0;
  Eigen::MatrixXd c = base.params.c0;
  std::vector<FilterStep> replayed;
  AssignmentCache cache(base.phi, base.history, base.params, base.routed, 5);
  for (int t = 1; t <= 5; ++t) {
    const Eigen::MatrixXd w_t = (1.0 - 0.8) / 0.8 * c;
    ModelParams step_params = base.params;
    step_params.evolution = Evolution::known_w(w_t);
    auto [m_prior, c_prior] = predict(m, c, step_params.evolution);
    const Eigen::MatrixXd v =
        cache.observation_cov(t, covariance_levels(m_prior));
    auto [mean, cov] = update(m_prior, c_prior, cache.assignment(t), v,
                              base.z.row(t - 1));
    FilterStep step;
    step.m_prior = m_prior;
    step.c_prior = c_prior;
    step.m = mean;
    step.c = cov;
    replayed.push_back(step);
    m = mean;
    c = cov;
  }
  for (int t = 0; t < 5; ++t) {
    REQUIRE((discounted[t].m - replayed[t].m).cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE((discounted[t].c - replayed[t].c).cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE((discounted[t].c_prior - replayed[t].c_prior)
                .cwiseAbs()
                .maxCoeff() < 1e-10);
  }
}

TEST_CASE("filter_pass: reports the failing day") {
  toy::ToyDlm toy = toy::make_toy_dlm(2);
  toy.params.sigma_x = -5.0 * Eigen::MatrixXd::Identity(2, 2);
  toy.params.sigma_z = Eigen::MatrixXd::Zero(4, 4);
  REQUIRE_THROWS_WITH(
      filter_pass(toy.z, toy.history, toy.phi, toy.params, toy.routed),
      Catch::Matchers::ContainsSubstring("t = 1"));
}
