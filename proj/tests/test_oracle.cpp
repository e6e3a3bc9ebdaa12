#include <doctest.h>

#include <cmath>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/oracle.hpp"
#include "fedunlearn/sensitivity.hpp"
#include "helpers.hpp"

using namespace fedunlearn;
using namespace testutil;

TEST_CASE("a weightless client leaves no trace") {
  auto clients = synthetic(ModelKind::Ridge, 3, 3, 2);
  FederationConfig cfg = federation(clients, 0.2, 2, 10);
  cfg.weights = Eigen::Vector3d(0.6, 0.4, 0.0);
  const ModelSpec spec = ridge_spec(3, 0.1);
  const double b = contraction_factor(regime_constants(spec, clients), 0.2);
  const SensitivityTrace t = empirical_sensitivity(cfg, spec, ModelParams::Zero(3), 2, b);
  for (std::size_t n = 0; n < t.alpha.size(); ++n) {
    CHECK(t.alpha[n] == 0.0);
    CHECK(t.psi[n] == 0.0);
  }
}

TEST_CASE("identical clients have zero sensitivity") {
  const auto one = synthetic(ModelKind::Ridge, 1, 3, 8);
  FederationConfig cfg = federation({one[0], one[0], one[0]}, 0.2, 3, 12);
  cfg.weights = uniform_weights(3);
  const ModelSpec spec = ridge_spec(3, 0.1);
  const double b = contraction_factor(regime_constants(spec, cfg.clients), 0.2);
  const SensitivityTrace t = empirical_sensitivity(cfg, spec, Eigen::Vector3d(0.2, -0.1, 0.5), 1, b);
  REQUIRE(t.alpha.size() == 13);
  for (std::size_t n = 0; n < t.alpha.size(); ++n) {
    CHECK(t.alpha[n] == 0.0);
    CHECK(t.psi[n] == 0.0);
  }
}

TEST_CASE("bound check reports the first violation") {
  SensitivityTrace t;
  t.alpha = {0.0, 0.5, 1.2, 0.9};
  t.psi = {0.0, 1.0, 1.0, 1.0};
  const BoundReport r = check_bound(t, 1e-8);
  CHECK_FALSE(r.pass);
  REQUIRE(r.first_violation.has_value());
  CHECK(*r.first_violation == 2);
  CHECK(r.worst_slack == doctest::Approx(0.2));
  CHECK(r.tightness == doctest::Approx(1.2));
  t.alpha[2] = 1.0;
  CHECK(check_bound(t, 1e-8).pass);
  t.psi.pop_back();
  CHECK_THROWS_AS(check_bound(t, 1e-8), ContractError);
}

TEST_CASE("the sensitivity bound holds across convex and strongly convex sweeps") {
  for (std::size_t m : {3u, 5u, 10u}) {
    for (std::size_t k : {1u, 3u, 5u}) {
      for (bool strongly : {false, true}) {
        const ModelKind kind = strongly ? ModelKind::Ridge : ModelKind::Logistic;
        const auto clients = synthetic(kind, m, 3, 100 + m + k, 15, 1.0);
        const ModelSpec spec = strongly ? ridge_spec(3, 0.1) : logistic_spec(3, 0.0, true);
        const RegimeConstants rc = regime_constants(spec, clients);
        CHECK(rc.regime == (strongly ? Regime::StronglyConvex : Regime::Convex));
        const double eta = max_step_size(rc);
        FederationConfig cfg = federation(clients, eta, k, 20, m);
        const double b = contraction_factor(rc, eta);
        const ModelParams theta0 = initial_model(spec, InitKind::Normal, m);
        for (ClientId c = 0; c < m; ++c) {
          const BoundReport r = check_bound(empirical_sensitivity(cfg, spec, theta0, c, b), 1e-8);
          CHECK(r.pass);
          CHECK(r.tightness <= 1.0 + 1e-8);
        }
      }
    }
  }
}

TEST_CASE("an absent client's sensitivity decays by B^K per round") {
  const auto clients = synthetic(ModelKind::Ridge, 4, 3, 31);
  const ModelSpec spec = ridge_spec(3, 0.1);
  const RegimeConstants rc = regime_constants(spec, clients);
  const double eta = max_step_size(rc);
  const std::size_t k = 3;
  FederationConfig cfg = federation(clients, eta, k, 10);
  const double b = contraction_factor(rc, eta);
  REQUIRE(b < 1.0);
  SensitivityLedger ledger(4, b, k);
  const auto first = run_fedavg(cfg, spec, ModelParams::Zero(3), cfg.all_clients());
  for (const auto& r : first) ledger.append(0, round_increments(r, 4));
  const auto second = run_fedavg(cfg, spec, first.back().global_after, {0, 1, 3});
  for (const auto& r : second) {
    const double before = ledger.current_psi(2);
    ledger.append(1, round_increments(r, 4));
    CHECK(rel_err(ledger.current_psi(2), std::pow(b, static_cast<double>(k)) * before) <= 1e-10);
  }
}

TEST_CASE("one-client FedAvg agrees with the reference GD on random instances") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> dims(1, 5);
  std::uniform_int_distribution<int> steps(1, 4);
  std::uniform_real_distribution<double> step(0.01, 0.3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = static_cast<std::size_t>(dims(rng));
    const bool logistic = trial % 2 == 1;
    const auto data = synthetic(logistic ? ModelKind::Logistic : ModelKind::Ridge, 1, d,
                                static_cast<std::uint64_t>(trial), 10);
    const ModelSpec spec = logistic ? logistic_spec(d, 0.01, true) : ridge_spec(d, 0.05);
    const ModelParams theta0 = random_vector(rng, static_cast<Eigen::Index>(spec.parameter_count()));
    const double eta = step(rng);
    const auto k = static_cast<std::size_t>(steps(rng));
    CHECK((local_update(spec, data[0], theta0, eta, k) - reference_gd(spec, data[0], theta0, eta, k))
              .norm() == 0.0);
  }
}

TEST_CASE("the closed-form ridge optimum zeroes the weighted gradient") {
  for (bool bias : {false, true}) {
    const auto clients = synthetic(ModelKind::Ridge, 4, 3, 5);
    const ModelSpec spec = ridge_spec(3, 0.2, bias);
    const Eigen::VectorXd w = proportional_weights(clients);
    const ModelParams opt = ridge_optimum(spec, clients, w);
    ModelParams g = ModelParams::Zero(static_cast<Eigen::Index>(spec.parameter_count()));
    for (std::size_t i = 0; i < clients.size(); ++i)
      g += w(static_cast<Eigen::Index>(i)) * grad(spec, clients[i], opt);
    CHECK(g.norm() < 1e-8);
  }
}

TEST_CASE("contractivity probe") {
  const auto clients = synthetic(ModelKind::Ridge, 1, 3, 3);
  const ModelSpec spec = ridge_spec(3, 0.1);
  const RegimeConstants rc = regime_constants(spec, clients);
  const double eta = max_step_size(rc);
  const ContractivityReport ok =
      contractivity_probe(spec, clients[0], eta, contraction_factor(rc, eta), 300, 1);
  CHECK(ok.pass);
  CHECK(ok.worst_ratio <= contraction_factor(rc, eta) + 1e-12);
  const ContractivityReport bad = contractivity_probe(spec, clients[0], eta, 0.5 * ok.worst_ratio, 300, 1);
  CHECK_FALSE(bad.pass);
}

TEST_CASE("verification report json") {
  const std::vector<CheckResult> checks{{"bound[client=0]", true, -0.1, 0.5}};
  const std::string s = verification_report_json(checks);
  CHECK(s.find("\"name\": \"bound[client=0]\"") != std::string::npos);
  CHECK(s.back() == '\n');
}
