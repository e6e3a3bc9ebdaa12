#include <doctest.h>

#include <cmath>
#include <random>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/models.hpp"
#include "helpers.hpp"

using namespace fedunlearn;
using namespace testutil;

TEST_CASE("ridge loss on the identity design") {
  const ClientDataset data = identity_client();
  const ModelSpec spec = ridge_spec(2, 0.0);
  CHECK(loss(spec, data, Eigen::Vector2d(1.0, 1.0)) == 0.0);
  CHECK(loss(spec, data, Eigen::Vector2d(0.0, 0.0)) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("logistic loss at zero is ln 2 per sample") {
  const auto clients = synthetic(ModelKind::Logistic, 2, 3, 4);
  const ModelSpec spec = logistic_spec(3);
  CHECK(loss(spec, clients[0], ModelParams::Zero(3)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("ridge gradient on the identity design") {
  const ModelParams g = grad(ridge_spec(2, 0.0), identity_client(), ModelParams::Zero(2));
  CHECK(g(0) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(g(1) == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("regularizer-only gradient is l2 * theta") {
  // y = X theta makes the data term vanish.
  ClientDataset data = identity_client();
  const ModelParams theta = Eigen::Vector2d(0.3, -0.7);
  data.targets = data.features * theta;
  const ModelParams g = grad(ridge_spec(2, 0.4), data, theta);
  CHECK((g - 0.4 * theta).norm() < 1e-15);
}

TEST_CASE("gradients match central finite differences") {
  std::mt19937_64 rng(17);
  const std::vector<ModelSpec> specs = {
      ridge_spec(3, 0.1), ridge_spec(3, 0.0, true), logistic_spec(3, 0.05, true),
      ModelSpec{ModelKind::TinyMLP, {3, 4, 1}, 0.01, true},
      ModelSpec{ModelKind::TinyMLP, {3, 4, 3, 1}, 0.0, true}};
  for (const auto& spec : specs) {
    const auto clients = synthetic(spec.kind == ModelKind::Logistic ? ModelKind::Logistic : ModelKind::Ridge,
                                   2, 3, 9);
    for (int trial = 0; trial < 5; ++trial) {
      const auto p = static_cast<Eigen::Index>(spec.parameter_count());
      const ModelParams theta = random_vector(rng, p, 0.5);
      const ModelParams g = grad(spec, clients[0], theta);
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < p; ++i) {
        ModelParams up = theta, down = theta;
        up(i) += h;
        down(i) -= h;
        const double fd = (loss(spec, clients[0], up) - loss(spec, clients[0], down)) / (2 * h);
        CHECK(std::abs(fd - g(i)) <= 1e-5 * std::max(1.0, std::abs(g(i))));
      }
    }
  }
}

TEST_CASE("ridge constants on the identity design") {
  const std::vector<ClientDataset> one{identity_client()};
  const RegimeConstants rc = regime_constants(ridge_spec(2, 0.1), one);
  CHECK(rc.regime == Regime::StronglyConvex);
  CHECK(rc.beta == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(rc.mu == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(rc.lambda == 0.1);
}

TEST_CASE("logistic without regularization is merely convex") {
  const auto clients = synthetic(ModelKind::Logistic, 3, 3, 2);
  const RegimeConstants rc = regime_constants(logistic_spec(3), clients);
  CHECK(rc.regime == Regime::Convex);
  CHECK(rc.mu == 0.0);
  CHECK(rc.beta > 0.0);
}

TEST_CASE("rank-deficient ridge without regularization downgrades to convex") {
  ClientDataset data;
  data.features = Eigen::MatrixXd(3, 2);
  data.features << 1, 2, 2, 4, 3, 6;
  data.targets = Eigen::Vector3d(1, 2, 3);
  const std::vector<ClientDataset> one{data};
  const RegimeConstants rc = regime_constants(ridge_spec(2, 0.0), one);
  CHECK(rc.regime == Regime::Convex);
  CHECK(rc.mu == 0.0);
}

TEST_CASE("identical samples report mu = lambda") {
  ClientDataset data;
  data.features = Eigen::MatrixXd::Constant(4, 3, 0.7);
  data.targets = Eigen::VectorXd::Constant(4, 1.0);
  const std::vector<ClientDataset> one{data};
  const RegimeConstants rc = regime_constants(ridge_spec(3, 0.2), one);
  CHECK(rc.regime == Regime::StronglyConvex);
  CHECK(rc.mu == 0.2);
}

TEST_CASE("smoothness and strong convexity hold on random pairs") {
  std::mt19937_64 rng(5);
  const std::vector<ModelSpec> specs = {ridge_spec(4, 0.1), ridge_spec(4, 0.0, true),
                                        logistic_spec(4, 0.05), logistic_spec(4, 0.0, true)};
  for (const auto& spec : specs) {
    const auto clients = synthetic(spec.kind, 4, 4, 21);
    const RegimeConstants rc = regime_constants(spec, clients);
    const auto p = static_cast<Eigen::Index>(spec.parameter_count());
    for (const auto& data : clients) {
      for (int k = 0; k < 200; ++k) {
        const ModelParams a = random_vector(rng, p, 2.0);
        const ModelParams b = random_vector(rng, p, 2.0);
        const ModelParams ga = grad(spec, data, a);
        const ModelParams gb = grad(spec, data, b);
        CHECK((ga - gb).norm() <= rc.beta * (a - b).norm() + 1e-9);
        if (spec.kind == ModelKind::Ridge)
          CHECK((ga - gb).dot(a - b) >= rc.mu * (a - b).squaredNorm() - 1e-9);
      }
    }
  }
}

TEST_CASE("mlp is smooth with a probed beta") {
  const ModelSpec spec{ModelKind::TinyMLP, {3, 5, 1}, 0.01, true};
  const auto clients = synthetic(ModelKind::Ridge, 3, 3, 8);
  const RegimeConstants a = regime_constants(spec, clients, 4);
  const RegimeConstants b = regime_constants(spec, clients, 4);
  CHECK(a.regime == Regime::Smooth);
  CHECK(a.beta > 0.0);
  CHECK(a.beta == b.beta);
  CHECK(a.beta == doctest::Approx(kSmoothnessSafetyFactor * probe_gradient_lipschitz(spec, clients, 4)));
}

TEST_CASE("model spec validation") {
  CHECK(ridge_spec(3, 0.0, true).parameter_count() == 4);
  CHECK(ModelSpec{ModelKind::TinyMLP, {3, 4, 1}, 0.0, true}.parameter_count() == 3 * 4 + 4 + 4 + 1);
  CHECK_THROWS_AS((ModelSpec{ModelKind::TinyMLP, {3, 4, 4, 4, 1}, 0.0, true}.validate()), ContractError);
  CHECK_THROWS_AS((ModelSpec{ModelKind::TinyMLP, {3, 200, 200, 1}, 0.0, true}.validate()), ContractError);
  CHECK_THROWS_AS((ModelSpec{ModelKind::Ridge, {3, 1}, 0.0, false}.validate()), ContractError);
  CHECK_THROWS_AS(ridge_spec(3, -1.0).validate(), ContractError);
  CHECK_THROWS_AS(loss(ridge_spec(3, 0.0), identity_client(), ModelParams::Zero(3)), ContractError);
}

TEST_CASE("evaluation metric") {
  const ClientDataset data = identity_client();
  CHECK(evaluation_metric(ridge_spec(2, 0.0), data, Eigen::Vector2d(1.0, 1.0)) == 0.0);
  ClientDataset labels;
  labels.features = Eigen::MatrixXd(2, 1);
  labels.features << 1.0, -1.0;
  labels.targets = Eigen::Vector2d(1.0, 0.0);
  CHECK(evaluation_metric(logistic_spec(1), labels, ModelParams::Constant(1, 2.0)) == 1.0);
  CHECK(evaluation_metric(logistic_spec(1), labels, ModelParams::Constant(1, -2.0)) == 0.0);
}
