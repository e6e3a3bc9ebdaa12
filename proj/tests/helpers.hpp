#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fedunlearn/experiment.hpp"
#include "fedunlearn/fed_engine.hpp"
#include "fedunlearn/models.hpp"
#include "fedunlearn/sensitivity.hpp"
#include "fedunlearn/unlearn.hpp"

namespace testutil {

using namespace fedunlearn;

inline ClientDataset identity_client() {
  ClientDataset d;
  d.features = Eigen::MatrixXd::Identity(2, 2);
  d.targets = Eigen::Vector2d(1.0, 1.0);
  return d;
}

/// Hand-built client shared with tests/oracles/derive_expected.py.
inline ClientDataset trig_client(std::size_t c, std::size_t n = 4, std::size_t d = 2) {
  ClientDataset data;
  data.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  data.targets.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::sin(1.0 + 3.0 * static_cast<double>(c) + 2.0 * static_cast<double>(i) + static_cast<double>(j));
    data.targets(static_cast<Eigen::Index>(i)) = std::cos(0.5 + static_cast<double>(c) + static_cast<double>(i));
  }
  return data;
}

inline ModelSpec ridge_spec(std::size_t d, double l2, bool bias = false) {
  return ModelSpec{ModelKind::Ridge, {d}, l2, bias};
}

inline ModelSpec logistic_spec(std::size_t d, double l2 = 0.0, bool bias = false) {
  return ModelSpec{ModelKind::Logistic, {d}, l2, bias};
}

inline FederationConfig federation(std::vector<ClientDataset> clients, double eta, std::size_t k,
                                   std::size_t rounds, std::uint64_t seed = 0) {
  FederationConfig cfg;
  cfg.weights = proportional_weights(clients);
  cfg.clients = std::move(clients);
  cfg.eta = eta;
  cfg.local_steps = k;
  cfg.rounds = rounds;
  cfg.seed = seed;
  return cfg;
}

/// Synthetic federation drawn through the experiment data generator.
inline std::vector<ClientDataset> synthetic(ModelKind kind, std::size_t m, std::size_t d,
                                            std::uint64_t seed, std::size_t n = 20,
                                            double heterogeneity = 0.5) {
  DataRecipe r;
  r.clients = std::max<std::size_t>(m, 2);
  r.samples_per_client = n;
  r.feature_dim = d;
  r.heterogeneity = heterogeneity;
  r.seed = seed;
  auto clients = generate_data(r, kind);
  clients.resize(m);
  return clients;
}

inline ModelParams random_vector(std::mt19937_64& rng, Eigen::Index p, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  ModelParams v(p);
  for (Eigen::Index i = 0; i < p; ++i) v(i) = normal(rng);
  return v;
}

inline double rel_err(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

inline std::filesystem::path config_path(const std::string& name) {
  return std::filesystem::path(FEDUNLEARN_CONFIG_DIR) / (name + ".json");
}

/// Post-construction state of a prepared experiment with an overridden threshold.
inline UnlearningState make_state(const Experiment& exp, double psi_star,
                                  CheckpointMode mode = CheckpointMode::Full) {
  NoiseBudget budget = exp.budget;
  budget.psi_star = psi_star;
  return UnlearningState(exp.config.model, exp.federation, exp.regime, budget, exp.theta0, mode,
                         exp.config.federation.seed);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fedunlearn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
