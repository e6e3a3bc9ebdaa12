#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedunlearn/fed_engine.hpp"
#include "fedunlearn/history.hpp"
#include "fedunlearn/models.hpp"
#include "fedunlearn/sensitivity.hpp"
#include "fedunlearn/unlearn.hpp"

namespace fedunlearn {

/// Synthetic federation: a shared ground-truth parameter plus a per-client
/// shift scaled by `heterogeneity`. Regression targets are linear with
/// Gaussian noise, classification labels are Bernoulli(sigmoid(.)).
struct DataRecipe {
  std::size_t clients = 5;
  std::size_t samples_per_client = 20;
  std::size_t feature_dim = 5;
  double heterogeneity = 0.5;
  double noise = 0.1;
  std::uint64_t seed = 0;

  bool operator==(const DataRecipe&) const = default;
};

std::vector<ClientDataset> generate_data(const DataRecipe& recipe, ModelKind kind);

struct FederationSettings {
  std::optional<double> eta;  // nullopt: largest admissible step (1/beta, 2/(beta+mu))
  std::size_t local_steps = 1;
  std::size_t rounds = 40;
  std::uint64_t seed = 0;
  InitKind init = InitKind::Normal;
  std::string weights = "proportional";  // "proportional" | "uniform" | "explicit"
  std::vector<double> explicit_weights;
  std::size_t batch_size = 0;
  bool parallel_clients = false;

  bool operator==(const FederationSettings&) const = default;
};

struct BudgetSettings {
  double epsilon = 1.0;
  double delta = 0.05;
  double sigma = 0.1;

  bool operator==(const BudgetSettings&) const = default;
};

struct VerifySettings {
  std::vector<ClientId> clients;  // empty: every client
  double tolerance = 1e-8;
  std::size_t probe_pairs = 200;

  bool operator==(const VerifySettings&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelSpec model;
  FederationSettings federation;
  DataRecipe data_gen;
  BudgetSettings budget;
  std::size_t checkpoint_interval = 1;
  CheckpointMode checkpoint_mode = CheckpointMode::Full;
  std::vector<ClientSet> requests;
  StoppingRule stopping;
  VerifySettings verify;

  bool operator==(const ExperimentConfig&) const = default;

  nlohmann::json to_json() const;
  /// Strict: unknown keys, wrong types and inconsistent values raise ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);
std::uint64_t config_hash(const ExperimentConfig& config);
std::string hex_hash(std::uint64_t h);

/// Everything derived deterministically from a config.
struct Experiment {
  ExperimentConfig config;
  std::vector<ClientDataset> clients;
  FederationConfig federation;
  RegimeConstants regime;
  NoiseBudget budget;
  ModelParams theta0;
  std::uint64_t hash = 0;
};

Experiment prepare_experiment(const ExperimentConfig& config);

/// Step size used when the config leaves eta unset.
double default_step_size(const RegimeConstants& regime);

}  // namespace fedunlearn
