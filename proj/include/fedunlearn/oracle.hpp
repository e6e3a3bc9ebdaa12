#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedunlearn/fed_engine.hpp"
#include "fedunlearn/models.hpp"

namespace fedunlearn {

/// alpha(n, c) = |FedAvg(I, n) - FedAvg(I_{-c}, n)| next to the ledger's
/// Psi(n, c), for n = 0..rounds (both start at zero).
struct SensitivityTrace {
  ClientId client = 0;
  std::vector<double> alpha;
  std::vector<double> psi;
  /// Set when a Smooth-regime trace was cut because Psi outgrew
  /// 1e6 * max(|theta_0|, 1) and the bound became vacuous.
  std::optional<std::size_t> capped_at;
};

inline constexpr double kVacuousBoundFactor = 1e6;

/// Trains twice from theta0 (all clients, then all but c) and compares.
SensitivityTrace empirical_sensitivity(const FederationConfig& config, const ModelSpec& spec,
                                       const ModelParams& theta0, ClientId c, double contraction);

/// Plain gradient descent, kept apart from the federated engine.
ModelParams reference_gd(const ModelSpec& spec, const ClientDataset& data,
                         const ModelParams& theta0, double eta, std::size_t steps);

struct BoundReport {
  bool pass = true;
  std::optional<std::size_t> first_violation;
  double worst_slack = 0.0;  // max_n alpha - psi (<= tol on pass)
  double tightness = 0.0;    // max_n alpha/psi over psi > 0
};

BoundReport check_bound(const SensitivityTrace& trace, double tol);

/// Minimizer of sum_i q_i f_i for Ridge (normal equations).
ModelParams ridge_optimum(const ModelSpec& spec, std::span<const ClientDataset> clients,
                          const Eigen::VectorXd& weights);

/// One-step GD map T(x) = x - eta grad f(x) checked against
/// ||T(theta) - T(phi)|| <= B ||theta - phi|| on random pairs drawn with
/// entries ~ N(0, scale^2).
struct ContractivityReport {
  std::size_t pairs = 0;
  bool pass = true;
  double worst_slack = 0.0;  // max ||T theta - T phi|| - B ||theta - phi||
  double worst_ratio = 0.0;  // max ||T theta - T phi|| / ||theta - phi||
};

ContractivityReport contractivity_probe(const ModelSpec& spec, const ClientDataset& data,
                                        double eta, double contraction, std::size_t pairs,
                                        std::uint64_t seed, double scale = 1.0,
                                        double tol = 1e-9);

/// One line of the verification report.
struct CheckResult {
  std::string name;
  bool pass = true;
  double worst_slack = 0.0;
  double tightness = 0.0;
};

std::string verification_report_json(std::span<const CheckResult> checks);

}  // namespace fedunlearn
