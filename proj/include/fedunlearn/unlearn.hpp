#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "fedunlearn/fed_engine.hpp"
#include "fedunlearn/history.hpp"
#include "fedunlearn/models.hpp"
#include "fedunlearn/sensitivity.hpp"

namespace fedunlearn {

/// theta + z with z_i ~ N(0, sigma^2) drawn from `rng`. sigma = 0 returns theta as is.
ModelParams gaussian_perturb(const ModelParams& theta, double sigma, std::mt19937_64& rng);

/// Dedicated perturbation stream for request u of an experiment.
std::mt19937_64 request_stream(std::uint64_t seed, std::size_t request_index);

/// Retraining stops once the retained-client loss reaches `loss_threshold`
/// after at least `min_rounds` rounds, or unconditionally at `max_rounds`.
struct StoppingRule {
  double loss_threshold = std::numeric_limits<double>::infinity();
  std::size_t min_rounds = 0;
  std::size_t max_rounds = 100;

  void validate() const;
  bool operator==(const StoppingRule&) const = default;
};

struct StopDecision {
  bool stop = false;
  bool converged = false;
};

StopDecision stopping_criterion(std::size_t rounds_done, double retained_loss,
                                const StoppingRule& rule);

struct RetrainResult {
  ModelParams model;
  std::size_t rounds = 0;
  bool converged = false;
  double final_loss = 0.0;
  std::vector<double> loss_trace;  // retained loss after 0, 1, ..., rounds rounds
};

using RoundObserver = std::function<void(const RoundRecord&)>;

/// FedAvg from `start` over `remaining` until the stopping rule fires.
RetrainResult retrain(const FederationConfig& config, const ModelSpec& spec, ModelParams start,
                      const ClientSet& remaining, const StoppingRule& rule,
                      const RoundObserver& observer = {});

struct UnlearningRequest {
  std::size_t request_index = 1;  // u, starting at 1
  ClientSet targets;              // W_u
};

/// Where and how strongly a request perturbed the history.
struct PerturbationRecord {
  std::size_t request_index = 0;
  ClientSet targets;
  std::size_t position = 0;            // n_u in H(u-1)
  std::size_t effective_position = 0;  // earliest later rollback at or below n_u
  double psi = 0.0;                    // Psi_{u-1}(n_u, W_u)
  double sigma = 0.0;
};

struct UnlearningOutcome {
  std::size_t request_index = 0;
  ClientSet targets;
  std::size_t rollback_position = 0;
  std::size_t source_segment = 0;
  double psi_at_rollback = 0.0;
  double noise_sigma = 0.0;
  std::size_t retrain_rounds = 0;
  ModelParams final_model;
  double final_retained_loss = 0.0;
  bool converged = false;
};

/// Federation under sequential unlearning: model history H(u), the
/// sensitivity ledger over it, remaining/processed clients and the budget.
class UnlearningState {
 public:
  UnlearningState(ModelSpec spec, FederationConfig federation, RegimeConstants regime,
                  NoiseBudget budget, ModelParams theta0,
                  CheckpointMode mode = CheckpointMode::Full, std::uint64_t seed = 0);

  /// Resume from stored artifacts. `history.size()` must equal `ledger.length() + 1`.
  UnlearningState(ModelSpec spec, FederationConfig federation, RegimeConstants regime,
                  NoiseBudget budget, TrainingHistory history, SensitivityLedger ledger,
                  std::vector<std::size_t> position_segments, std::uint64_t seed = 0);

  /// Run `rounds` FedAvg rounds on the remaining clients, recording each.
  void train(std::size_t rounds, const RoundObserver& observer = {});

  /// Ledger + history bookkeeping for a round that started from the latest model.
  void record_round(const RoundRecord& round);

  const ModelSpec& spec() const { return spec_; }
  const FederationConfig& federation() const { return federation_; }
  const RegimeConstants& regime() const { return regime_; }
  const NoiseBudget& budget() const { return budget_; }
  double contraction() const { return ledger_.contraction(); }
  std::uint64_t seed() const { return seed_; }

  const TrainingHistory& history() const { return history_; }
  const SensitivityLedger& ledger() const { return ledger_; }
  const ClientSet& remaining() const { return remaining_; }
  const ClientSet& processed() const { return processed_; }
  const ModelParams& current_model() const { return history_.latest(); }
  std::size_t segment() const { return segment_; }
  std::size_t segment_of(std::size_t position) const { return position_segment_.at(position); }
  const std::vector<PerturbationRecord>& perturbations() const { return perturbations_; }

  /// Rollback checkpoint reference of a client (a history position).
  std::size_t rollback_checkpoint(ClientId c) const { return ledger_.rollback_position(c); }

 private:
  friend UnlearningOutcome process_request(UnlearningState&, const UnlearningRequest&,
                                           const StoppingRule&, bool rollback,
                                           const RoundObserver&);

  ModelSpec spec_;
  FederationConfig federation_;
  RegimeConstants regime_;
  NoiseBudget budget_;
  std::uint64_t seed_;
  TrainingHistory history_;
  SensitivityLedger ledger_;
  std::vector<std::size_t> position_segment_;
  ClientSet remaining_;
  ClientSet processed_;
  std::size_t segment_ = 0;
  std::vector<PerturbationRecord> perturbations_;
};

/// Shared request pipeline: choose the rollback position (the latest
/// Psi*-feasible one, or the final position when `rollback` is false),
/// truncate H and the ledger there, perturb with sigma = noise_std(Psi(n, W)),
/// retrain on the remaining clients and append the new segment.
/// `observer` sees every retraining round after it has been recorded.
UnlearningOutcome process_request(UnlearningState& state, const UnlearningRequest& request,
                                  const StoppingRule& rule, bool rollback,
                                  const RoundObserver& observer = {});

/// Sequential informed federated unlearning of one request.
UnlearningOutcome sifu(UnlearningState& state, const UnlearningRequest& request,
                       const StoppingRule& rule, const RoundObserver& observer = {});

/// Single-client informed unlearning (a one-request SIFU).
UnlearningOutcome ifu(UnlearningState& state, ClientId client, const StoppingRule& rule,
                      const RoundObserver& observer = {});

/// Noise the final model with the Psi-calibrated sigma, no rollback, then retrain.
UnlearningOutcome baseline_last(UnlearningState& state, const UnlearningRequest& request,
                                const StoppingRule& rule, const RoundObserver& observer = {});

/// Retrain from theta0 on the remaining clients.
RetrainResult baseline_scratch(const FederationConfig& config, const ModelSpec& spec,
                               const ModelParams& theta0, const ClientSet& remaining,
                               const StoppingRule& rule);

/// Continue training the current global model on the remaining clients.
RetrainResult baseline_finetune(const FederationConfig& config, const ModelSpec& spec,
                                const ModelParams& final_model, const ClientSet& remaining,
                                const StoppingRule& rule);

struct AuditEntry {
  std::size_t request_index = 0;
  ClientId client = 0;
  std::size_t position = 0;
  double psi = 0.0;
  bool pass = false;
};

/// For every processed request u and c in W_u: Psi(e_u, c) <= psi_star + tol,
/// with Psi recomputed from the surviving ledger at the request's effective
/// perturbation position e_u.
std::vector<AuditEntry> audit_budget(const SensitivityLedger& surviving,
                                     const std::vector<PerturbationRecord>& perturbations,
                                     double psi_star, double tol = 1e-9);

/// e_u = min(n_u, n_{u+1}, ..., n_U) for rollback positions listed in request order.
std::vector<std::size_t> effective_positions(const std::vector<std::size_t>& rollback_positions);

}  // namespace fedunlearn
