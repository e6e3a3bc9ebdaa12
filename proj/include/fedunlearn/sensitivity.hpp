#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <set>
#include <vector>

#include "fedunlearn/fed_engine.hpp"
#include "fedunlearn/models.hpp"
#include "fedunlearn/types.hpp"

namespace fedunlearn {

/// Per-step Lipschitz constant B of the gradient-step operator
/// theta -> theta - eta * grad f(theta):
///   Smooth          1 + eta*beta
///   Convex          1                        (requires eta <= 2/beta)
///   StronglyConvex  1 - eta*beta*mu/(beta+mu)  (requires eta <= 2/(beta+mu))
/// Throws CalibrationError when eta breaks the regime's step bound.
double contraction_factor(const RegimeConstants& regime, double eta);

/// Largest step size the regime admits (infinity for Smooth).
double max_step_size(const RegimeConstants& regime);

/// |omega(I, theta) - omega(I_{-c}, theta)|: aggregation with and without
/// client c, the latter with renormalized weights. Zero when c was not active.
double client_increment_direct(const RoundRecord& round, const Eigen::VectorXd& weights,
                               ClientId c);
double client_increment_direct(const RoundRecord& round, ClientId c);

/// Closed form p_c/(1-p_c) * |theta_c^{n+1} - theta^{n+1}|.
/// Throws SingularRemovalError when p_c = 1.
double client_increment_fast(const RoundRecord& round, const Eigen::VectorXd& weights, ClientId c);
double client_increment_fast(const RoundRecord& round, ClientId c);

/// Fast increments for clients 0..num_clients-1. Inactive clients get 0; a
/// client that carries all of the round's weight gets +infinity (its removal
/// empties the federation).
std::vector<double> round_increments(const RoundRecord& round, std::size_t num_clients);

/// One entry of the concatenated increment sequence Lambda.
struct IncrementRecord {
  std::size_t position = 0;
  std::size_t segment = 0;
  std::vector<double> per_client_delta;
};

/// Running bounded-sensitivity state over the concatenated training history.
///
/// Increment s links history model s to model s+1. Psi(n, c) is
/// sum_{s<n} B^{(n-s-1)K} Lambda_c[s], maintained online through
/// Psi(n+1) = B^K Psi(n) + Lambda_c[n]. When a threshold is configured, the
/// ledger also tracks, for each client, the latest position whose Psi stays
/// within it; that position doubles as the reference to the client's
/// rollback checkpoint in the history.
class SensitivityLedger {
 public:
  SensitivityLedger(std::size_t num_clients, double contraction, std::size_t local_steps,
                    std::optional<double> psi_star = std::nullopt);

  std::size_t num_clients() const { return num_clients_; }
  double contraction() const { return contraction_; }
  std::size_t local_steps() const { return local_steps_; }
  /// B^K, the per-round decay.
  double round_decay() const { return decay_; }

  /// Number of increments, i.e. the last history position.
  std::size_t length() const { return increments_.size(); }
  const std::vector<IncrementRecord>& increments() const { return increments_; }

  void append(std::size_t segment, std::vector<double> deltas);

  /// Keep the first n increments and rebuild the online state.
  void truncate(std::size_t n);

  /// Psi(length(), c) from the online recurrence.
  double current_psi(ClientId c) const;

  std::optional<double> psi_star() const { return psi_star_; }
  void set_psi_star(std::optional<double> psi_star);

  /// max{n : Psi(n, c) <= psi_star}; 0 when no threshold is configured.
  std::size_t rollback_position(ClientId c) const;
  std::set<std::size_t> rollback_positions() const;

 private:
  void rebuild();

  std::size_t num_clients_;
  double contraction_;
  std::size_t local_steps_;
  double decay_;
  std::optional<double> psi_star_;
  std::vector<IncrementRecord> increments_;
  std::vector<double> psi_;
  std::vector<std::size_t> rollback_;
};

/// Closed-form sum sum_{s=0}^{n-1} B^{(n-s-1)K} Lambda_c[s]. Psi(0, c) = 0.
double bounded_sensitivity(const SensitivityLedger& ledger, std::size_t n, ClientId c);

/// Psi(0..length, c) through the recurrence; what the ledger maintains online.
std::vector<double> psi_trajectory(const SensitivityLedger& ledger, ClientId c);

/// max_{c in S} Psi(n, c). Throws ContractError for an empty set.
double set_sensitivity(const SensitivityLedger& ledger, const ClientSet& clients, std::size_t n);

/// Largest n with max_{c in S} Psi(n, c) <= psi_star (latest position on ties).
std::size_t rollback_index(const SensitivityLedger& ledger, const ClientSet& clients,
                           double psi_star);

/// Unlearning budget. psi_star is derived from (epsilon, delta, sigma).
struct NoiseBudget {
  double epsilon = 1.0;
  double delta = 0.05;
  double sigma = 0.0;
  double psi_star = 0.0;

  static NoiseBudget from_target(double epsilon, double delta, double sigma);
};

/// sqrt(2 (ln 1.25 - ln delta)) / epsilon * psi.
double noise_std(double psi, double epsilon, double delta);

/// Inverse of noise_std in psi: epsilon * sigma / sqrt(2 (ln 1.25 - ln delta)).
double psi_threshold(double epsilon, double delta, double sigma);

/// CSV with header `round,segment,client,delta,psi`, one row per (increment,
/// client). `round` is the increment position s, `psi` is Psi(s+1, client).
/// Floats carry 17 significant digits.
void write_ledger_csv(std::ostream& out, const SensitivityLedger& ledger);

/// Rows must be position-major and gap-free. The psi column is returned
/// separately so callers can audit it against the recomputed recurrence.
struct LedgerCsv {
  SensitivityLedger ledger;
  std::vector<std::vector<double>> stored_psi;  // [position][client]
};
LedgerCsv read_ledger_csv(std::istream& in, std::size_t num_clients, double contraction,
                          std::size_t local_steps, std::optional<double> psi_star = std::nullopt);

}  // namespace fedunlearn
