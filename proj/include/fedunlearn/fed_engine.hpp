#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedunlearn/models.hpp"
#include "fedunlearn/types.hpp"

namespace fedunlearn {

/// Tolerance on sum(p_i) == 1.
inline constexpr double kWeightSumTolerance = 1e-12;

/// Guard against runaway local training.
inline constexpr double kDivergenceNorm = 1e8;

struct FederationConfig {
  std::vector<ClientDataset> clients;
  Eigen::VectorXd weights;  // p_i
  double eta = 0.1;
  std::size_t local_steps = 1;
  std::size_t rounds = 0;
  std::uint64_t seed = 0;
  /// 0 means full-batch GD. Anything else enables minibatch SGD, which breaks
  /// the exactness assumptions behind the sensitivity bound.
  std::size_t batch_size = 0;
  /// Run the local updates of a round on separate threads.
  bool parallel_clients = false;

  std::size_t num_clients() const { return clients.size(); }
  ClientSet all_clients() const;
  void validate() const;
};

/// p_i = N_i / sum_j N_j.
Eigen::VectorXd proportional_weights(std::span<const ClientDataset> clients);
Eigen::VectorXd uniform_weights(std::size_t num_clients);

/// One server aggregation. `client_models[k]` belongs to `active[k]`;
/// `weights` is the full-length effective weight vector used for aggregation
/// (renormalized over the active set, zero elsewhere).
struct RoundRecord {
  std::size_t round_index = 0;
  ModelParams global_before;
  std::vector<ClientId> active;
  std::vector<ModelParams> client_models;
  Eigen::VectorXd weights;
  ModelParams global_after;

  /// Null when `c` did not take part in the round.
  const ModelParams* client_model(ClientId c) const;
};

/// K full-batch gradient steps theta <- theta - eta * grad(theta).
/// Throws DivergenceError (round/client fields zero) on non-finite or exploding iterates.
ModelParams local_update(const ModelSpec& spec, const ClientDataset& data, ModelParams theta,
                         double eta, std::size_t local_steps);

/// sum_i w_i m_i, accumulated in ascending index order as
/// anchor + sum_i w_i (m_i - anchor) with the anchor the first model carrying
/// positive weight. Identical inputs therefore aggregate to themselves exactly.
ModelParams aggregate(std::span<const ModelParams> models, const Eigen::VectorXd& weights);

/// q_i = p_i / sum_{j not removed} p_j for kept clients, 0 for removed ones.
/// An empty removal returns the weights untouched.
Eigen::VectorXd renormalized_weights(const Eigen::VectorXd& weights, const ClientSet& removed);

/// The clients of `all` that are not in `subset`.
ClientSet complement(std::size_t num_clients, const ClientSet& subset);

/// One FedAvg round from `theta` over `active`.
RoundRecord run_round(const FederationConfig& config, const ModelSpec& spec,
                      const ModelParams& theta, const ClientSet& active, std::size_t round_index);

/// config.rounds rounds of FedAvg from theta0 on `active`.
std::vector<RoundRecord> run_fedavg(const FederationConfig& config, const ModelSpec& spec,
                                    const ModelParams& theta0, const ClientSet& active);

/// sum_i q_i f_i(theta) with q renormalized over `active`.
double weighted_loss(const ModelSpec& spec, const FederationConfig& config,
                     const ModelParams& theta, const ClientSet& active);

enum class InitKind { Normal, Zeros };

/// Seeded N(0, 0.01^2) entries, or all zeros.
ModelParams initial_model(const ModelSpec& spec, InitKind init, std::uint64_t seed);

}  // namespace fedunlearn
