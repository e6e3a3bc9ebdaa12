#include "fedunlearn/fed_engine.hpp"

#include <cmath>
#include <future>
#include <numeric>
#include <random>
#include <string>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/rng.hpp"

namespace fedunlearn {

ClientSet FederationConfig::all_clients() const {
  ClientSet all;
  for (ClientId c = 0; c < clients.size(); ++c) all.insert(c);
  return all;
}

void FederationConfig::validate() const {
  if (clients.empty()) throw ContractError("federation has no clients");
  if (static_cast<std::size_t>(weights.size()) != clients.size())
    throw ContractError("weight vector length differs from the number of clients");
  if ((weights.array() < 0.0).any() || !weights.allFinite())
    throw ContractError("client weights must be finite and non-negative");
  if (std::abs(weights.sum() - 1.0) > kWeightSumTolerance)
    throw ContractError("client weights must sum to 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ContractError("learning rate must be positive");
  if (local_steps < 1) throw ContractError("local_steps must be >= 1");
  for (const auto& c : clients) c.validate();
}

Eigen::VectorXd proportional_weights(std::span<const ClientDataset> clients) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(clients.size()));
  double total = 0.0;
  for (const auto& c : clients) total += static_cast<double>(c.sample_count());
  for (std::size_t i = 0; i < clients.size(); ++i)
    w(static_cast<Eigen::Index>(i)) = static_cast<double>(clients[i].sample_count()) / total;
  return w;
}

Eigen::VectorXd uniform_weights(std::size_t num_clients) {
  return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(num_clients),
                                   1.0 / static_cast<double>(num_clients));
}

const ModelParams* RoundRecord::client_model(ClientId c) const {
  for (std::size_t k = 0; k < active.size(); ++k)
    if (active[k] == c) return &client_models[k];
  return nullptr;
}

namespace {

void guard_divergence(const ModelParams& theta) {
  if (!theta.allFinite()) throw DivergenceError("local iterate became non-finite", 0, 0);
  if (theta.norm() > kDivergenceNorm) throw DivergenceError("local iterate norm exceeded 1e8", 0, 0);
}

ModelParams local_update_minibatch(const ModelSpec& spec, const ClientDataset& data,
                                   ModelParams theta, double eta, std::size_t local_steps,
                                   std::size_t batch_size, std::mt19937_64& rng) {
  const std::size_t n = data.sample_count();
  const std::size_t b = std::min(batch_size, n);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  ClientDataset batch;
  batch.features.resize(static_cast<Eigen::Index>(b), data.features.cols());
  batch.targets.resize(static_cast<Eigen::Index>(b));
  for (std::size_t k = 0; k < local_steps; ++k) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < b; ++i) {
      batch.features.row(static_cast<Eigen::Index>(i)) = data.features.row(order[i]);
      batch.targets(static_cast<Eigen::Index>(i)) = data.targets(order[i]);
    }
    theta -= eta * grad(spec, batch, theta);
    guard_divergence(theta);
  }
  return theta;
}

}  // namespace

ModelParams local_update(const ModelSpec& spec, const ClientDataset& data, ModelParams theta,
                         double eta, std::size_t local_steps) {
  if (local_steps < 1) throw ContractError("local_steps must be >= 1");
  if (!(eta > 0.0)) throw ContractError("learning rate must be positive");
  for (std::size_t k = 0; k < local_steps; ++k) {
    theta -= eta * grad(spec, data, theta);
    guard_divergence(theta);
  }
  return theta;
}

ModelParams aggregate(std::span<const ModelParams> models, const Eigen::VectorXd& weights) {
  if (models.empty()) throw ContractError("nothing to aggregate");
  if (static_cast<std::size_t>(weights.size()) != models.size())
    throw ContractError("aggregation weights and models differ in length");
  if (std::abs(weights.sum() - 1.0) > kWeightSumTolerance)
    throw ContractError("aggregation weights must sum to 1");
  const Eigen::Index d = models.front().size();
  for (const auto& m : models)
    if (m.size() != d) throw ContractError("aggregated models differ in dimension");

  std::size_t anchor = 0;
  while (anchor < models.size() && !(weights(static_cast<Eigen::Index>(anchor)) > 0.0)) ++anchor;
  if (anchor == models.size()) throw ContractError("aggregation weights carry no mass");

  ModelParams out = models[anchor];
  for (std::size_t i = 0; i < models.size(); ++i) {
    const double w = weights(static_cast<Eigen::Index>(i));
    if (i == anchor || w == 0.0) continue;
    out += w * (models[i] - models[anchor]);
  }
  return out;
}

Eigen::VectorXd renormalized_weights(const Eigen::VectorXd& weights, const ClientSet& removed) {
  if (removed.empty()) return weights;
  double kept = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    if (!removed.contains(static_cast<ClientId>(i))) kept += weights(i);
  if (!(kept > 0.0)) throw EmptyFederationError("removal leaves no client weight in the federation");
  Eigen::VectorXd q(weights.size());
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    q(i) = removed.contains(static_cast<ClientId>(i)) ? 0.0 : weights(i) / kept;
  return q;
}

ClientSet complement(std::size_t num_clients, const ClientSet& subset) {
  ClientSet out;
  for (ClientId c = 0; c < num_clients; ++c)
    if (!subset.contains(c)) out.insert(c);
  return out;
}

RoundRecord run_round(const FederationConfig& config, const ModelSpec& spec,
                      const ModelParams& theta, const ClientSet& active, std::size_t round_index) {
  if (active.empty()) throw EmptyFederationError("no active clients");
  for (ClientId c : active)
    if (c >= config.num_clients()) throw ContractError("active client id out of range");

  RoundRecord rec;
  rec.round_index = round_index;
  rec.global_before = theta;
  rec.active.assign(active.begin(), active.end());
  rec.weights = renormalized_weights(config.weights, complement(config.num_clients(), active));
  rec.client_models.resize(rec.active.size());

  auto update = [&](std::size_t k) {
    const ClientId c = rec.active[k];
    try {
      if (config.batch_size == 0) {
        return local_update(spec, config.clients[c], theta, config.eta, config.local_steps);
      }
      auto rng = derived_stream(config.seed, {0x5344ULL, round_index, c});
      return local_update_minibatch(spec, config.clients[c], theta, config.eta,
                                    config.local_steps, config.batch_size, rng);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " (round " + std::to_string(round_index) +
                                ", client " + std::to_string(c) + ")",
                            round_index, c);
    }
  };

  if (config.parallel_clients && rec.active.size() > 1) {
    std::vector<std::future<ModelParams>> jobs;
    jobs.reserve(rec.active.size());
    for (std::size_t k = 0; k < rec.active.size(); ++k)
      jobs.push_back(std::async(std::launch::async, update, k));
    for (std::size_t k = 0; k < jobs.size(); ++k) rec.client_models[k] = jobs[k].get();
  } else {
    for (std::size_t k = 0; k < rec.active.size(); ++k) rec.client_models[k] = update(k);
  }

  Eigen::VectorXd active_weights(static_cast<Eigen::Index>(rec.active.size()));
  for (std::size_t k = 0; k < rec.active.size(); ++k)
    active_weights(static_cast<Eigen::Index>(k)) = rec.weights(static_cast<Eigen::Index>(rec.active[k]));
  rec.global_after = aggregate(rec.client_models, active_weights);
  return rec;
}

std::vector<RoundRecord> run_fedavg(const FederationConfig& config, const ModelSpec& spec,
                                    const ModelParams& theta0, const ClientSet& active) {
  config.validate();
  spec.validate();
  if (active.empty()) throw EmptyFederationError("no active clients");
  std::vector<RoundRecord> records;
  records.reserve(config.rounds);
  ModelParams theta = theta0;
  for (std::size_t n = 0; n < config.rounds; ++n) {
    records.push_back(run_round(config, spec, theta, active, n));
    theta = records.back().global_after;
  }
  return records;
}

double weighted_loss(const ModelSpec& spec, const FederationConfig& config,
                     const ModelParams& theta, const ClientSet& active) {
  const Eigen::VectorXd q =
      renormalized_weights(config.weights, complement(config.num_clients(), active));
  double total = 0.0;
  for (ClientId c : active) total += q(static_cast<Eigen::Index>(c)) * loss(spec, config.clients[c], theta);
  return total;
}

ModelParams initial_model(const ModelSpec& spec, InitKind init, std::uint64_t seed) {
  const auto p = static_cast<Eigen::Index>(spec.parameter_count());
  if (init == InitKind::Zeros) return ModelParams::Zero(p);
  auto rng = derived_stream(seed, {0x1417ULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  ModelParams theta(p);
  for (Eigen::Index i = 0; i < p; ++i) theta(i) = 0.01 * normal(rng);
  return theta;
}

}  // namespace fedunlearn
