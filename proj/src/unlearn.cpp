#include "fedunlearn/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <string>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/rng.hpp"

namespace fedunlearn {

ModelParams gaussian_perturb(const ModelParams& theta, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw CalibrationError("noise std must be finite and >= 0");
  if (sigma == 0.0) return theta;
  std::normal_distribution<double> normal(0.0, sigma);
  ModelParams out = theta;
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += normal(rng);
  return out;
}

std::mt19937_64 request_stream(std::uint64_t seed, std::size_t request_index) {
  return derived_stream(seed, {0x9e25ULL, request_index});
}

void StoppingRule::validate() const {
  if (std::isnan(loss_threshold)) throw ContractError("loss threshold must not be NaN");
  if (min_rounds > max_rounds) throw ContractError("min_rounds exceeds max_rounds");
}

StopDecision stopping_criterion(std::size_t rounds_done, double retained_loss,
                                const StoppingRule& rule) {
  const bool reached = retained_loss <= rule.loss_threshold;
  if (rounds_done >= rule.max_rounds) return {true, reached};
  if (rounds_done >= rule.min_rounds && reached) return {true, true};
  return {false, false};
}

RetrainResult retrain(const FederationConfig& config, const ModelSpec& spec, ModelParams start,
                      const ClientSet& remaining, const StoppingRule& rule,
                      const RoundObserver& observer) {
  rule.validate();
  if (remaining.empty()) throw EmptyFederationError("no remaining clients to retrain on");
  RetrainResult result;
  result.model = std::move(start);
  double current = weighted_loss(spec, config, result.model, remaining);
  result.loss_trace.push_back(current);
  for (;;) {
    const StopDecision decision = stopping_criterion(result.rounds, current, rule);
    if (decision.stop) {
      result.converged = decision.converged;
      break;
    }
    RoundRecord round = run_round(config, spec, result.model, remaining, result.rounds);
    if (observer) observer(round);
    result.model = std::move(round.global_after);
    ++result.rounds;
    current = weighted_loss(spec, config, result.model, remaining);
    result.loss_trace.push_back(current);
  }
  result.final_loss = current;
  return result;
}

UnlearningState::UnlearningState(ModelSpec spec, FederationConfig federation,
                                 RegimeConstants regime, NoiseBudget budget, ModelParams theta0,
                                 CheckpointMode mode, std::uint64_t seed)
    : spec_(std::move(spec)),
      federation_(std::move(federation)),
      regime_(regime),
      budget_(budget),
      seed_(seed),
      history_(std::move(theta0), mode),
      ledger_(federation_.num_clients(), contraction_factor(regime_, federation_.eta),
              federation_.local_steps, budget_.psi_star),
      position_segment_{0},
      remaining_(federation_.all_clients()) {
  federation_.validate();
  spec_.validate();
  if (static_cast<std::size_t>(history_.latest().size()) != spec_.parameter_count())
    throw ContractError("initial model dimension does not match the model spec");
}

UnlearningState::UnlearningState(ModelSpec spec, FederationConfig federation,
                                 RegimeConstants regime, NoiseBudget budget,
                                 TrainingHistory history, SensitivityLedger ledger,
                                 std::vector<std::size_t> position_segments, std::uint64_t seed)
    : spec_(std::move(spec)),
      federation_(std::move(federation)),
      regime_(regime),
      budget_(budget),
      seed_(seed),
      history_(std::move(history)),
      ledger_(std::move(ledger)),
      position_segment_(std::move(position_segments)),
      remaining_(federation_.all_clients()) {
  federation_.validate();
  if (history_.size() != ledger_.length() + 1)
    throw ContractError("history and ledger lengths disagree");
  if (position_segment_.size() != history_.size())
    throw ContractError("segment map and history lengths disagree");
  if (ledger_.num_clients() != federation_.num_clients())
    throw ContractError("ledger client count differs from the federation");
  segment_ = position_segment_.back();
}

void UnlearningState::record_round(const RoundRecord& round) {
  ledger_.append(segment_, round_increments(round, federation_.num_clients()));
  history_.push(round.global_after);
  position_segment_.push_back(segment_);
  history_.compact(ledger_.rollback_positions());
}

void UnlearningState::train(std::size_t rounds, const RoundObserver& observer) {
  for (std::size_t n = 0; n < rounds; ++n) {
    const RoundRecord round = run_round(federation_, spec_, history_.latest(), remaining_, n);
    record_round(round);
    if (observer) observer(round);
  }
}

UnlearningOutcome process_request(UnlearningState& state, const UnlearningRequest& request,
                                  const StoppingRule& rule, bool rollback,
                                  const RoundObserver& observer) {
  if (request.targets.empty()) throw InvalidRequestError("unlearning request has no targets");
  for (ClientId c : request.targets) {
    if (c >= state.federation_.num_clients())
      throw InvalidRequestError("client " + std::to_string(c) + " is not part of the federation");
    if (!state.remaining_.contains(c))
      throw InvalidRequestError("client " + std::to_string(c) + " was already unlearned");
  }
  ClientSet after;
  std::set_difference(state.remaining_.begin(), state.remaining_.end(), request.targets.begin(),
                      request.targets.end(), std::inserter(after, after.end()));
  if (after.empty()) throw EmptyFederationError("request would remove every remaining client");
  rule.validate();

  auto& ledger = state.ledger_;
  const std::size_t n = rollback ? rollback_index(ledger, request.targets, state.budget_.psi_star)
                                 : ledger.length();
  double psi = 0.0;
  for (ClientId c : request.targets) psi = std::max(psi, psi_trajectory(ledger, c)[n]);
  const double sigma = noise_std(psi, state.budget_.epsilon, state.budget_.delta);
  const ModelParams source = state.history_.at(n);

  UnlearningOutcome outcome;
  outcome.request_index = request.request_index;
  outcome.targets = request.targets;
  outcome.rollback_position = n;
  outcome.source_segment = state.position_segment_.at(n);
  outcome.psi_at_rollback = psi;
  outcome.noise_sigma = sigma;

  state.history_.truncate(n);
  ledger.truncate(n);
  state.position_segment_.resize(n + 1);
  for (auto& p : state.perturbations_) p.effective_position = std::min(p.effective_position, n);

  auto rng = request_stream(state.seed_, request.request_index);
  ModelParams start = gaussian_perturb(source, sigma, rng);

  state.remaining_ = std::move(after);
  state.processed_.insert(request.targets.begin(), request.targets.end());
  ++state.segment_;
  state.perturbations_.push_back(
      PerturbationRecord{request.request_index, request.targets, n, n, psi, sigma});

  // The perturbation is data-independent: its slot in Lambda is zero for everyone.
  ledger.append(state.segment_, std::vector<double>(state.federation_.num_clients(), 0.0));
  state.history_.push(start);
  state.position_segment_.push_back(state.segment_);
  state.history_.compact(ledger.rollback_positions());

  RetrainResult result = retrain(state.federation_, state.spec_, std::move(start),
                                 state.remaining_, rule,
                                 [&state, &observer](const RoundRecord& r) {
                                   state.record_round(r);
                                   if (observer) observer(r);
                                 });
  outcome.retrain_rounds = result.rounds;
  outcome.final_model = std::move(result.model);
  outcome.final_retained_loss = result.final_loss;
  outcome.converged = result.converged;
  return outcome;
}

UnlearningOutcome sifu(UnlearningState& state, const UnlearningRequest& request,
                       const StoppingRule& rule, const RoundObserver& observer) {
  return process_request(state, request, rule, true, observer);
}

UnlearningOutcome ifu(UnlearningState& state, ClientId client, const StoppingRule& rule,
                      const RoundObserver& observer) {
  return process_request(state, UnlearningRequest{state.perturbations().size() + 1, {client}},
                         rule, true, observer);
}

UnlearningOutcome baseline_last(UnlearningState& state, const UnlearningRequest& request,
                                const StoppingRule& rule, const RoundObserver& observer) {
  return process_request(state, request, rule, false, observer);
}

RetrainResult baseline_scratch(const FederationConfig& config, const ModelSpec& spec,
                               const ModelParams& theta0, const ClientSet& remaining,
                               const StoppingRule& rule) {
  return retrain(config, spec, theta0, remaining, rule);
}

RetrainResult baseline_finetune(const FederationConfig& config, const ModelSpec& spec,
                                const ModelParams& final_model, const ClientSet& remaining,
                                const StoppingRule& rule) {
  return retrain(config, spec, final_model, remaining, rule);
}

std::vector<std::size_t> effective_positions(const std::vector<std::size_t>& rollback_positions) {
  std::vector<std::size_t> out(rollback_positions);
  for (std::size_t u = out.size(); u-- > 1;) out[u - 1] = std::min(out[u - 1], out[u]);
  return out;
}

std::vector<AuditEntry> audit_budget(const SensitivityLedger& surviving,
                                     const std::vector<PerturbationRecord>& perturbations,
                                     double psi_star, double tol) {
  std::vector<AuditEntry> entries;
  for (const auto& p : perturbations) {
    for (ClientId c : p.targets) {
      AuditEntry e;
      e.request_index = p.request_index;
      e.client = c;
      e.position = p.effective_position;
      e.psi = bounded_sensitivity(surviving, p.effective_position, c);
      e.pass = e.psi <= psi_star + tol;
      entries.push_back(e);
    }
  }
  return entries;
}

}  // namespace fedunlearn
