#include "fedunlearn/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/json_format.hpp"

namespace fedunlearn {

namespace {

// Relative slack when comparing eta to a step bound computed from the same constants.
constexpr double kStepBoundSlack = 1e-12;

}  // namespace

double max_step_size(const RegimeConstants& regime) {
  switch (regime.regime) {
    case Regime::Smooth: return std::numeric_limits<double>::infinity();
    case Regime::Convex: return 2.0 / regime.beta;
    case Regime::StronglyConvex: return 2.0 / (regime.beta + regime.mu);
  }
  return 0.0;
}

double contraction_factor(const RegimeConstants& regime, double eta) {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw CalibrationError("learning rate must be positive");
  if (!(regime.beta >= 0.0)) throw CalibrationError("beta must be >= 0");
  switch (regime.regime) {
    case Regime::Smooth:
      return 1.0 + eta * regime.beta;
    case Regime::Convex:
      if (regime.beta > 0.0 && eta > (2.0 / regime.beta) * (1.0 + kStepBoundSlack))
        throw CalibrationError("convex regime requires eta <= 2/beta = " +
                               format_double(2.0 / regime.beta));
      return 1.0;
    case Regime::StronglyConvex: {
      if (!(regime.mu > 0.0) || regime.mu > regime.beta)
        throw CalibrationError("strongly convex regime requires 0 < mu <= beta");
      const double bound = 2.0 / (regime.beta + regime.mu);
      if (eta > bound * (1.0 + kStepBoundSlack))
        throw CalibrationError("strongly convex regime requires eta <= 2/(beta+mu) = " +
                               format_double(bound));
      return 1.0 - eta * regime.beta * regime.mu / (regime.beta + regime.mu);
    }
  }
  return 1.0;
}

double client_increment_direct(const RoundRecord& round, const Eigen::VectorXd& weights,
                               ClientId c) {
  if (round.client_model(c) == nullptr) return 0.0;
  if (static_cast<Eigen::Index>(c) >= weights.size())
    throw ContractError("client id outside the weight vector");
  if (weights(static_cast<Eigen::Index>(c)) == 0.0) return 0.0;

  const Eigen::VectorXd q = renormalized_weights(weights, ClientSet{c});
  std::vector<ModelParams> kept;
  Eigen::VectorXd kept_weights(static_cast<Eigen::Index>(round.active.size() - 1));
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < round.active.size(); ++i) {
    if (round.active[i] == c) continue;
    kept.push_back(round.client_models[i]);
    kept_weights(k++) = q(static_cast<Eigen::Index>(round.active[i]));
  }
  const ModelParams without = aggregate(kept, kept_weights);
  return (round.global_after - without).norm();
}

double client_increment_direct(const RoundRecord& round, ClientId c) {
  return client_increment_direct(round, round.weights, c);
}

double client_increment_fast(const RoundRecord& round, const Eigen::VectorXd& weights, ClientId c) {
  const ModelParams* local = round.client_model(c);
  if (local == nullptr) return 0.0;
  const double p = weights(static_cast<Eigen::Index>(c));
  if (p >= 1.0) throw SingularRemovalError("client carries all the weight; removal is singular");
  if (p == 0.0) return 0.0;
  return p / (1.0 - p) * (*local - round.global_after).norm();
}

double client_increment_fast(const RoundRecord& round, ClientId c) {
  return client_increment_fast(round, round.weights, c);
}

std::vector<double> round_increments(const RoundRecord& round, std::size_t num_clients) {
  std::vector<double> deltas(num_clients, 0.0);
  for (ClientId c : round.active) {
    if (c >= num_clients) throw ContractError("active client id out of range");
    deltas[c] = round.weights(static_cast<Eigen::Index>(c)) >= 1.0
                    ? std::numeric_limits<double>::infinity()
                    : client_increment_fast(round, c);
  }
  return deltas;
}

SensitivityLedger::SensitivityLedger(std::size_t num_clients, double contraction,
                                     std::size_t local_steps, std::optional<double> psi_star)
    : num_clients_(num_clients),
      contraction_(contraction),
      local_steps_(local_steps),
      decay_(std::pow(contraction, static_cast<double>(local_steps))),
      psi_star_(psi_star),
      psi_(num_clients, 0.0),
      rollback_(num_clients, 0) {
  if (!(contraction > 0.0)) throw ContractError("contraction factor must be positive");
  if (local_steps < 1) throw ContractError("local_steps must be >= 1");
  if (psi_star && !(*psi_star >= 0.0)) throw ContractError("psi_star must be >= 0");
}

void SensitivityLedger::append(std::size_t segment, std::vector<double> deltas) {
  if (deltas.size() != num_clients_) throw ContractError("increment vector has the wrong length");
  for (double d : deltas)
    if (!(d >= 0.0)) throw ContractError("increments must be >= 0");
  if (!increments_.empty() && segment < increments_.back().segment)
    throw ContractError("segments must not decrease along the history");
  const std::size_t position = increments_.size();
  for (ClientId c = 0; c < num_clients_; ++c) {
    psi_[c] = decay_ * psi_[c] + deltas[c];
    if (psi_star_ && psi_[c] <= *psi_star_) rollback_[c] = position + 1;
  }
  increments_.push_back(IncrementRecord{position, segment, std::move(deltas)});
}

void SensitivityLedger::truncate(std::size_t n) {
  if (n > increments_.size()) throw ContractError("ledger truncation beyond its length");
  increments_.resize(n);
  rebuild();
}

void SensitivityLedger::set_psi_star(std::optional<double> psi_star) {
  if (psi_star && !(*psi_star >= 0.0)) throw ContractError("psi_star must be >= 0");
  psi_star_ = psi_star;
  rebuild();
}

void SensitivityLedger::rebuild() {
  std::fill(psi_.begin(), psi_.end(), 0.0);
  std::fill(rollback_.begin(), rollback_.end(), 0);
  for (const auto& rec : increments_) {
    for (ClientId c = 0; c < num_clients_; ++c) {
      psi_[c] = decay_ * psi_[c] + rec.per_client_delta[c];
      if (psi_star_ && psi_[c] <= *psi_star_) rollback_[c] = rec.position + 1;
    }
  }
}

double SensitivityLedger::current_psi(ClientId c) const {
  if (c >= num_clients_) throw ContractError("client id out of range");
  return psi_[c];
}

std::size_t SensitivityLedger::rollback_position(ClientId c) const {
  if (c >= num_clients_) throw ContractError("client id out of range");
  return rollback_[c];
}

std::set<std::size_t> SensitivityLedger::rollback_positions() const {
  return {rollback_.begin(), rollback_.end()};
}

double bounded_sensitivity(const SensitivityLedger& ledger, std::size_t n, ClientId c) {
  if (n > ledger.length())
    throw ContractError("position " + std::to_string(n) + " beyond ledger length " +
                        std::to_string(ledger.length()));
  if (c >= ledger.num_clients()) throw ContractError("client id out of range");
  const auto& inc = ledger.increments();
  const double b = ledger.contraction();
  const auto k = static_cast<double>(ledger.local_steps());
  double psi = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double delta = inc[s].per_client_delta[c];
    if (delta == 0.0) continue;
    psi += std::pow(b, static_cast<double>(n - s - 1) * k) * delta;
  }
  return psi;
}

std::vector<double> psi_trajectory(const SensitivityLedger& ledger, ClientId c) {
  if (c >= ledger.num_clients()) throw ContractError("client id out of range");
  std::vector<double> out;
  out.reserve(ledger.length() + 1);
  double psi = 0.0;
  out.push_back(psi);
  for (const auto& rec : ledger.increments()) {
    psi = ledger.round_decay() * psi + rec.per_client_delta[c];
    out.push_back(psi);
  }
  return out;
}

double set_sensitivity(const SensitivityLedger& ledger, const ClientSet& clients, std::size_t n) {
  if (clients.empty()) throw ContractError("set sensitivity of an empty client set");
  double worst = 0.0;
  for (ClientId c : clients) worst = std::max(worst, bounded_sensitivity(ledger, n, c));
  return worst;
}

std::size_t rollback_index(const SensitivityLedger& ledger, const ClientSet& clients,
                           double psi_star) {
  if (!(psi_star >= 0.0)) throw ContractError("psi_star must be >= 0");
  if (clients.empty()) throw ContractError("rollback index of an empty client set");
  std::vector<double> worst(ledger.length() + 1, 0.0);
  for (ClientId c : clients) {
    const std::vector<double> traj = psi_trajectory(ledger, c);
    for (std::size_t n = 0; n < traj.size(); ++n) worst[n] = std::max(worst[n], traj[n]);
  }
  std::size_t best = 0;
  for (std::size_t n = 0; n < worst.size(); ++n)
    if (worst[n] <= psi_star) best = n;
  return best;
}

NoiseBudget NoiseBudget::from_target(double epsilon, double delta, double sigma) {
  return NoiseBudget{epsilon, delta, sigma, psi_threshold(epsilon, delta, sigma)};
}

namespace {

void check_budget(double epsilon, double delta) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw CalibrationError("epsilon must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw CalibrationError("delta must lie in (0, 1)");
}

double gaussian_scale(double delta) { return std::sqrt(2.0 * (std::log(1.25) - std::log(delta))); }

}  // namespace

double noise_std(double psi, double epsilon, double delta) {
  check_budget(epsilon, delta);
  if (!(psi >= 0.0)) throw CalibrationError("sensitivity must be >= 0");
  return gaussian_scale(delta) / epsilon * psi;
}

double psi_threshold(double epsilon, double delta, double sigma) {
  check_budget(epsilon, delta);
  if (!(sigma >= 0.0)) throw CalibrationError("sigma must be >= 0");
  return epsilon * sigma / gaussian_scale(delta);
}

void write_ledger_csv(std::ostream& out, const SensitivityLedger& ledger) {
  out << "round,segment,client,delta,psi\n";
  std::vector<double> psi(ledger.num_clients(), 0.0);
  for (const auto& rec : ledger.increments()) {
    for (ClientId c = 0; c < ledger.num_clients(); ++c) {
      psi[c] = ledger.round_decay() * psi[c] + rec.per_client_delta[c];
      out << rec.position << ',' << rec.segment << ',' << c << ','
          << format_double(rec.per_client_delta[c]) << ',' << format_double(psi[c]) << '\n';
    }
  }
}

LedgerCsv read_ledger_csv(std::istream& in, std::size_t num_clients, double contraction,
                          std::size_t local_steps, std::optional<double> psi_star) {
  LedgerCsv result{SensitivityLedger(num_clients, contraction, local_steps, psi_star), {}};
  std::string line;
  if (!std::getline(in, line) || line != "round,segment,client,delta,psi")
    throw ContractError("ledger csv: unexpected header");

  std::vector<double> deltas(num_clients, 0.0);
  std::vector<double> psis(num_clients, 0.0);
  std::size_t expected_client = 0;
  std::size_t position = 0;
  std::size_t segment = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field[5];
    for (auto& f : field)
      if (!std::getline(row, f, ',')) throw ContractError("ledger csv: short row at line " + std::to_string(line_no));
    const std::size_t r = std::stoull(field[0]);
    const std::size_t seg = std::stoull(field[1]);
    const std::size_t c = std::stoull(field[2]);
    if (r != position || c != expected_client)
      throw ContractError("ledger csv: rows out of order at line " + std::to_string(line_no));
    if (c == 0) segment = seg;
    deltas[c] = std::stod(field[3]);
    psis[c] = std::stod(field[4]);
    if (++expected_client == num_clients) {
      result.ledger.append(segment, deltas);
      result.stored_psi.push_back(psis);
      expected_client = 0;
      ++position;
    }
  }
  if (expected_client != 0) throw ContractError("ledger csv: incomplete final round");
  return result;
}

}  // namespace fedunlearn
