#include "fedunlearn/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/json_format.hpp"
#include "fedunlearn/rng.hpp"
#include "fedunlearn/sensitivity.hpp"

namespace fedunlearn {

SensitivityTrace empirical_sensitivity(const FederationConfig& config, const ModelSpec& spec,
                                       const ModelParams& theta0, ClientId c, double contraction) {
  if (c >= config.num_clients()) throw ContractError("client is not part of the federation");
  const ClientSet all = config.all_clients();
  ClientSet without = all;
  without.erase(c);

  const std::vector<RoundRecord> with_c = run_fedavg(config, spec, theta0, all);
  const std::vector<RoundRecord> without_c = run_fedavg(config, spec, theta0, without);

  SensitivityLedger ledger(config.num_clients(), contraction, config.local_steps);
  SensitivityTrace trace;
  trace.client = c;
  trace.alpha.push_back(0.0);
  trace.psi.push_back(0.0);
  const double cap = kVacuousBoundFactor * std::max(theta0.norm(), 1.0);
  for (std::size_t n = 0; n < with_c.size(); ++n) {
    ledger.append(0, round_increments(with_c[n], config.num_clients()));
    const double psi = ledger.current_psi(c);
    if (contraction > 1.0 && psi > cap) {
      trace.capped_at = n + 1;
      break;
    }
    trace.alpha.push_back((with_c[n].global_after - without_c[n].global_after).norm());
    trace.psi.push_back(psi);
  }
  return trace;
}

ModelParams reference_gd(const ModelSpec& spec, const ClientDataset& data,
                         const ModelParams& theta0, double eta, std::size_t steps) {
  ModelParams theta = theta0;
  for (std::size_t t = 0; t < steps; ++t) {
    const ModelParams g = grad(spec, data, theta);
    theta = theta - eta * g;
    if (!theta.allFinite()) throw DivergenceError("reference gradient descent diverged", t, 0);
  }
  return theta;
}

BoundReport check_bound(const SensitivityTrace& trace, double tol) {
  if (trace.alpha.empty() || trace.alpha.size() != trace.psi.size())
    throw ContractError("trace must be nonempty with matching alpha/psi lengths");
  BoundReport report;
  report.worst_slack = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < trace.alpha.size(); ++n) {
    const double slack = trace.alpha[n] - trace.psi[n];
    report.worst_slack = std::max(report.worst_slack, slack);
    if (trace.psi[n] > 0.0) report.tightness = std::max(report.tightness, trace.alpha[n] / trace.psi[n]);
    if (!(slack <= tol) && report.pass) {
      report.pass = false;
      report.first_violation = n;
    }
  }
  return report;
}

ModelParams ridge_optimum(const ModelSpec& spec, std::span<const ClientDataset> clients,
                          const Eigen::VectorXd& weights) {
  if (spec.kind != ModelKind::Ridge) throw ContractError("closed-form optimum needs a ridge model");
  const auto p = static_cast<Eigen::Index>(spec.parameter_count());
  const auto d = static_cast<Eigen::Index>(spec.input_dim());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const double q = weights(static_cast<Eigen::Index>(i));
    if (q == 0.0) continue;
    Eigen::MatrixXd x(clients[i].features.rows(), p);
    x.leftCols(d) = clients[i].features;
    if (spec.bias) x.col(d).setOnes();
    const auto n = static_cast<double>(clients[i].sample_count());
    h += q * x.transpose() * x / n;
    rhs += q * x.transpose() * clients[i].targets / n;
  }
  h.topLeftCorner(d, d).diagonal().array() += spec.l2;
  return h.ldlt().solve(rhs);
}

ContractivityReport contractivity_probe(const ModelSpec& spec, const ClientDataset& data,
                                        double eta, double contraction, std::size_t pairs,
                                        std::uint64_t seed, double scale, double tol) {
  const auto p = static_cast<Eigen::Index>(spec.parameter_count());
  auto rng = derived_stream(seed, {0xc0de});
  std::normal_distribution<double> normal(0.0, scale);
  auto draw = [&] {
    ModelParams v(p);
    for (Eigen::Index i = 0; i < p; ++i) v(i) = normal(rng);
    return v;
  };
  ContractivityReport report;
  report.pairs = pairs;
  report.worst_slack = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < pairs; ++k) {
    const ModelParams theta = draw();
    const ModelParams phi = draw();
    const ModelParams t_theta = theta - eta * grad(spec, data, theta);
    const ModelParams t_phi = phi - eta * grad(spec, data, phi);
    const double gap = (theta - phi).norm();
    const double moved = (t_theta - t_phi).norm();
    report.worst_slack = std::max(report.worst_slack, moved - contraction * gap);
    if (gap > 0.0) report.worst_ratio = std::max(report.worst_ratio, moved / gap);
  }
  report.pass = pairs == 0 || report.worst_slack <= tol;
  if (pairs == 0) report.worst_slack = 0.0;
  return report;
}

std::string verification_report_json(std::span<const CheckResult> checks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks) {
    nlohmann::json row;
    row["name"] = c.name;
    row["pass"] = c.pass;
    row["worst_slack"] = c.worst_slack;
    row["tightness"] = c.tightness;
    arr.push_back(row);
  }
  return dump_json(arr, 2) + "\n";
}

}  // namespace fedunlearn
