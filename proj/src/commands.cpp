#include "fedunlearn/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fedunlearn/checkpoint.hpp"
#include "fedunlearn/errors.hpp"
#include "fedunlearn/json_format.hpp"
#include "fedunlearn/rng.hpp"

#ifndef FEDUNLEARN_VERSION
#define FEDUNLEARN_VERSION "0.0.0"
#endif

namespace fedunlearn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kProxyTolerance = 1e-10;
constexpr double kReplayTolerance = 1e-12;
constexpr double kAuditTolerance = 1e-9;

class PhaseTimer {
 public:
  void start(std::string name) {
    name_ = std::move(name);
    begin_ = std::chrono::steady_clock::now();
  }
  void stop() {
    const auto end = std::chrono::steady_clock::now();
    timings_[name_] = std::chrono::duration<double, std::milli>(end - begin_).count();
  }
  json to_json() const {
    json j = json::object();
    for (const auto& [k, v] : timings_) j[k] = v;
    return j;
  }

 private:
  std::string name_;
  std::chrono::steady_clock::time_point begin_;
  std::map<std::string, double> timings_;
};

std::string checkpoint_name(std::size_t position) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "round_%06zu.ckpt", position);
  return buf;
}

std::string rollback_name(ClientId c) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "client_%03zu.ckpt", c);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("missing artifact: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

json manifest_json(const Experiment& ex, std::string_view command, const std::vector<std::string>& outputs,
                   const PhaseTimer& timer) {
  json j;
  j["command"] = std::string(command);
  j["config_hash"] = hex_hash(ex.hash);
  j["code_version"] = FEDUNLEARN_VERSION;
  j["seeds"] = {{"federation", ex.config.federation.seed}, {"data", ex.config.data_gen.seed}};
  j["outputs"] = outputs;
  j["timings_ms"] = timer.to_json();
  return j;
}

void write_manifest(const fs::path& path, const Experiment& ex, std::string_view command,
                    const std::vector<std::string>& outputs, const PhaseTimer& timer) {
  write_text(path, dump_json(manifest_json(ex, command, outputs, timer), 2) + "\n");
}

json client_set_json(const ClientSet& s) { return std::vector<ClientId>(s.begin(), s.end()); }

ClientSet to_set(const std::vector<ClientId>& v) { return ClientSet(v.begin(), v.end()); }

ClientDataset pooled(const std::vector<ClientDataset>& clients, const ClientSet& members) {
  Eigen::Index rows = 0;
  for (ClientId c : members) rows += clients[c].features.rows();
  ClientDataset out;
  out.features.resize(rows, clients.front().features.cols());
  out.targets.resize(rows);
  Eigen::Index r = 0;
  for (ClientId c : members) {
    const auto n = clients[c].features.rows();
    out.features.middleRows(r, n) = clients[c].features;
    out.targets.segment(r, n) = clients[c].targets;
    r += n;
  }
  return out;
}

void remove_owned_artifacts(const fs::path& run_dir) {
  if (!fs::exists(run_dir)) return;
  static const std::set<std::string> dirs = {"checkpoints", "rollback", "report"};
  static const std::set<std::string> files = {"config.json", "metrics.jsonl", "ledger.csv",
                                              "final.ckpt", "verify_report.json"};
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    const auto ext = entry.path().extension().string();
    const bool owned =
        (entry.is_directory() && dirs.contains(name)) || files.contains(name) ||
        (name.starts_with("manifest") && ext == ".json") ||
        (name.starts_with("outcomes_") && ext == ".json") ||
        (name.starts_with("retrain_") && ext == ".jsonl") ||
        (name.starts_with("model_") && ext == ".ckpt") ||
        (name.starts_with("ledger_") && ext == ".csv");
    if (owned) fs::remove_all(entry.path());
  }
}

SensitivityLedger empty_ledger(const Experiment& ex) {
  return SensitivityLedger(ex.federation.num_clients(),
                           contraction_factor(ex.regime, ex.federation.eta),
                           ex.federation.local_steps, ex.budget.psi_star);
}

/// Training ledger from ledger.csv. A zero-round run has no ledger file.
LedgerCsv read_training_ledger(const Experiment& ex, const fs::path& run_dir) {
  const fs::path path = run_dir / "ledger.csv";
  if (!fs::exists(path)) {
    if (ex.config.federation.rounds == 0 && fs::exists(run_dir / "checkpoints" / checkpoint_name(0)))
      return LedgerCsv{empty_ledger(ex), {}};
    throw MissingArtifactError("missing artifact: " + path.string() + " (run `train` first)");
  }
  std::istringstream in(read_text(path));
  return read_ledger_csv(in, ex.federation.num_clients(),
                         contraction_factor(ex.regime, ex.federation.eta),
                         ex.federation.local_steps, ex.budget.psi_star);
}

ModelParams read_model(const Experiment& ex, const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError("missing artifact: " + path.string());
  Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.config_hash != ex.hash)
    throw ConfigError(path.string() + " was produced by a different config (hash " +
                      hex_hash(ckpt.config_hash) + ", expected " + hex_hash(ex.hash) + ")");
  if (static_cast<std::size_t>(ckpt.values.size()) != ex.config.model.parameter_count())
    throw ConfigError(path.string() + " has the wrong parameter count");
  return std::move(ckpt.values);
}

void write_model(const Experiment& ex, const fs::path& path, std::size_t position,
                 const ModelParams& theta) {
  write_checkpoint(path, Checkpoint{position, ex.hash, theta});
}

std::string ledger_text(const SensitivityLedger& ledger) {
  std::ostringstream out;
  write_ledger_csv(out, ledger);
  return out.str();
}

json request_json(const RequestReport& r) {
  json j;
  j["request_index"] = r.request_index;
  j["targets"] = client_set_json(r.targets);
  j["rollback_position"] = r.rollback_position ? json(*r.rollback_position) : json(nullptr);
  j["psi_at_rollback"] = r.psi_at_rollback;
  j["sigma"] = r.sigma;
  j["retrain_rounds"] = r.retrain_rounds;
  j["final_retained_loss"] = r.final_retained_loss;
  j["converged"] = r.converged;
  return j;
}

RequestReport request_from_json(const json& j) {
  RequestReport r;
  try {
    r.request_index = j.at("request_index").get<std::size_t>();
    r.targets = to_set(j.at("targets").get<std::vector<ClientId>>());
    if (!j.at("rollback_position").is_null())
      r.rollback_position = j.at("rollback_position").get<std::size_t>();
    r.psi_at_rollback = j.at("psi_at_rollback").is_null() ? NAN : j.at("psi_at_rollback").get<double>();
    r.sigma = j.at("sigma").is_null() ? NAN : j.at("sigma").get<double>();
    r.retrain_rounds = j.at("retrain_rounds").get<std::size_t>();
    r.final_retained_loss =
        j.at("final_retained_loss").is_null() ? NAN : j.at("final_retained_loss").get<double>();
    r.converged = j.at("converged").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed outcome record: ") + e.what());
  }
  return r;
}

std::vector<RequestReport> read_outcomes(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_array()) throw ConfigError(path.string() + " must hold an array");
  std::vector<RequestReport> out;
  for (const auto& row : j) out.push_back(request_from_json(row));
  return out;
}

double relative_gap(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale == 0.0) return 0.0;
  return std::abs(a - b) / scale;
}

/// psi column of a ledger file against the recurrence over its own deltas.
CheckResult psi_column_check(const std::string& name, const LedgerCsv& csv) {
  CheckResult check{name, true, 0.0, 0.0};
  const std::size_t m = csv.ledger.num_clients();
  for (ClientId c = 0; c < m; ++c) {
    const std::vector<double> traj = psi_trajectory(csv.ledger, c);
    for (std::size_t s = 0; s < csv.stored_psi.size(); ++s) {
      const double gap = relative_gap(csv.stored_psi[s][c], traj[s + 1]);
      check.worst_slack = std::max(check.worst_slack, gap);
    }
  }
  check.pass = check.worst_slack <= kReplayTolerance;
  return check;
}

std::string csv_number(double x) { return std::isfinite(x) ? format_double(x) : ""; }

}  // namespace

std::string_view to_string(UnlearnMethod method) {
  switch (method) {
    case UnlearnMethod::Sifu: return "sifu";
    case UnlearnMethod::Ifu: return "ifu";
    case UnlearnMethod::Scratch: return "scratch";
    case UnlearnMethod::Finetune: return "finetune";
    case UnlearnMethod::Last: return "last";
  }
  return "?";
}

UnlearnMethod parse_unlearn_method(std::string_view name) {
  for (UnlearnMethod m : kAllMethods)
    if (to_string(m) == name) return m;
  throw ConfigError("unknown unlearning method '" + std::string(name) +
                    "' (expected sifu, ifu, scratch, finetune or last)");
}

fs::path output_root() {
  const char* env = std::getenv(kOutputRootVar);
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

fs::path default_run_dir(const ExperimentConfig& config) { return output_root() / config.name; }

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingArtifactError*>(&e) != nullptr) return kExitUsage;
  if (dynamic_cast<const std::invalid_argument*>(&e) != nullptr) return kExitUsage;
  return kExitRuntime;
}

UnlearningState load_training_state(const Experiment& ex, const fs::path& run_dir) {
  LedgerCsv csv = read_training_ledger(ex, run_dir);
  const std::size_t length = csv.ledger.length();

  std::map<std::size_t, ModelParams> stored;
  auto add_dir = [&](const fs::path& dir) {
    if (!fs::is_directory(dir)) return;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.path().extension() == ".ckpt") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const Checkpoint ckpt = read_checkpoint(f);
      if (ckpt.config_hash != ex.hash)
        throw ConfigError(f.string() + " was produced by a different config");
      if (ckpt.round_index > length) throw ConfigError(f.string() + " lies beyond the ledger");
      stored.insert_or_assign(static_cast<std::size_t>(ckpt.round_index), read_model(ex, f));
    }
  };
  const fs::path ckpt_dir = run_dir / "checkpoints";
  if (!fs::is_directory(ckpt_dir))
    throw MissingArtifactError("missing artifact: " + ckpt_dir.string() + " (run `train` first)");
  add_dir(ckpt_dir);
  add_dir(run_dir / "rollback");
  if (length > 0) stored.insert_or_assign(length, read_model(ex, run_dir / "final.ckpt"));
  if (!stored.contains(0))
    throw MissingArtifactError("missing artifact: initial checkpoint " +
                               (ckpt_dir / checkpoint_name(0)).string());

  std::vector<std::size_t> segments{0};
  for (const auto& rec : csv.ledger.increments()) segments.push_back(rec.segment);
  TrainingHistory history(length + 1, std::move(stored), ex.config.checkpoint_mode);
  return UnlearningState(ex.config.model, ex.federation, ex.regime, ex.budget, std::move(history),
                         std::move(csv.ledger), std::move(segments), ex.config.federation.seed);
}

TrainSummary cmd_train(const ExperimentConfig& config, const fs::path& run_dir) {
  PhaseTimer timer;
  timer.start("prepare");
  const Experiment ex = prepare_experiment(config);
  const std::size_t rounds = config.federation.rounds;
  const std::size_t m = ex.federation.num_clients();
  timer.stop();

  std::vector<std::string> outputs{"config.json"};
  for (std::size_t p = 0; p <= rounds; p += config.checkpoint_interval)
    outputs.push_back("checkpoints/" + checkpoint_name(p));
  if (rounds > 0) {
    outputs.insert(outputs.end(), {"metrics.jsonl", "ledger.csv", "final.ckpt"});
    for (ClientId c = 0; c < m; ++c) outputs.push_back("rollback/" + rollback_name(c));
  }

  remove_owned_artifacts(run_dir);
  fs::create_directories(run_dir);
  write_manifest(run_dir / "manifest.json", ex, "train", outputs, timer);
  write_text(run_dir / "config.json", serialize_config(config));

  timer.start("train");
  UnlearningState state(config.model, ex.federation, ex.regime, ex.budget, ex.theta0,
                        config.checkpoint_mode, config.federation.seed);
  write_model(ex, run_dir / "checkpoints" / checkpoint_name(0), 0, ex.theta0);
  const ClientSet all = ex.federation.all_clients();
  std::ostringstream metrics;
  double final_loss = weighted_loss(config.model, ex.federation, ex.theta0, all);
  state.train(rounds, [&](const RoundRecord& r) {
    const std::size_t pos = state.history().last_position();
    final_loss = weighted_loss(config.model, ex.federation, r.global_after, all);
    json row;
    row["round"] = pos;
    row["global_loss"] = final_loss;
    row["delta"] = state.ledger().increments().back().per_client_delta;
    std::vector<double> psi(m);
    for (ClientId c = 0; c < m; ++c) psi[c] = state.ledger().current_psi(c);
    row["psi"] = psi;
    metrics << dump_json(row) << "\n";
    if (pos % config.checkpoint_interval == 0)
      write_model(ex, run_dir / "checkpoints" / checkpoint_name(pos), pos, r.global_after);
  });
  timer.stop();

  timer.start("write");
  if (rounds > 0) {
    write_text(run_dir / "metrics.jsonl", metrics.str());
    write_text(run_dir / "ledger.csv", ledger_text(state.ledger()));
    write_model(ex, run_dir / "final.ckpt", state.history().last_position(), state.current_model());
    for (ClientId c = 0; c < m; ++c) {
      const std::size_t pos = state.rollback_checkpoint(c);
      write_model(ex, run_dir / "rollback" / rollback_name(c), pos, state.history().at(pos));
    }
  }
  timer.stop();
  write_manifest(run_dir / "manifest.json", ex, "train", outputs, timer);
  return TrainSummary{run_dir, rounds, final_loss};
}

UnlearnSummary cmd_unlearn(const ExperimentConfig& config, UnlearnMethod method,
                           const fs::path& run_dir) {
  PhaseTimer timer;
  timer.start("prepare");
  const Experiment ex = prepare_experiment(config);
  const std::string tag(to_string(method));
  const bool history_based = method == UnlearnMethod::Sifu || method == UnlearnMethod::Ifu ||
                             method == UnlearnMethod::Last;
  if (method == UnlearnMethod::Ifu)
    for (const auto& r : config.requests)
      if (r.size() != 1)
        throw InvalidRequestError("ifu handles one client per request; use sifu for client sets");

  std::optional<UnlearningState> state;
  ModelParams current = ex.theta0;
  if (method != UnlearnMethod::Scratch) {
    state.emplace(load_training_state(ex, run_dir));
    current = state->current_model();
  }
  timer.stop();

  std::vector<std::string> outputs{"outcomes_" + tag + ".json", "retrain_" + tag + ".jsonl",
                                   "model_" + tag + ".ckpt"};
  if (history_based) outputs.push_back("ledger_" + tag + ".csv");
  fs::create_directories(run_dir);
  write_manifest(run_dir / ("manifest_unlearn_" + tag + ".json"), ex, "unlearn " + tag, outputs, timer);

  timer.start("unlearn");
  UnlearnSummary summary;
  summary.run_dir = run_dir;
  summary.method = method;
  std::ostringstream log;
  ClientSet remaining = ex.federation.all_clients();
  for (std::size_t u = 1; u <= config.requests.size(); ++u) {
    const ClientSet& targets = config.requests[u - 1];
    std::size_t round_in_request = 0;
    auto log_row = [&](double retained_loss) {
      json row;
      row["request"] = u;
      row["round"] = ++round_in_request;
      row["retained_loss"] = retained_loss;
      log << dump_json(row) << "\n";
    };
    RequestReport report;
    report.request_index = u;
    report.targets = targets;
    if (history_based) {
      auto observer = [&](const RoundRecord& r) {
        log_row(weighted_loss(config.model, ex.federation, r.global_after,
                              ClientSet(r.active.begin(), r.active.end())));
      };
      const UnlearningRequest request{u, targets};
      UnlearningOutcome outcome;
      if (method == UnlearnMethod::Sifu) outcome = sifu(*state, request, config.stopping, observer);
      else if (method == UnlearnMethod::Ifu) outcome = ifu(*state, *targets.begin(), config.stopping, observer);
      else outcome = baseline_last(*state, request, config.stopping, observer);
      report.rollback_position = outcome.rollback_position;
      report.psi_at_rollback = outcome.psi_at_rollback;
      report.sigma = outcome.noise_sigma;
      report.retrain_rounds = outcome.retrain_rounds;
      report.final_retained_loss = outcome.final_retained_loss;
      report.converged = outcome.converged;
      current = outcome.final_model;
    } else {
      for (ClientId c : targets) {
        if (c >= ex.federation.num_clients())
          throw InvalidRequestError("client " + std::to_string(c) + " is not part of the federation");
        if (!remaining.erase(c))
          throw InvalidRequestError("client " + std::to_string(c) + " was already unlearned");
      }
      if (remaining.empty()) throw EmptyFederationError("request would remove every remaining client");
      const RetrainResult result =
          method == UnlearnMethod::Scratch
              ? baseline_scratch(ex.federation, config.model, ex.theta0, remaining, config.stopping)
              : baseline_finetune(ex.federation, config.model, current, remaining, config.stopping);
      for (std::size_t k = 1; k < result.loss_trace.size(); ++k) log_row(result.loss_trace[k]);
      report.retrain_rounds = result.rounds;
      report.final_retained_loss = result.final_loss;
      report.converged = result.converged;
      current = result.model;
    }
    summary.requests.push_back(report);
  }
  timer.stop();

  timer.start("write");
  json outcomes = json::array();
  for (const auto& r : summary.requests) outcomes.push_back(request_json(r));
  write_text(run_dir / ("outcomes_" + tag + ".json"), dump_json(outcomes, 2) + "\n");
  write_text(run_dir / ("retrain_" + tag + ".jsonl"), log.str());
  write_model(ex, run_dir / ("model_" + tag + ".ckpt"), config.requests.size(), current);
  if (history_based) write_text(run_dir / ("ledger_" + tag + ".csv"), ledger_text(state->ledger()));
  timer.stop();
  write_manifest(run_dir / ("manifest_unlearn_" + tag + ".json"), ex, "unlearn " + tag, outputs, timer);
  summary.final_model = std::move(current);
  return summary;
}

VerifySummary cmd_verify(const ExperimentConfig& config, const fs::path& run_dir) {
  PhaseTimer timer;
  timer.start("prepare");
  const Experiment ex = prepare_experiment(config);
  const double contraction = contraction_factor(ex.regime, ex.federation.eta);
  const bool heuristic = ex.regime.regime == Regime::Smooth;
  const std::string prefix = heuristic ? "diagnostic:" : "";
  const LedgerCsv stored = read_training_ledger(ex, run_dir);

  std::vector<UnlearnMethod> audited;
  for (UnlearnMethod m : {UnlearnMethod::Sifu, UnlearnMethod::Ifu, UnlearnMethod::Last})
    if (fs::exists(run_dir / ("outcomes_" + std::string(to_string(m)) + ".json"))) audited.push_back(m);
  timer.stop();

  write_manifest(run_dir / "manifest_verify.json", ex, "verify", {"verify_report.json"}, timer);
  VerifySummary summary;
  auto& checks = summary.checks;
  const std::size_t m = ex.federation.num_clients();

  timer.start("bound");
  std::vector<ClientId> clients = config.verify.clients;
  if (clients.empty())
    for (ClientId c = 0; c < m; ++c) clients.push_back(c);
  for (ClientId c : clients) {
    const SensitivityTrace trace =
        empirical_sensitivity(ex.federation, config.model, ex.theta0, c, contraction);
    const BoundReport report = check_bound(trace, config.verify.tolerance);
    checks.push_back(CheckResult{prefix + "bound[client=" + std::to_string(c) + "]", report.pass,
                                 report.worst_slack, report.tightness});
  }
  timer.stop();

  timer.start("replay");
  const std::vector<RoundRecord> run =
      run_fedavg(ex.federation, config.model, ex.theta0, ex.federation.all_clients());
  CheckResult proxy{"delta_proxy", true, 0.0, 0.0};
  std::vector<std::vector<double>> replayed;
  for (const auto& round : run) {
    for (ClientId c : round.active) {
      const double p = round.weights(static_cast<Eigen::Index>(c));
      if (p >= 1.0) continue;
      proxy.worst_slack = std::max(proxy.worst_slack, relative_gap(client_increment_fast(round, c),
                                                                   client_increment_direct(round, c)));
    }
    replayed.push_back(round_increments(round, m));
  }
  proxy.pass = proxy.worst_slack <= kProxyTolerance;
  checks.push_back(proxy);

  CheckResult replay{"ledger_replay", stored.ledger.length() == replayed.size(), 0.0, 0.0};
  if (replay.pass) {
    for (std::size_t s = 0; s < replayed.size(); ++s)
      for (ClientId c = 0; c < m; ++c)
        replay.worst_slack = std::max(
            replay.worst_slack,
            relative_gap(stored.ledger.increments()[s].per_client_delta[c], replayed[s][c]));
    replay.pass = replay.worst_slack <= kReplayTolerance;
  } else {
    replay.worst_slack = std::numeric_limits<double>::infinity();
  }
  checks.push_back(replay);
  checks.push_back(psi_column_check("ledger_psi[train]", stored));
  timer.stop();

  timer.start("contractivity");
  for (ClientId c = 0; c < m; ++c) {
    const ContractivityReport report = contractivity_probe(
        config.model, ex.clients[c], ex.federation.eta, contraction, config.verify.probe_pairs,
        splitmix64(config.federation.seed ^ (0xc0ffeeULL + c)));
    checks.push_back(CheckResult{prefix + "contractivity[client=" + std::to_string(c) + "]",
                                 report.pass, report.worst_slack, report.worst_ratio});
  }
  timer.stop();

  timer.start("audit");
  for (UnlearnMethod method : audited) {
    const std::string tag(to_string(method));
    const std::vector<RequestReport> outcomes = read_outcomes(run_dir / ("outcomes_" + tag + ".json"));
    const fs::path ledger_path = run_dir / ("ledger_" + tag + ".csv");
    if (!fs::exists(ledger_path)) throw MissingArtifactError("missing artifact: " + ledger_path.string());
    std::istringstream in(read_text(ledger_path));
    const LedgerCsv surviving =
        read_ledger_csv(in, m, contraction, ex.federation.local_steps, ex.budget.psi_star);
    checks.push_back(psi_column_check("ledger_psi[" + tag + "]", surviving));
    if (method == UnlearnMethod::Last) continue;

    // Training-segment increments are taken from the replay, not from disk.
    SensitivityLedger audited_ledger = empty_ledger(ex);
    bool prefix_ok = true;
    for (const auto& rec : surviving.ledger.increments()) {
      if (rec.segment == 0) {
        if (rec.position >= replayed.size()) {
          prefix_ok = false;
          audited_ledger.append(0, rec.per_client_delta);
        } else {
          audited_ledger.append(0, replayed[rec.position]);
        }
      } else {
        audited_ledger.append(rec.segment, rec.per_client_delta);
      }
    }

    std::vector<std::size_t> positions;
    for (const auto& r : outcomes) positions.push_back(r.rollback_position.value_or(0));
    const std::vector<std::size_t> effective = effective_positions(positions);
    std::vector<PerturbationRecord> records;
    for (std::size_t u = 0; u < outcomes.size(); ++u)
      records.push_back(PerturbationRecord{outcomes[u].request_index, outcomes[u].targets,
                                           positions[u], effective[u], outcomes[u].psi_at_rollback,
                                           outcomes[u].sigma});

    CheckResult audit{"budget_audit[" + tag + "]", prefix_ok, 0.0, 0.0};
    audit.worst_slack = outcomes.empty() ? 0.0 : -std::numeric_limits<double>::infinity();
    for (const AuditEntry& e : audit_budget(audited_ledger, records, ex.budget.psi_star, kAuditTolerance)) {
      audit.pass = audit.pass && e.pass;
      audit.worst_slack = std::max(audit.worst_slack, e.psi - ex.budget.psi_star);
      if (ex.budget.psi_star > 0.0) audit.tightness = std::max(audit.tightness, e.psi / ex.budget.psi_star);
    }
    checks.push_back(audit);

    CheckResult sigma{"sigma_identity[" + tag + "]", true, 0.0, 0.0};
    for (std::size_t u = 0; u < outcomes.size(); ++u) {
      const auto& r = outcomes[u];
      double gap = relative_gap(r.sigma, noise_std(r.psi_at_rollback, config.budget.epsilon,
                                                   config.budget.delta));
      if (effective[u] == positions[u] && positions[u] <= audited_ledger.length()) {
        double psi = 0.0;
        for (ClientId c : r.targets)
          psi = std::max(psi, psi_trajectory(audited_ledger, c)[positions[u]]);
        gap = std::max(gap, relative_gap(psi, r.psi_at_rollback));
      }
      if (!std::isfinite(gap)) gap = std::numeric_limits<double>::infinity();
      sigma.worst_slack = std::max(sigma.worst_slack, gap);
    }
    sigma.pass = sigma.worst_slack <= kAuditTolerance;
    checks.push_back(sigma);
  }
  timer.stop();

  for (const auto& c : checks)
    if (!c.pass && !c.name.starts_with("diagnostic:")) summary.pass = false;
  write_text(run_dir / "verify_report.json", verification_report_json(checks));
  write_manifest(run_dir / "manifest_verify.json", ex, "verify", {"verify_report.json"}, timer);
  return summary;
}

ReportSummary cmd_report(const fs::path& run_dir) {
  PhaseTimer timer;
  timer.start("prepare");
  const ExperimentConfig config = ExperimentConfig::from_json(read_json(run_dir / "config.json"));
  const Experiment ex = prepare_experiment(config);

  ReportSummary summary;
  summary.out_dir = run_dir / "report";
  for (UnlearnMethod m : kAllMethods) {
    const std::string tag(to_string(m));
    if (fs::exists(run_dir / ("outcomes_" + tag + ".json")) && fs::exists(run_dir / ("model_" + tag + ".ckpt")))
      summary.methods.push_back(m);
  }
  if (summary.methods.empty())
    throw MissingArtifactError("no completed unlearning runs in " + run_dir.string() +
                               " (run `unlearn` first)");
  timer.stop();

  std::vector<std::string> outputs{"report/rounds_to_threshold.csv", "report/retained_loss.csv",
                                   "report/forget_loss.csv", "report/distance_to_scratch.csv"};
  write_manifest(run_dir / "manifest_report.json", ex, "report", outputs, timer);

  timer.start("tables");
  ClientSet forget;
  for (const auto& r : config.requests) forget.insert(r.begin(), r.end());
  ClientSet retained;
  for (ClientId c = 0; c < ex.federation.num_clients(); ++c)
    if (!forget.contains(c)) retained.insert(c);
  const ClientDataset retained_data = pooled(ex.clients, retained);
  const std::optional<ClientDataset> forget_data =
      forget.empty() ? std::nullopt : std::optional<ClientDataset>(pooled(ex.clients, forget));

  std::optional<ModelParams> scratch;
  if (std::find(summary.methods.begin(), summary.methods.end(), UnlearnMethod::Scratch) != summary.methods.end())
    scratch = read_model(ex, run_dir / "model_scratch.ckpt");

  std::string rounds_csv = std::string(kRoundsHeader) + "\n";
  std::string retained_csv = std::string(kRetainedHeader) + "\n";
  std::string forget_csv = std::string(kForgetHeader) + "\n";
  std::string distance_csv = std::string(kDistanceHeader) + "\n";
  for (UnlearnMethod m : summary.methods) {
    const std::string tag(to_string(m));
    const std::vector<RequestReport> outcomes = read_outcomes(run_dir / ("outcomes_" + tag + ".json"));
    const ModelParams model = read_model(ex, run_dir / ("model_" + tag + ".ckpt"));
    std::size_t total = 0;
    bool all_converged = true;
    for (const auto& r : outcomes) {
      total += r.retrain_rounds;
      all_converged = all_converged && r.converged;
    }
    rounds_csv += tag + "," + std::to_string(outcomes.size()) + "," + std::to_string(total) + "," +
                  (all_converged ? "true" : "false") + "\n";
    retained_csv += tag + "," + csv_number(weighted_loss(config.model, ex.federation, model, retained)) +
                    "," + csv_number(evaluation_metric(config.model, retained_data, model)) + "\n";
    if (forget_data) {
      forget_csv += tag + "," + csv_number(weighted_loss(config.model, ex.federation, model, forget)) +
                    "," + csv_number(evaluation_metric(config.model, *forget_data, model)) + "\n";
    } else {
      forget_csv += tag + ",,\n";
    }
    distance_csv += tag + "," + (scratch ? csv_number((model - *scratch).norm()) : std::string()) + "\n";
  }
  write_text(summary.out_dir / "rounds_to_threshold.csv", rounds_csv);
  write_text(summary.out_dir / "retained_loss.csv", retained_csv);
  write_text(summary.out_dir / "forget_loss.csv", forget_csv);
  write_text(summary.out_dir / "distance_to_scratch.csv", distance_csv);
  timer.stop();
  write_manifest(run_dir / "manifest_report.json", ex, "report", outputs, timer);
  return summary;
}

}  // namespace fedunlearn
