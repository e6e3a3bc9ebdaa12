#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "fedunlearn/commands.hpp"
#include "fedunlearn/errors.hpp"
#include "fedunlearn/json_format.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using namespace fedunlearn;
using namespace testutil;

namespace {

nlohmann::json small_config(const std::string& name) {
  return nlohmann::json{
      {"name", name},
      {"model", {{"kind", "ridge"}, {"dims", {3}}, {"l2", 0.1}}},
      {"federation", {{"eta", 0.1}, {"local_steps", 2}, {"rounds", 20}, {"seed", 3}}},
      {"data_gen", {{"clients", 4}, {"samples_per_client", 20}, {"feature_dim", 3}, {"seed", 8}}},
      {"budget", {{"epsilon", 1.0}, {"delta", 0.05}, {"sigma", 0.2}}},
      {"requests", {{1}, {2}}},
      {"stopping", {{"loss_threshold", 0.5}, {"max_rounds", 60}}},
      {"verify", {{"probe_pairs", 50}}}};
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
  const fs::path path = dir / (j.at("name").get<std::string>() + ".json");
  std::ofstream(path) << j.dump(2);
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

/// Relative path -> contents for every non-manifest file under `dir`.
std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.starts_with("manifest")) continue;
    out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FEDUNLEARN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool check_passed(const VerifySummary& s, const std::string& name) {
  for (const auto& c : s.checks)
    if (c.name == name) return c.pass;
  FAIL("missing check " << name);
  return false;
}

}  // namespace

TEST_CASE("full pipeline") {
  const fs::path dir = scratch_dir("pipeline");
  const ExperimentConfig cfg = ExperimentConfig::from_json(small_config("pipe"));
  const fs::path run = dir / "run";

  const TrainSummary t = cmd_train(cfg, run);
  CHECK(t.rounds == 20);
  for (const char* f : {"manifest.json", "config.json", "metrics.jsonl", "ledger.csv", "final.ckpt",
                        "checkpoints/round_000000.ckpt", "checkpoints/round_000020.ckpt"})
    CHECK_MESSAGE(fs::exists(run / f), f);
  CHECK(lines(run / "metrics.jsonl").size() == 20);
  CHECK(lines(run / "ledger.csv").size() == 1 + 20 * 4);
  CHECK(ExperimentConfig::from_json(nlohmann::json::parse(slurp(run / "config.json"))) == cfg);
  const auto manifest = nlohmann::json::parse(slurp(run / "manifest.json"));
  CHECK(manifest.at("config_hash") == hex_hash(config_hash(cfg)));
  CHECK(manifest.at("command") == "train");

  for (UnlearnMethod m : kAllMethods) {
    const UnlearnSummary u = cmd_unlearn(cfg, m, run);
    CHECK(u.requests.size() == 2);
    CHECK(fs::exists(run / ("outcomes_" + std::string(to_string(m)) + ".json")));
  }
  const VerifySummary v = cmd_verify(cfg, run);
  CHECK(v.pass);
  CHECK(check_passed(v, "budget_audit[sifu]"));
  CHECK(check_passed(v, "budget_audit[ifu]"));
  CHECK(check_passed(v, "ledger_psi[last]"));
  CHECK(fs::exists(run / "verify_report.json"));

  const ReportSummary r = cmd_report(run);
  CHECK(r.methods.size() == 5);
  const auto rounds = lines(run / "report/rounds_to_threshold.csv");
  REQUIRE(rounds.size() == 6);
  CHECK(rounds[0] == kRoundsHeader);
  CHECK(rounds[1].starts_with("sifu,2,"));
  CHECK(lines(run / "report/retained_loss.csv")[0] == kRetainedHeader);
  CHECK(lines(run / "report/forget_loss.csv")[0] == kForgetHeader);
  const auto dist = lines(run / "report/distance_to_scratch.csv");
  CHECK(dist[0] == kDistanceHeader);
  CHECK(dist[3] == "scratch,0");
}

TEST_CASE("reruns are byte identical apart from manifests") {
  const fs::path dir = scratch_dir("rerun");
  const ExperimentConfig cfg = ExperimentConfig::from_json(small_config("rerun"));
  for (const char* sub : {"a", "b"}) {
    cmd_train(cfg, dir / sub);
    cmd_unlearn(cfg, UnlearnMethod::Sifu, dir / sub);
    cmd_verify(cfg, dir / sub);
    cmd_report(dir / sub);
  }
  const auto a = artifacts(dir / "a");
  const auto b = artifacts(dir / "b");
  CHECK(a.size() >= 10);
  CHECK(a == b);
}

TEST_CASE("training over an existing run directory replaces it") {
  const fs::path dir = scratch_dir("retrain_dir");
  ExperimentConfig cfg = ExperimentConfig::from_json(small_config("again"));
  cmd_train(cfg, dir);
  cmd_unlearn(cfg, UnlearnMethod::Sifu, dir);
  std::ofstream(dir / "notes.txt") << "keep";
  cfg.federation.rounds = 5;
  cmd_train(cfg, dir);
  CHECK_FALSE(fs::exists(dir / "outcomes_sifu.json"));
  CHECK_FALSE(fs::exists(dir / "checkpoints/round_000020.ckpt"));
  CHECK(fs::exists(dir / "notes.txt"));
  CHECK(lines(dir / "metrics.jsonl").size() == 5);
}

TEST_CASE("zero-round training writes only the initial state") {
  const fs::path dir = scratch_dir("zero_rounds");
  nlohmann::json j = small_config("zero");
  j["federation"]["rounds"] = 0;
  const ExperimentConfig cfg = ExperimentConfig::from_json(j);
  cmd_train(cfg, dir);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "config.json"));
  CHECK(fs::exists(dir / "checkpoints/round_000000.ckpt"));
  CHECK_FALSE(fs::exists(dir / "metrics.jsonl"));
  CHECK_FALSE(fs::exists(dir / "ledger.csv"));
  const UnlearnSummary u = cmd_unlearn(cfg, UnlearnMethod::Sifu, dir);
  REQUIRE(u.requests.size() == 2);
  CHECK(*u.requests[0].rollback_position == 0);
  CHECK(u.requests[0].sigma == 0.0);
  CHECK(cmd_verify(cfg, dir).pass);
}

TEST_CASE("an empty request list") {
  const fs::path dir = scratch_dir("no_requests");
  nlohmann::json j = small_config("empty");
  j["requests"] = nlohmann::json::array();
  const ExperimentConfig cfg = ExperimentConfig::from_json(j);
  cmd_train(cfg, dir);
  const UnlearnSummary u = cmd_unlearn(cfg, UnlearnMethod::Sifu, dir);
  CHECK(u.requests.empty());
  CHECK(slurp(dir / "outcomes_sifu.json") == "[]\n");
  CHECK(cmd_verify(cfg, dir).pass);
  cmd_report(dir);
  const auto forget = lines(dir / "report/forget_loss.csv");
  REQUIRE(forget.size() == 2);
  CHECK(forget[1] == "sifu,,");
}

TEST_CASE("a single method produces single-row tables") {
  const fs::path dir = scratch_dir("single_method");
  const ExperimentConfig cfg = ExperimentConfig::from_json(small_config("single"));
  cmd_train(cfg, dir);
  cmd_unlearn(cfg, UnlearnMethod::Finetune, dir);
  const ReportSummary r = cmd_report(dir);
  CHECK(r.methods == std::vector<UnlearnMethod>{UnlearnMethod::Finetune});
  const auto dist = lines(dir / "report/distance_to_scratch.csv");
  REQUIRE(dist.size() == 2);
  CHECK(dist[1] == "finetune,");
}

TEST_CASE("ifu refuses multi-client requests") {
  const fs::path dir = scratch_dir("ifu_sets");
  nlohmann::json j = small_config("ifu_sets");
  j["requests"] = {{0, 1}};
  const ExperimentConfig cfg = ExperimentConfig::from_json(j);
  cmd_train(cfg, dir);
  CHECK_THROWS_AS(cmd_unlearn(cfg, UnlearnMethod::Ifu, dir), InvalidRequestError);
  CHECK_NOTHROW(cmd_unlearn(cfg, UnlearnMethod::Sifu, dir));
}

TEST_CASE("missing artifacts") {
  const fs::path dir = scratch_dir("missing");
  const ExperimentConfig cfg = ExperimentConfig::from_json(small_config("missing"));
  CHECK_THROWS_AS(cmd_unlearn(cfg, UnlearnMethod::Sifu, dir / "nowhere"), MissingArtifactError);
  CHECK_THROWS_AS(cmd_verify(cfg, dir / "nowhere"), MissingArtifactError);
  cmd_train(cfg, dir);
  CHECK_THROWS_AS(cmd_report(dir), MissingArtifactError);
  fs::remove(dir / "final.ckpt");
  CHECK_THROWS_AS(cmd_unlearn(cfg, UnlearnMethod::Sifu, dir), MissingArtifactError);
}

TEST_CASE("a checkpoint from another config is rejected") {
  const fs::path dir = scratch_dir("foreign");
  ExperimentConfig cfg = ExperimentConfig::from_json(small_config("foreign"));
  cmd_train(cfg, dir);
  cfg.budget.sigma = 0.3;
  CHECK_THROWS(cmd_unlearn(cfg, UnlearnMethod::Sifu, dir));
}

TEST_CASE("a tampered training ledger is caught by verify") {
  const fs::path dir = scratch_dir("tamper");
  nlohmann::json j = small_config("tamper");
  j["requests"] = {{1}};

  // Place the threshold between positions 10 and 11 of client 1's trajectory.
  const Experiment probe = prepare_experiment(ExperimentConfig::from_json(j));
  UnlearningState state = make_state(probe, 1e9);
  state.train(20);
  const auto psi = psi_trajectory(state.ledger(), 1);
  for (std::size_t n = 1; n < psi.size(); ++n) REQUIRE(psi[n] > psi[n - 1]);
  const double target = 0.5 * (psi[10] + psi[11]);
  j["budget"]["sigma"] = noise_std(target, 1.0, 0.05);
  const ExperimentConfig cfg = ExperimentConfig::from_json(j);
  const fs::path cfg_path = write_config(dir, j);
  const fs::path run = dir / "run";

  cmd_train(cfg, run);
  const auto honest = cmd_unlearn(cfg, UnlearnMethod::Sifu, run);
  CHECK(*honest.requests[0].rollback_position == 10);
  CHECK(cmd_verify(cfg, run).pass);
  CHECK(run_cli("verify " + cfg_path.string() + " --run-dir " + run.string()) == kExitOk);

  // Halve every delta and psi: internally consistent, but understated.
  std::ostringstream tampered;
  const auto rows = lines(run / "ledger.csv");
  tampered << rows[0] << "\n";
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<std::string> f;
    std::istringstream in(rows[i]);
    for (std::string cell; std::getline(in, cell, ',');) f.push_back(cell);
    REQUIRE(f.size() == 5);
    tampered << f[0] << "," << f[1] << "," << f[2] << "," << format_double(0.5 * std::stod(f[3])) << ","
             << format_double(0.5 * std::stod(f[4])) << "\n";
  }
  std::ofstream(run / "ledger.csv") << tampered.str();

  const auto cheated = cmd_unlearn(cfg, UnlearnMethod::Sifu, run);
  CHECK(*cheated.requests[0].rollback_position > 10);
  const VerifySummary v = cmd_verify(cfg, run);
  CHECK_FALSE(v.pass);
  CHECK_FALSE(check_passed(v, "ledger_replay"));
  CHECK_FALSE(check_passed(v, "budget_audit[sifu]"));
  CHECK(run_cli("verify " + cfg_path.string() + " --run-dir " + run.string()) == kExitCheckFailure);
}

TEST_CASE("command-line exit codes") {
  const fs::path dir = scratch_dir("exit_codes");
  const fs::path cfg = write_config(dir, small_config("codes"));
  const std::string run = " --run-dir " + (dir / "run").string();
  CHECK(run_cli("") == kExitUsage);
  CHECK(run_cli("train") == kExitUsage);
  CHECK(run_cli("train /nonexistent.json") == kExitUsage);
  CHECK(run_cli("unlearn " + cfg.string() + run) == kExitUsage);
  CHECK(run_cli("report " + (dir / "run").string()) == kExitUsage);
  CHECK(run_cli("train " + cfg.string() + run) == kExitOk);
  CHECK(run_cli("unlearn " + cfg.string() + " --method bogus" + run) == kExitUsage);
  CHECK(run_cli("unlearn " + cfg.string() + " --method scratch" + run) == kExitOk);
  CHECK(run_cli("verify " + cfg.string() + run) == kExitOk);
  CHECK(run_cli("report " + (dir / "run").string()) == kExitOk);
  CHECK(fs::exists(dir / "run/report/rounds_to_threshold.csv"));
}

TEST_CASE("default run directory honours the output root") {
  ExperimentConfig cfg;
  cfg.name = "named";
  ::setenv(kOutputRootVar, "/tmp/outroot", 1);
  CHECK(default_run_dir(cfg) == fs::path("/tmp/outroot/named"));
  ::unsetenv(kOutputRootVar);
  CHECK(default_run_dir(cfg) == fs::path("runs/named"));
  CHECK(parse_unlearn_method("finetune") == UnlearnMethod::Finetune);
  CHECK_THROWS_AS(parse_unlearn_method("nope"), ConfigError);
  CHECK(exit_code_for(MissingArtifactError("x")) == kExitUsage);
  CHECK(exit_code_for(ConfigError("x")) == kExitUsage);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitRuntime);
}
