#pragma once

#include <array>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedunlearn/experiment.hpp"
#include "fedunlearn/oracle.hpp"
#include "fedunlearn/unlearn.hpp"

namespace fedunlearn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Output root override; run directories are <root>/<config name>.
inline constexpr const char* kOutputRootVar = "FEDUNLEARN_OUTPUT_ROOT";

enum class UnlearnMethod { Sifu, Ifu, Scratch, Finetune, Last };

inline constexpr std::array<UnlearnMethod, 5> kAllMethods = {
    UnlearnMethod::Sifu, UnlearnMethod::Ifu, UnlearnMethod::Scratch, UnlearnMethod::Finetune,
    UnlearnMethod::Last};

std::string_view to_string(UnlearnMethod method);
UnlearnMethod parse_unlearn_method(std::string_view name);

/// Report table headers.
inline constexpr std::string_view kRoundsHeader = "method,requests,total_retrain_rounds,all_converged";
inline constexpr std::string_view kRetainedHeader = "method,retained_loss,retained_metric";
inline constexpr std::string_view kForgetHeader = "method,forget_loss,forget_metric";
inline constexpr std::string_view kDistanceHeader = "method,distance_to_scratch";

std::filesystem::path output_root();
std::filesystem::path default_run_dir(const ExperimentConfig& config);

/// Maps an exception escaping a command to the CLI exit status.
int exit_code_for(const std::exception& e);

struct TrainSummary {
  std::filesystem::path run_dir;
  std::size_t rounds = 0;
  double final_loss = 0.0;
};

/// Trains the federation and writes manifest.json, config.json, metrics.jsonl,
/// ledger.csv, checkpoints/round_NNNNNN.ckpt every checkpoint_interval
/// positions, final.ckpt and rollback/client_NNN.ckpt.
TrainSummary cmd_train(const ExperimentConfig& config, const std::filesystem::path& run_dir);

struct RequestReport {
  std::size_t request_index = 0;
  ClientSet targets;
  std::optional<std::size_t> rollback_position;  // unset for scratch and finetune
  double psi_at_rollback = 0.0;
  double sigma = 0.0;
  std::size_t retrain_rounds = 0;
  double final_retained_loss = 0.0;
  bool converged = false;
};

struct UnlearnSummary {
  std::filesystem::path run_dir;
  UnlearnMethod method = UnlearnMethod::Sifu;
  std::vector<RequestReport> requests;
  ModelParams final_model;
};

/// Processes config.requests in order with `method`. Writes outcomes_<m>.json,
/// retrain_<m>.jsonl, model_<m>.ckpt and, for history-based methods, ledger_<m>.csv.
UnlearnSummary cmd_unlearn(const ExperimentConfig& config, UnlearnMethod method,
                           const std::filesystem::path& run_dir);

struct VerifySummary {
  std::vector<CheckResult> checks;
  bool pass = true;  // checks named "diagnostic:..." do not count
};

/// Bound, proxy, contractivity and ledger checks plus the budget re-audit of
/// completed sifu/ifu runs. Writes verify_report.json.
VerifySummary cmd_verify(const ExperimentConfig& config, const std::filesystem::path& run_dir);

struct ReportSummary {
  std::vector<UnlearnMethod> methods;
  std::filesystem::path out_dir;
};

/// Writes report/{rounds_to_threshold,retained_loss,forget_loss,distance_to_scratch}.csv.
ReportSummary cmd_report(const std::filesystem::path& run_dir);

/// Rebuilds the post-training state (sparse history + ledger) from a run directory.
UnlearningState load_training_state(const Experiment& experiment,
                                    const std::filesystem::path& run_dir);

}  // namespace fedunlearn
