#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fedunlearn/commands.hpp"
#include "fedunlearn/errors.hpp"
#include "fedunlearn/json_format.hpp"

namespace fs = std::filesystem;
using namespace fedunlearn;

namespace {

void print_checks(const VerifySummary& summary) {
  for (const auto& c : summary.checks)
    std::printf("%-4s %-32s worst_slack=%s tightness=%s\n", c.pass ? "ok" : "FAIL", c.name.c_str(),
                format_double(c.worst_slack).c_str(), format_double(c.tightness).c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic FedAvg simulator with certified client unlearning"};
  app.set_version_flag("--version", FEDUNLEARN_VERSION);
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir_opt;
  std::string method_name = "sifu";

  auto* train = app.add_subcommand("train", "train the federation and write run artifacts");
  train->add_option("config", config_path, "experiment config (JSON)")->required();
  train->add_option("--run-dir", run_dir_opt, "override the run directory");

  auto* unlearn = app.add_subcommand("unlearn", "process the configured unlearning requests");
  unlearn->add_option("config", config_path, "experiment config (JSON)")->required();
  unlearn->add_option("--method", method_name, "sifu | ifu | scratch | finetune | last")
      ->check(CLI::IsMember({"sifu", "ifu", "scratch", "finetune", "last"}));
  unlearn->add_option("--run-dir", run_dir_opt, "override the run directory");

  auto* verify = app.add_subcommand("verify", "check bounds, ledgers and unlearning budgets");
  verify->add_option("config", config_path, "experiment config (JSON)")->required();
  verify->add_option("--run-dir", run_dir_opt, "override the run directory");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "summarise completed runs as CSV tables");
  report->add_option("run-dir", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (report->parsed()) {
      const ReportSummary summary = cmd_report(report_dir);
      std::printf("report: %zu method(s) -> %s\n", summary.methods.size(), summary.out_dir.string().c_str());
      return kExitOk;
    }
    const ExperimentConfig config = load_config(config_path);
    const fs::path run_dir = run_dir_opt.empty() ? default_run_dir(config) : fs::path(run_dir_opt);
    if (train->parsed()) {
      const TrainSummary summary = cmd_train(config, run_dir);
      std::printf("train: %zu rounds, final loss %s -> %s\n", summary.rounds,
                  format_double(summary.final_loss).c_str(), run_dir.string().c_str());
      return kExitOk;
    }
    if (unlearn->parsed()) {
      const UnlearnSummary summary = cmd_unlearn(config, parse_unlearn_method(method_name), run_dir);
      for (const auto& r : summary.requests)
        std::printf("request %zu: rollback=%s sigma=%s retrain_rounds=%zu converged=%s\n",
                    r.request_index,
                    r.rollback_position ? std::to_string(*r.rollback_position).c_str() : "-",
                    format_double(r.sigma).c_str(), r.retrain_rounds, r.converged ? "yes" : "no");
      return kExitOk;
    }
    const VerifySummary summary = cmd_verify(config, run_dir);
    print_checks(summary);
    std::printf("verify: %s\n", summary.pass ? "pass" : "FAIL");
    return summary.pass ? kExitOk : kExitCheckFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
}
