#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fedunlearn/commands.hpp"
#include "fedunlearn/errors.hpp"
#include "fedunlearn/experiment.hpp"
#include "fedunlearn/fed_engine.hpp"
#include "fedunlearn/models.hpp"
#include "fedunlearn/oracle.hpp"
#include "fedunlearn/sensitivity.hpp"
#include "fedunlearn/unlearn.hpp"

namespace py = pybind11;
using namespace fedunlearn;

PYBIND11_MODULE(_core, m) {
  m.doc() = "FedAvg simulation, bounded sensitivity and certified unlearning";
  m.attr("__version__") = FEDUNLEARN_VERSION;

  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", PyExc_FileNotFoundError);
  py::register_exception<MissingCheckpointError>(m, "MissingCheckpointError", PyExc_LookupError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  py::register_exception<CalibrationError>(m, "CalibrationError", PyExc_ValueError);
  py::register_exception<InvalidRequestError>(m, "InvalidRequestError", PyExc_ValueError);
  py::register_exception<EmptyFederationError>(m, "EmptyFederationError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  // models
  py::enum_<ModelKind>(m, "ModelKind")
      .value("Ridge", ModelKind::Ridge)
      .value("Logistic", ModelKind::Logistic)
      .value("TinyMLP", ModelKind::TinyMLP);
  py::enum_<Regime>(m, "Regime")
      .value("Smooth", Regime::Smooth)
      .value("Convex", Regime::Convex)
      .value("StronglyConvex", Regime::StronglyConvex);

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init([](ModelKind kind, std::vector<std::size_t> dims, double l2, bool bias) {
             ModelSpec s{kind, std::move(dims), l2, bias};
             s.validate();
             return s;
           }),
           py::arg("kind"), py::arg("dims"), py::arg("l2") = 0.0, py::arg("bias") = false)
      .def_readwrite("kind", &ModelSpec::kind)
      .def_readwrite("dims", &ModelSpec::dims)
      .def_readwrite("l2", &ModelSpec::l2)
      .def_readwrite("bias", &ModelSpec::bias)
      .def_property_readonly("parameter_count", &ModelSpec::parameter_count)
      .def(py::self == py::self);

  py::class_<ClientDataset>(m, "ClientDataset")
      .def(py::init([](Eigen::MatrixXd x, Eigen::VectorXd y) {
             ClientDataset d{std::move(x), std::move(y)};
             d.validate();
             return d;
           }),
           py::arg("features"), py::arg("targets"))
      .def_readwrite("features", &ClientDataset::features)
      .def_readwrite("targets", &ClientDataset::targets)
      .def_property_readonly("sample_count", &ClientDataset::sample_count);

  py::class_<RegimeConstants>(m, "RegimeConstants")
      .def_readonly("regime", &RegimeConstants::regime)
      .def_readonly("beta", &RegimeConstants::beta)
      .def_readonly("mu", &RegimeConstants::mu)
      .def_readonly("l2", &RegimeConstants::lambda);

  m.def("loss", &loss, py::arg("spec"), py::arg("data"), py::arg("theta"));
  m.def("grad", &grad, py::arg("spec"), py::arg("data"), py::arg("theta"));
  m.def("evaluation_metric", &evaluation_metric, py::arg("spec"), py::arg("data"), py::arg("theta"));
  m.def(
      "regime_constants",
      [](const ModelSpec& spec, const std::vector<ClientDataset>& clients, std::uint64_t seed) {
        return regime_constants(spec, clients, seed);
      },
      py::arg("spec"), py::arg("clients"), py::arg("probe_seed") = 0);

  // fed-engine
  py::enum_<InitKind>(m, "InitKind").value("Normal", InitKind::Normal).value("Zeros", InitKind::Zeros);

  py::class_<FederationConfig>(m, "FederationConfig")
      .def(py::init([](std::vector<ClientDataset> clients, std::optional<Eigen::VectorXd> weights,
                       double eta, std::size_t local_steps, std::size_t rounds, std::uint64_t seed) {
             FederationConfig c;
             c.weights = weights ? *weights : proportional_weights(clients);
             c.clients = std::move(clients);
             c.eta = eta;
             c.local_steps = local_steps;
             c.rounds = rounds;
             c.seed = seed;
             c.validate();
             return c;
           }),
           py::arg("clients"), py::arg("weights") = py::none(), py::arg("eta") = 0.1,
           py::arg("local_steps") = 1, py::arg("rounds") = 0, py::arg("seed") = 0)
      .def_readonly("clients", &FederationConfig::clients)
      .def_readonly("weights", &FederationConfig::weights)
      .def_readwrite("eta", &FederationConfig::eta)
      .def_readwrite("local_steps", &FederationConfig::local_steps)
      .def_readwrite("rounds", &FederationConfig::rounds)
      .def_readwrite("seed", &FederationConfig::seed)
      .def_property_readonly("num_clients", &FederationConfig::num_clients)
      .def("all_clients", &FederationConfig::all_clients);

  py::class_<RoundRecord>(m, "RoundRecord")
      .def_readonly("round_index", &RoundRecord::round_index)
      .def_readonly("global_before", &RoundRecord::global_before)
      .def_readonly("active", &RoundRecord::active)
      .def_readonly("client_models", &RoundRecord::client_models)
      .def_readonly("weights", &RoundRecord::weights)
      .def_readonly("global_after", &RoundRecord::global_after);

  m.def("proportional_weights",
        [](const std::vector<ClientDataset>& clients) { return proportional_weights(clients); });
  m.def("uniform_weights", &uniform_weights, py::arg("num_clients"));
  m.def("local_update", &local_update, py::arg("spec"), py::arg("data"), py::arg("theta"),
        py::arg("eta"), py::arg("steps"));
  m.def(
      "aggregate",
      [](const std::vector<ModelParams>& models, const Eigen::VectorXd& w) { return aggregate(models, w); },
      py::arg("models"), py::arg("weights"));
  m.def("run_fedavg", &run_fedavg, py::arg("config"), py::arg("spec"), py::arg("theta0"),
        py::arg("active"));
  m.def("weighted_loss", &weighted_loss, py::arg("spec"), py::arg("config"), py::arg("theta"),
        py::arg("active"));
  m.def("initial_model", &initial_model, py::arg("spec"), py::arg("init"), py::arg("seed"));

  // sensitivity
  m.def("contraction_factor", &contraction_factor, py::arg("regime"), py::arg("eta"));
  m.def("client_increment_fast", py::overload_cast<const RoundRecord&, ClientId>(&client_increment_fast),
        py::arg("round"), py::arg("client"));
  m.def("client_increment_direct",
        py::overload_cast<const RoundRecord&, ClientId>(&client_increment_direct), py::arg("round"),
        py::arg("client"));
  m.def("round_increments", &round_increments, py::arg("round"), py::arg("num_clients"));
  m.def("noise_std", &noise_std, py::arg("psi"), py::arg("epsilon"), py::arg("delta"));
  m.def("psi_threshold", &psi_threshold, py::arg("epsilon"), py::arg("delta"), py::arg("sigma"));

  py::class_<SensitivityLedger>(m, "SensitivityLedger")
      .def(py::init<std::size_t, double, std::size_t, std::optional<double>>(), py::arg("num_clients"),
           py::arg("contraction"), py::arg("local_steps"), py::arg("psi_star") = py::none())
      .def("append", &SensitivityLedger::append, py::arg("segment"), py::arg("deltas"))
      .def("truncate", &SensitivityLedger::truncate, py::arg("n"))
      .def("current_psi", &SensitivityLedger::current_psi, py::arg("client"))
      .def("rollback_position", &SensitivityLedger::rollback_position, py::arg("client"))
      .def_property_readonly("length", &SensitivityLedger::length)
      .def_property_readonly("contraction", &SensitivityLedger::contraction)
      .def_property_readonly("num_clients", &SensitivityLedger::num_clients);
  m.def("bounded_sensitivity", &bounded_sensitivity, py::arg("ledger"), py::arg("n"), py::arg("client"));
  m.def("psi_trajectory", &psi_trajectory, py::arg("ledger"), py::arg("client"));
  m.def("rollback_index", &rollback_index, py::arg("ledger"), py::arg("clients"), py::arg("psi_star"));

  py::class_<NoiseBudget>(m, "NoiseBudget")
      .def_static("from_target", &NoiseBudget::from_target, py::arg("epsilon"), py::arg("delta"),
                  py::arg("sigma"))
      .def_readonly("epsilon", &NoiseBudget::epsilon)
      .def_readonly("delta", &NoiseBudget::delta)
      .def_readonly("sigma", &NoiseBudget::sigma)
      .def_readonly("psi_star", &NoiseBudget::psi_star);

  // unlearn
  py::class_<StoppingRule>(m, "StoppingRule")
      .def(py::init([](double threshold, std::size_t min_rounds, std::size_t max_rounds) {
             StoppingRule r{threshold, min_rounds, max_rounds};
             r.validate();
             return r;
           }),
           py::arg("loss_threshold") = std::numeric_limits<double>::infinity(),
           py::arg("min_rounds") = 0, py::arg("max_rounds") = 100)
      .def_readwrite("loss_threshold", &StoppingRule::loss_threshold)
      .def_readwrite("min_rounds", &StoppingRule::min_rounds)
      .def_readwrite("max_rounds", &StoppingRule::max_rounds);

  py::class_<RetrainResult>(m, "RetrainResult")
      .def_readonly("model", &RetrainResult::model)
      .def_readonly("rounds", &RetrainResult::rounds)
      .def_readonly("converged", &RetrainResult::converged)
      .def_readonly("final_loss", &RetrainResult::final_loss)
      .def_readonly("loss_trace", &RetrainResult::loss_trace);

  py::class_<UnlearningOutcome>(m, "UnlearningOutcome")
      .def_readonly("request_index", &UnlearningOutcome::request_index)
      .def_readonly("targets", &UnlearningOutcome::targets)
      .def_readonly("rollback_position", &UnlearningOutcome::rollback_position)
      .def_readonly("psi_at_rollback", &UnlearningOutcome::psi_at_rollback)
      .def_readonly("noise_sigma", &UnlearningOutcome::noise_sigma)
      .def_readonly("retrain_rounds", &UnlearningOutcome::retrain_rounds)
      .def_readonly("final_model", &UnlearningOutcome::final_model)
      .def_readonly("final_retained_loss", &UnlearningOutcome::final_retained_loss)
      .def_readonly("converged", &UnlearningOutcome::converged);

  py::class_<PerturbationRecord>(m, "PerturbationRecord")
      .def_readonly("request_index", &PerturbationRecord::request_index)
      .def_readonly("targets", &PerturbationRecord::targets)
      .def_readonly("position", &PerturbationRecord::position)
      .def_readonly("effective_position", &PerturbationRecord::effective_position)
      .def_readonly("psi", &PerturbationRecord::psi)
      .def_readonly("sigma", &PerturbationRecord::sigma);

  py::class_<AuditEntry>(m, "AuditEntry")
      .def_readonly("request_index", &AuditEntry::request_index)
      .def_readonly("client", &AuditEntry::client)
      .def_readonly("position", &AuditEntry::position)
      .def_readonly("psi", &AuditEntry::psi)
      .def_readonly("passed", &AuditEntry::pass);

  py::enum_<CheckpointMode>(m, "CheckpointMode")
      .value("Full", CheckpointMode::Full)
      .value("Frugal", CheckpointMode::Frugal);

  py::class_<UnlearningState>(m, "UnlearningState")
      .def(py::init<ModelSpec, FederationConfig, RegimeConstants, NoiseBudget, ModelParams,
                    CheckpointMode, std::uint64_t>(),
           py::arg("spec"), py::arg("federation"), py::arg("regime"), py::arg("budget"),
           py::arg("theta0"), py::arg("mode") = CheckpointMode::Full, py::arg("seed") = 0)
      .def("train", &UnlearningState::train, py::arg("rounds"), py::arg("observer") = RoundObserver{})
      .def_property_readonly("ledger", &UnlearningState::ledger, py::return_value_policy::reference_internal)
      .def_property_readonly("current_model", &UnlearningState::current_model)
      .def_property_readonly("remaining", &UnlearningState::remaining)
      .def_property_readonly("processed", &UnlearningState::processed)
      .def_property_readonly("contraction", &UnlearningState::contraction)
      .def_property_readonly("history_size", [](const UnlearningState& s) { return s.history().size(); })
      .def("model_at", [](const UnlearningState& s, std::size_t p) { return s.history().at(p); })
      .def_property_readonly("perturbations", &UnlearningState::perturbations)
      .def("rollback_checkpoint", &UnlearningState::rollback_checkpoint, py::arg("client"));

  m.def(
      "sifu",
      [](UnlearningState& s, std::size_t u, const ClientSet& targets, const StoppingRule& rule) {
        return sifu(s, UnlearningRequest{u, targets}, rule);
      },
      py::arg("state"), py::arg("request_index"), py::arg("targets"), py::arg("rule"));
  m.def(
      "ifu",
      [](UnlearningState& s, ClientId c, const StoppingRule& rule) { return ifu(s, c, rule); },
      py::arg("state"), py::arg("client"), py::arg("rule"));
  m.def(
      "baseline_last",
      [](UnlearningState& s, std::size_t u, const ClientSet& targets, const StoppingRule& rule) {
        return baseline_last(s, UnlearningRequest{u, targets}, rule);
      },
      py::arg("state"), py::arg("request_index"), py::arg("targets"), py::arg("rule"));
  m.def("baseline_scratch", &baseline_scratch, py::arg("config"), py::arg("spec"), py::arg("theta0"),
        py::arg("remaining"), py::arg("rule"));
  m.def("baseline_finetune", &baseline_finetune, py::arg("config"), py::arg("spec"),
        py::arg("final_model"), py::arg("remaining"), py::arg("rule"));
  m.def(
      "audit_state",
      [](const UnlearningState& s, double tol) {
        return audit_budget(s.ledger(), s.perturbations(), s.budget().psi_star, tol);
      },
      py::arg("state"), py::arg("tol") = 1e-9);

  // oracle
  py::class_<SensitivityTrace>(m, "SensitivityTrace")
      .def_readonly("client", &SensitivityTrace::client)
      .def_readonly("alpha", &SensitivityTrace::alpha)
      .def_readonly("psi", &SensitivityTrace::psi)
      .def_readonly("capped_at", &SensitivityTrace::capped_at);
  py::class_<BoundReport>(m, "BoundReport")
      .def_readonly("passed", &BoundReport::pass)
      .def_readonly("first_violation", &BoundReport::first_violation)
      .def_readonly("worst_slack", &BoundReport::worst_slack)
      .def_readonly("tightness", &BoundReport::tightness);
  m.def("empirical_sensitivity", &empirical_sensitivity, py::arg("config"), py::arg("spec"),
        py::arg("theta0"), py::arg("client"), py::arg("contraction"));
  m.def("check_bound", &check_bound, py::arg("trace"), py::arg("tol") = 1e-8);
  m.def("reference_gd", &reference_gd, py::arg("spec"), py::arg("data"), py::arg("theta0"),
        py::arg("eta"), py::arg("steps"));
  m.def(
      "ridge_optimum",
      [](const ModelSpec& spec, const std::vector<ClientDataset>& clients, const Eigen::VectorXd& w) {
        return ridge_optimum(spec, clients, w);
      },
      py::arg("spec"), py::arg("clients"), py::arg("weights"));

  // experiments and commands
  py::class_<DataRecipe>(m, "DataRecipe")
      .def(py::init([](std::size_t clients, std::size_t samples, std::size_t dim, double h,
                       double noise, std::uint64_t seed) {
             return DataRecipe{clients, samples, dim, h, noise, seed};
           }),
           py::arg("clients") = 5, py::arg("samples_per_client") = 20, py::arg("feature_dim") = 5,
           py::arg("heterogeneity") = 0.5, py::arg("noise") = 0.1, py::arg("seed") = 0);
  m.def("generate_data", &generate_data, py::arg("recipe"), py::arg("kind"));

  m.def("train_run", [](const std::string& config, const std::filesystem::path& run_dir) {
    return cmd_train(load_config(config), run_dir).rounds;
  }, py::arg("config"), py::arg("run_dir"));
  m.def("unlearn_run", [](const std::string& config, const std::string& method,
                          const std::filesystem::path& run_dir) {
    const UnlearnSummary s = cmd_unlearn(load_config(config), parse_unlearn_method(method), run_dir);
    py::list out;
    for (const auto& r : s.requests) {
      py::dict d;
      d["request_index"] = r.request_index;
      d["targets"] = r.targets;
      d["rollback_position"] = r.rollback_position;
      d["sigma"] = r.sigma;
      d["retrain_rounds"] = r.retrain_rounds;
      d["converged"] = r.converged;
      out.append(d);
    }
    return out;
  }, py::arg("config"), py::arg("method"), py::arg("run_dir"));
  m.def("verify_run", [](const std::string& config, const std::filesystem::path& run_dir) {
    const VerifySummary s = cmd_verify(load_config(config), run_dir);
    py::dict checks;
    for (const auto& c : s.checks) checks[py::str(c.name)] = c.pass;
    return py::make_tuple(s.pass, checks);
  }, py::arg("config"), py::arg("run_dir"));
  m.def("report_run", [](const std::filesystem::path& run_dir) {
    std::vector<std::string> names;
    for (UnlearnMethod meth : cmd_report(run_dir).methods) names.emplace_back(to_string(meth));
    return names;
  }, py::arg("run_dir"));
}
