#include "fedunlearn/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fedunlearn/checkpoint.hpp"
#include "fedunlearn/errors.hpp"
#include "fedunlearn/json_format.hpp"
#include "fedunlearn/rng.hpp"

namespace fedunlearn {

using nlohmann::json;

std::vector<ClientDataset> generate_data(const DataRecipe& recipe, ModelKind kind) {
  if (recipe.clients < 2) throw ConfigError("data_gen.clients must be >= 2");
  if (recipe.samples_per_client < 1) throw ConfigError("data_gen.samples_per_client must be >= 1");
  if (recipe.feature_dim < 1) throw ConfigError("data_gen.feature_dim must be >= 1");
  if (!(recipe.heterogeneity >= 0.0) || !(recipe.noise >= 0.0))
    throw ConfigError("data_gen.heterogeneity and data_gen.noise must be >= 0");

  const auto d = static_cast<Eigen::Index>(recipe.feature_dim);
  const auto n = static_cast<Eigen::Index>(recipe.samples_per_client);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  auto shared = derived_stream(recipe.seed, {0xda7aULL});
  Eigen::VectorXd truth(d);
  for (Eigen::Index j = 0; j < d; ++j) truth(j) = normal(shared);

  std::vector<ClientDataset> clients;
  clients.reserve(recipe.clients);
  for (std::size_t i = 0; i < recipe.clients; ++i) {
    // Every draw happens regardless of the knobs, so the knobs only rescale.
    auto rng = derived_stream(recipe.seed, {0xc11eULL, i});
    Eigen::VectorXd shift(d);
    for (Eigen::Index j = 0; j < d; ++j) shift(j) = normal(rng);
    ClientDataset data;
    data.features.resize(n, d);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index j = 0; j < d; ++j) data.features(r, j) = normal(rng);
    Eigen::VectorXd eps(n), u(n);
    for (Eigen::Index r = 0; r < n; ++r) eps(r) = normal(rng);
    for (Eigen::Index r = 0; r < n; ++r) u(r) = uniform(rng);

    const Eigen::VectorXd w = truth + recipe.heterogeneity * shift;
    const Eigen::VectorXd z = data.features * w;
    if (kind == ModelKind::Logistic) {
      data.targets.resize(n);
      for (Eigen::Index r = 0; r < n; ++r) data.targets(r) = u(r) < 1.0 / (1.0 + std::exp(-z(r))) ? 1.0 : 0.0;
    } else {
      data.targets = z + recipe.noise * eps;
    }
    clients.push_back(std::move(data));
  }
  return clients;
}

namespace {

void require_object(const json& j, const std::string& ctx, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(ctx + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.contains(it.key())) throw ConfigError("unknown key '" + ctx + "." + it.key() + "'");
}

template <typename T>
T get_field(const json& j, const std::string& key, const std::string& ctx) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad or missing field '" + ctx + "." + key + "': " + e.what());
  }
}

template <typename T>
void get_optional(const json& j, const std::string& key, const std::string& ctx, T& out) {
  if (j.contains(key)) out = get_field<T>(j, key, ctx);
}

std::string_view to_string(CheckpointMode mode) {
  return mode == CheckpointMode::Full ? "full" : "frugal";
}

}  // namespace

json ExperimentConfig::to_json() const {
  json j;
  j["name"] = name;
  j["model"] = {{"kind", std::string(fedunlearn::to_string(model.kind))},
                {"dims", model.dims},
                {"l2", model.l2},
                {"bias", model.bias}};
  json fed = {{"local_steps", federation.local_steps},
              {"rounds", federation.rounds},
              {"seed", federation.seed},
              {"init", federation.init == InitKind::Zeros ? "zeros" : "normal"},
              {"batch_size", federation.batch_size},
              {"parallel_clients", federation.parallel_clients}};
  fed["eta"] = federation.eta ? json(*federation.eta) : json("auto");
  if (federation.weights == "explicit") {
    fed["weights"] = federation.explicit_weights;
  } else {
    fed["weights"] = federation.weights;
  }
  j["federation"] = fed;
  j["data_gen"] = {{"clients", data_gen.clients},
                   {"samples_per_client", data_gen.samples_per_client},
                   {"feature_dim", data_gen.feature_dim},
                   {"heterogeneity", data_gen.heterogeneity},
                   {"noise", data_gen.noise},
                   {"seed", data_gen.seed}};
  j["budget"] = {{"epsilon", budget.epsilon},
                 {"delta", budget.delta},
                 {"sigma", budget.sigma},
                 {"psi_star", psi_threshold(budget.epsilon, budget.delta, budget.sigma)}};
  j["checkpoint_interval"] = checkpoint_interval;
  j["checkpoint_mode"] = std::string(to_string(checkpoint_mode));
  json reqs = json::array();
  for (const auto& r : requests) reqs.push_back(std::vector<ClientId>(r.begin(), r.end()));
  j["requests"] = reqs;
  j["stopping"] = {{"min_rounds", stopping.min_rounds}, {"max_rounds", stopping.max_rounds}};
  j["stopping"]["loss_threshold"] =
      std::isfinite(stopping.loss_threshold) ? json(stopping.loss_threshold) : json(nullptr);
  j["verify"] = {{"clients", verify.clients},
                 {"tolerance", verify.tolerance},
                 {"probe_pairs", verify.probe_pairs}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  require_object(j, "config",
                 {"name", "model", "federation", "data_gen", "budget", "checkpoint_interval",
                  "checkpoint_mode", "requests", "stopping", "verify"});
  ExperimentConfig cfg;
  get_optional(j, "name", "config", cfg.name);

  const json& m = j.contains("model") ? j.at("model") : throw ConfigError("missing 'model'");
  require_object(m, "model", {"kind", "dims", "l2", "bias"});
  try {
    cfg.model.kind = parse_model_kind(get_field<std::string>(m, "kind", "model"));
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  cfg.model.dims = get_field<std::vector<std::size_t>>(m, "dims", "model");
  get_optional(m, "l2", "model", cfg.model.l2);
  get_optional(m, "bias", "model", cfg.model.bias);

  if (j.contains("federation")) {
    const json& f = j.at("federation");
    require_object(f, "federation",
                   {"eta", "local_steps", "rounds", "seed", "init", "weights", "batch_size",
                    "parallel_clients"});
    if (f.contains("eta")) {
      if (f.at("eta").is_string()) {
        if (f.at("eta").get<std::string>() != "auto") throw ConfigError("federation.eta must be a number or \"auto\"");
      } else {
        cfg.federation.eta = get_field<double>(f, "eta", "federation");
      }
    }
    get_optional(f, "local_steps", "federation", cfg.federation.local_steps);
    get_optional(f, "rounds", "federation", cfg.federation.rounds);
    get_optional(f, "seed", "federation", cfg.federation.seed);
    if (f.contains("init")) {
      const auto init = get_field<std::string>(f, "init", "federation");
      if (init == "zeros") cfg.federation.init = InitKind::Zeros;
      else if (init == "normal") cfg.federation.init = InitKind::Normal;
      else throw ConfigError("federation.init must be \"normal\" or \"zeros\"");
    }
    if (f.contains("weights")) {
      if (f.at("weights").is_array()) {
        cfg.federation.weights = "explicit";
        cfg.federation.explicit_weights = get_field<std::vector<double>>(f, "weights", "federation");
      } else {
        cfg.federation.weights = get_field<std::string>(f, "weights", "federation");
      }
    }
    get_optional(f, "batch_size", "federation", cfg.federation.batch_size);
    get_optional(f, "parallel_clients", "federation", cfg.federation.parallel_clients);
  }

  if (j.contains("data_gen")) {
    const json& d = j.at("data_gen");
    require_object(d, "data_gen",
                   {"clients", "samples_per_client", "feature_dim", "heterogeneity", "noise", "seed"});
    get_optional(d, "clients", "data_gen", cfg.data_gen.clients);
    get_optional(d, "samples_per_client", "data_gen", cfg.data_gen.samples_per_client);
    get_optional(d, "feature_dim", "data_gen", cfg.data_gen.feature_dim);
    get_optional(d, "heterogeneity", "data_gen", cfg.data_gen.heterogeneity);
    get_optional(d, "noise", "data_gen", cfg.data_gen.noise);
    get_optional(d, "seed", "data_gen", cfg.data_gen.seed);
  }

  std::optional<double> stored_psi_star;
  if (j.contains("budget")) {
    const json& b = j.at("budget");
    require_object(b, "budget", {"epsilon", "delta", "sigma", "psi_star"});
    get_optional(b, "epsilon", "budget", cfg.budget.epsilon);
    get_optional(b, "delta", "budget", cfg.budget.delta);
    get_optional(b, "sigma", "budget", cfg.budget.sigma);
    if (b.contains("psi_star")) stored_psi_star = get_field<double>(b, "psi_star", "budget");
  }

  get_optional(j, "checkpoint_interval", "config", cfg.checkpoint_interval);
  if (j.contains("checkpoint_mode")) {
    const auto mode = get_field<std::string>(j, "checkpoint_mode", "config");
    if (mode == "full") cfg.checkpoint_mode = CheckpointMode::Full;
    else if (mode == "frugal") cfg.checkpoint_mode = CheckpointMode::Frugal;
    else throw ConfigError("checkpoint_mode must be \"full\" or \"frugal\"");
  }

  if (j.contains("requests")) {
    for (const auto& r : get_field<std::vector<std::vector<ClientId>>>(j, "requests", "config")) {
      const ClientSet set(r.begin(), r.end());
      if (set.size() != r.size()) throw ConfigError("request lists a client twice");
      cfg.requests.push_back(set);
    }
  }

  if (j.contains("stopping")) {
    const json& s = j.at("stopping");
    require_object(s, "stopping", {"loss_threshold", "min_rounds", "max_rounds"});
    if (s.contains("loss_threshold") && !s.at("loss_threshold").is_null())
      cfg.stopping.loss_threshold = get_field<double>(s, "loss_threshold", "stopping");
    get_optional(s, "min_rounds", "stopping", cfg.stopping.min_rounds);
    get_optional(s, "max_rounds", "stopping", cfg.stopping.max_rounds);
  }

  if (j.contains("verify")) {
    const json& v = j.at("verify");
    require_object(v, "verify", {"clients", "tolerance", "probe_pairs"});
    get_optional(v, "clients", "verify", cfg.verify.clients);
    get_optional(v, "tolerance", "verify", cfg.verify.tolerance);
    get_optional(v, "probe_pairs", "verify", cfg.verify.probe_pairs);
  }

  cfg.validate();
  if (stored_psi_star) {
    const double derived = psi_threshold(cfg.budget.epsilon, cfg.budget.delta, cfg.budget.sigma);
    if (std::abs(*stored_psi_star - derived) > 1e-12 * std::max(1.0, std::abs(derived)))
      throw ConfigError("budget.psi_star (" + format_double(*stored_psi_star) +
                        ") disagrees with the value derived from epsilon, delta, sigma (" +
                        format_double(derived) + ")");
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (model.input_dim() != data_gen.feature_dim)
    throw ConfigError("model input dimension must equal data_gen.feature_dim");
  if (data_gen.clients < 2) throw ConfigError("data_gen.clients must be >= 2");
  if (data_gen.samples_per_client < 1) throw ConfigError("data_gen.samples_per_client must be >= 1");
  if (federation.eta && !(*federation.eta > 0.0)) throw ConfigError("federation.eta must be > 0");
  if (federation.local_steps < 1) throw ConfigError("federation.local_steps must be >= 1");
  if (federation.weights == "explicit") {
    if (federation.explicit_weights.size() != data_gen.clients)
      throw ConfigError("federation.weights needs one entry per client");
  } else if (federation.weights != "proportional" && federation.weights != "uniform") {
    throw ConfigError("federation.weights must be \"proportional\", \"uniform\" or a list");
  }
  if (!(budget.epsilon > 0.0)) throw ConfigError("budget.epsilon must be > 0");
  if (!(budget.delta > 0.0 && budget.delta < 1.0)) throw ConfigError("budget.delta must lie in (0, 1)");
  if (!(budget.sigma >= 0.0)) throw ConfigError("budget.sigma must be >= 0");
  if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be >= 1");
  ClientSet seen;
  for (const auto& r : requests) {
    if (r.empty()) throw ConfigError("empty unlearning request");
    for (ClientId c : r) {
      if (c >= data_gen.clients) throw ConfigError("request names unknown client " + std::to_string(c));
      if (!seen.insert(c).second) throw ConfigError("client " + std::to_string(c) + " requested twice");
    }
  }
  if (seen.size() >= data_gen.clients) throw ConfigError("requests would remove every client");
  if (stopping.min_rounds > stopping.max_rounds) throw ConfigError("stopping.min_rounds exceeds max_rounds");
  for (ClientId c : verify.clients)
    if (c >= data_gen.clients) throw ConfigError("verify.clients names unknown client");
  if (!(verify.tolerance >= 0.0)) throw ConfigError("verify.tolerance must be >= 0");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  if (j.is_object() && !j.contains("name")) j["name"] = path.stem().string();
  return ExperimentConfig::from_json(j);
}

std::string serialize_config(const ExperimentConfig& config) {
  return dump_json(config.to_json(), 2) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  return fnv1a64(dump_json(config.to_json()));
}

std::string hex_hash(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double default_step_size(const RegimeConstants& regime) {
  if (regime.regime == Regime::StronglyConvex) return 2.0 / (regime.beta + regime.mu);
  return 1.0 / regime.beta;
}

Experiment prepare_experiment(const ExperimentConfig& config) {
  config.validate();
  Experiment ex;
  ex.config = config;
  ex.clients = generate_data(config.data_gen, config.model.kind);
  ex.regime = regime_constants(config.model, ex.clients, config.federation.seed);

  ex.federation.clients = ex.clients;
  if (config.federation.weights == "uniform") {
    ex.federation.weights = uniform_weights(ex.clients.size());
  } else if (config.federation.weights == "explicit") {
    ex.federation.weights = Eigen::Map<const Eigen::VectorXd>(
        config.federation.explicit_weights.data(),
        static_cast<Eigen::Index>(config.federation.explicit_weights.size()));
  } else {
    ex.federation.weights = proportional_weights(ex.clients);
  }
  ex.federation.eta = config.federation.eta.value_or(default_step_size(ex.regime));
  ex.federation.local_steps = config.federation.local_steps;
  ex.federation.rounds = config.federation.rounds;
  ex.federation.seed = config.federation.seed;
  ex.federation.batch_size = config.federation.batch_size;
  ex.federation.parallel_clients = config.federation.parallel_clients;
  try {
    ex.federation.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("federation: ") + e.what());
  }

  ex.budget = NoiseBudget::from_target(config.budget.epsilon, config.budget.delta, config.budget.sigma);
  ex.theta0 = initial_model(config.model, config.federation.init, config.federation.seed);
  ex.hash = config_hash(config);
  return ex;
}

}  // namespace fedunlearn
