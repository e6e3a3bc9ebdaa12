#include "fedunlearn/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include <Eigen/Eigenvalues>

#include "fedunlearn/errors.hpp"

namespace fedunlearn {

void ClientDataset::validate() const {
  if (features.rows() < 1) throw ContractError("client dataset must hold at least one sample");
  if (features.rows() != targets.size())
    throw ContractError("feature rows (" + std::to_string(features.rows()) +
                        ") differ from target length (" + std::to_string(targets.size()) + ")");
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Ridge: return "ridge";
    case ModelKind::Logistic: return "logistic";
    case ModelKind::TinyMLP: return "mlp";
  }
  return "?";
}

std::string_view to_string(Regime regime) {
  switch (regime) {
    case Regime::Smooth: return "smooth";
    case Regime::Convex: return "convex";
    case Regime::StronglyConvex: return "strongly_convex";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "ridge") return ModelKind::Ridge;
  if (name == "logistic") return ModelKind::Logistic;
  if (name == "mlp") return ModelKind::TinyMLP;
  throw ContractError("unknown model kind '" + std::string(name) + "'");
}

std::size_t ModelSpec::input_dim() const { return dims.empty() ? 0 : dims.front(); }

std::size_t ModelSpec::parameter_count() const {
  if (kind != ModelKind::TinyMLP) return input_dim() + (bias ? 1 : 0);
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) total += dims[l] * dims[l + 1] + dims[l + 1];
  return total;
}

void ModelSpec::validate() const {
  if (dims.empty() || dims.front() == 0) throw ContractError("model input dimension must be >= 1");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ContractError("l2 coefficient must be finite and >= 0");
  if (kind == ModelKind::TinyMLP) {
    if (dims.size() < 2 || dims.size() - 1 > kMaxMlpLayers)
      throw ContractError("mlp needs between 1 and 3 weight layers");
    if (dims.back() != 1) throw ContractError("mlp output layer must have width 1");
    if (std::find(dims.begin(), dims.end(), std::size_t{0}) != dims.end())
      throw ContractError("mlp layer widths must be >= 1");
    if (parameter_count() > kMaxMlpParameters)
      throw ContractError("mlp exceeds the desk-scale parameter limit");
  } else if (dims.size() != 1) {
    throw ContractError("linear models take dims = {input_dim}");
  }
}

namespace {

void check_inputs(const ModelSpec& spec, const ClientDataset& data, const ModelParams& theta) {
  if (static_cast<std::size_t>(theta.size()) != spec.parameter_count())
    throw ContractError("parameter vector has dimension " + std::to_string(theta.size()) +
                        ", model expects " + std::to_string(spec.parameter_count()));
  if (data.input_dim() != spec.input_dim())
    throw ContractError("dataset has " + std::to_string(data.input_dim()) +
                        " features, model expects " + std::to_string(spec.input_dim()));
  data.validate();
}

// Xw (+ b) for the linear models.
Eigen::VectorXd linear_response(const ModelSpec& spec, const Eigen::MatrixXd& x,
                                const ModelParams& theta) {
  const auto d = static_cast<Eigen::Index>(spec.input_dim());
  Eigen::VectorXd z = x * theta.head(d);
  if (spec.bias) z.array() += theta(d);
  return z;
}

double regularizer(const ModelSpec& spec, const ModelParams& theta) {
  if (spec.l2 == 0.0) return 0.0;
  if (spec.kind != ModelKind::TinyMLP && spec.bias)
    return 0.5 * spec.l2 * theta.head(theta.size() - 1).squaredNorm();
  return 0.5 * spec.l2 * theta.squaredNorm();
}

void add_regularizer_grad(const ModelSpec& spec, const ModelParams& theta, ModelParams& g) {
  if (spec.l2 == 0.0) return;
  if (spec.kind != ModelKind::TinyMLP && spec.bias) {
    g.head(g.size() - 1) += spec.l2 * theta.head(theta.size() - 1);
  } else {
    g += spec.l2 * theta;
  }
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Forward/backward pass of the tanh MLP. Layer l stores W_l (out x in,
// column-major) followed by b_l.
struct MlpPass {
  std::vector<Eigen::MatrixXd> activations;  // a_0 = X^T, ..., a_L = output (1 x N)
};

MlpPass mlp_forward(const ModelSpec& spec, const Eigen::MatrixXd& x, const ModelParams& theta) {
  MlpPass pass;
  pass.activations.push_back(x.transpose());
  Eigen::Index offset = 0;
  const std::size_t layers = spec.dims.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto in = static_cast<Eigen::Index>(spec.dims[l]);
    const auto out = static_cast<Eigen::Index>(spec.dims[l + 1]);
    Eigen::Map<const Eigen::MatrixXd> w(theta.data() + offset, out, in);
    offset += out * in;
    Eigen::Map<const Eigen::VectorXd> b(theta.data() + offset, out);
    offset += out;
    Eigen::MatrixXd z = w * pass.activations.back();
    z.colwise() += b;
    if (l + 1 < layers) z = z.array().tanh().matrix();
    pass.activations.push_back(std::move(z));
  }
  return pass;
}

ModelParams mlp_grad(const ModelSpec& spec, const ClientDataset& data, const ModelParams& theta) {
  const MlpPass pass = mlp_forward(spec, data.features, theta);
  const auto n = static_cast<double>(data.sample_count());
  const std::size_t layers = spec.dims.size() - 1;

  // Parameter offsets per layer.
  std::vector<Eigen::Index> offsets(layers);
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += static_cast<Eigen::Index>(spec.dims[l + 1] * spec.dims[l] + spec.dims[l + 1]);
  }

  ModelParams g = ModelParams::Zero(theta.size());
  Eigen::MatrixXd delta = (pass.activations.back() - data.targets.transpose()) / n;
  for (std::size_t l = layers; l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(spec.dims[l]);
    const auto out = static_cast<Eigen::Index>(spec.dims[l + 1]);
    Eigen::Map<Eigen::MatrixXd> gw(g.data() + offsets[l], out, in);
    Eigen::Map<Eigen::VectorXd> gb(g.data() + offsets[l] + out * in, out);
    gw = delta * pass.activations[l].transpose();
    gb = delta.rowwise().sum();
    if (l > 0) {
      Eigen::Map<const Eigen::MatrixXd> w(theta.data() + offsets[l], out, in);
      Eigen::MatrixXd back = w.transpose() * delta;
      const Eigen::MatrixXd& a = pass.activations[l];
      delta = (back.array() * (1.0 - a.array().square())).matrix();
    }
  }
  return g;
}

// Hessian of the data term for a linear model with optional bias: G/N with G
// the Gram matrix of the (augmented) features.
Eigen::MatrixXd normalized_gram(const ModelSpec& spec, const ClientDataset& data) {
  const auto n = static_cast<double>(data.sample_count());
  if (!spec.bias) return data.features.transpose() * data.features / n;
  Eigen::MatrixXd aug(data.features.rows(), data.features.cols() + 1);
  aug << data.features, Eigen::VectorXd::Ones(data.features.rows());
  return aug.transpose() * aug / n;
}

Eigen::MatrixXd regularizer_hessian(const ModelSpec& spec) {
  const auto p = static_cast<Eigen::Index>(spec.parameter_count());
  Eigen::MatrixXd r = spec.l2 * Eigen::MatrixXd::Identity(p, p);
  if (spec.bias) r(p - 1, p - 1) = 0.0;
  return r;
}

}  // namespace

double loss(const ModelSpec& spec, const ClientDataset& data, const ModelParams& theta) {
  check_inputs(spec, data, theta);
  const auto n = static_cast<double>(data.sample_count());
  double data_term = 0.0;
  switch (spec.kind) {
    case ModelKind::Ridge: {
      const Eigen::VectorXd r = linear_response(spec, data.features, theta) - data.targets;
      data_term = 0.5 * r.squaredNorm() / n;
      break;
    }
    case ModelKind::Logistic: {
      const Eigen::VectorXd z = linear_response(spec, data.features, theta);
      for (Eigen::Index i = 0; i < z.size(); ++i)
        data_term += softplus(z(i)) - data.targets(i) * z(i);
      data_term /= n;
      break;
    }
    case ModelKind::TinyMLP: {
      const MlpPass pass = mlp_forward(spec, data.features, theta);
      data_term = 0.5 * (pass.activations.back().transpose() - data.targets).squaredNorm() / n;
      break;
    }
  }
  return data_term + regularizer(spec, theta);
}

ModelParams grad(const ModelSpec& spec, const ClientDataset& data, const ModelParams& theta) {
  check_inputs(spec, data, theta);
  const auto n = static_cast<double>(data.sample_count());
  const auto d = static_cast<Eigen::Index>(spec.input_dim());
  ModelParams g;
  switch (spec.kind) {
    case ModelKind::Ridge:
    case ModelKind::Logistic: {
      Eigen::VectorXd r = linear_response(spec, data.features, theta);
      if (spec.kind == ModelKind::Logistic) r = r.unaryExpr([](double z) { return sigmoid(z); });
      r -= data.targets;
      g.resize(theta.size());
      g.head(d) = data.features.transpose() * r / n;
      if (spec.bias) g(d) = r.sum() / n;
      break;
    }
    case ModelKind::TinyMLP:
      g = mlp_grad(spec, data, theta);
      break;
  }
  add_regularizer_grad(spec, theta, g);
  return g;
}

Eigen::VectorXd predict(const ModelSpec& spec, const Eigen::MatrixXd& features,
                        const ModelParams& theta) {
  switch (spec.kind) {
    case ModelKind::Ridge: return linear_response(spec, features, theta);
    case ModelKind::Logistic:
      return linear_response(spec, features, theta).unaryExpr([](double z) { return sigmoid(z); });
    case ModelKind::TinyMLP: return mlp_forward(spec, features, theta).activations.back().transpose();
  }
  return {};
}

double evaluation_metric(const ModelSpec& spec, const ClientDataset& data,
                         const ModelParams& theta) {
  check_inputs(spec, data, theta);
  const Eigen::VectorXd out = predict(spec, data.features, theta);
  if (spec.kind == ModelKind::Logistic) {
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < out.size(); ++i)
      correct += ((out(i) >= 0.5 ? 1.0 : 0.0) == data.targets(i)) ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(out.size());
  }
  return (out - data.targets).squaredNorm() / static_cast<double>(out.size());
}

double probe_gradient_lipschitz(const ModelSpec& spec, std::span<const ClientDataset> clients,
                                std::uint64_t seed, std::size_t pairs) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto p = static_cast<Eigen::Index>(spec.parameter_count());
  double best = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    ModelParams a(p), b(p);
    for (Eigen::Index i = 0; i < p; ++i) a(i) = 0.5 * normal(rng);
    for (Eigen::Index i = 0; i < p; ++i) b(i) = a(i) + 0.1 * normal(rng);
    const double step = (a - b).norm();
    if (step == 0.0) continue;
    for (const auto& data : clients)
      best = std::max(best, (grad(spec, data, a) - grad(spec, data, b)).norm() / step);
  }
  return best;
}

RegimeConstants regime_constants(const ModelSpec& spec, std::span<const ClientDataset> clients,
                                 std::uint64_t probe_seed) {
  spec.validate();
  if (clients.empty()) throw ContractError("regime constants need at least one client");
  for (const auto& c : clients) {
    c.validate();
    if (c.input_dim() != spec.input_dim()) throw ContractError("client feature width mismatch");
  }

  RegimeConstants rc;
  rc.lambda = spec.l2;

  if (spec.kind == ModelKind::TinyMLP) {
    rc.regime = Regime::Smooth;
    rc.beta = kSmoothnessSafetyFactor * probe_gradient_lipschitz(spec, clients, probe_seed);
    rc.mu = 0.0;
    return rc;
  }

  const Eigen::MatrixXd reg = regularizer_hessian(spec);
  double beta = 0.0;
  double mu = std::numeric_limits<double>::infinity();
  for (const auto& c : clients) {
    const Eigen::MatrixXd gram = normalized_gram(spec, c);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double top = std::max(0.0, eig.eigenvalues().maxCoeff());
    if (spec.kind == ModelKind::Ridge) {
      // Regularizer is not isotropic when a bias is present, so take the full Hessian.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> full(gram + reg, Eigen::EigenvaluesOnly);
      beta = std::max(beta, full.eigenvalues().maxCoeff());
      double low = full.eigenvalues().minCoeff();
      // Rank-deficient data: clamp round-off so the modulus is exactly the regularizer's.
      const double floor = spec.bias ? 0.0 : spec.l2;
      if (low < floor + 1e-12 * std::max(1.0, top)) low = floor;
      mu = std::min(mu, low);
    } else {
      beta = std::max(beta, 0.25 * top + spec.l2);
      mu = std::min(mu, spec.bias ? 0.0 : spec.l2);
    }
  }
  rc.beta = beta;
  rc.mu = mu > 0.0 ? mu : 0.0;
  rc.regime = rc.mu > 0.0 ? Regime::StronglyConvex : Regime::Convex;
  return rc;
}

}  // namespace fedunlearn
