#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedunlearn/types.hpp"

namespace fedunlearn {

enum class ModelKind { Ridge, Logistic, TinyMLP };

enum class Regime { Smooth, Convex, StronglyConvex };

std::string_view to_string(ModelKind kind);
std::string_view to_string(Regime regime);
ModelKind parse_model_kind(std::string_view name);

/// Model architecture.
///
/// Ridge and Logistic use `dims = {d_in}` and a single weight block, plus an
/// unregularized bias when `bias` is set. TinyMLP uses `dims = {d_in, h..., 1}`
/// with tanh hidden units, a linear scalar output and squared loss; every
/// parameter (biases included) is L2-regularized.
struct ModelSpec {
  ModelKind kind = ModelKind::Ridge;
  std::vector<std::size_t> dims;
  double l2 = 0.0;
  bool bias = false;

  std::size_t input_dim() const;
  std::size_t parameter_count() const;
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

inline constexpr std::size_t kMaxMlpLayers = 3;
inline constexpr std::size_t kMaxMlpParameters = 10000;

struct RegimeConstants {
  Regime regime = Regime::Smooth;
  double beta = 0.0;
  double mu = 0.0;
  double lambda = 0.0;
};

/// Mean per-sample loss plus (l2/2)|theta|^2.
double loss(const ModelSpec& spec, const ClientDataset& data, const ModelParams& theta);

/// Gradient of `loss`, regularizer included.
ModelParams grad(const ModelSpec& spec, const ClientDataset& data, const ModelParams& theta);

/// Model outputs (Ridge/TinyMLP: predictions; Logistic: probabilities).
Eigen::VectorXd predict(const ModelSpec& spec, const Eigen::MatrixXd& features,
                        const ModelParams& theta);

/// Desk-scale stand-in for "accuracy": Logistic reports classification accuracy
/// at threshold 0.5, the regression models report mean squared error.
double evaluation_metric(const ModelSpec& spec, const ClientDataset& data,
                         const ModelParams& theta);

inline constexpr std::size_t kSmoothnessProbePairs = 256;
inline constexpr double kSmoothnessSafetyFactor = 1.5;

/// Largest |grad(a)-grad(b)|/|a-b| over random probe pairs, across all clients.
/// Heuristic: a lower bound on the true Lipschitz constant.
double probe_gradient_lipschitz(const ModelSpec& spec, std::span<const ClientDataset> clients,
                                std::uint64_t seed,
                                std::size_t pairs = kSmoothnessProbePairs);

/// beta and mu valid for every client loss.
///
/// Ridge and Logistic use exact Gram-matrix eigenvalues. A strong-convexity
/// modulus that comes out as zero downgrades the regime to Convex. TinyMLP is
/// Smooth with beta = 1.5 x the probed Lipschitz ratio (not certified).
RegimeConstants regime_constants(const ModelSpec& spec, std::span<const ClientDataset> clients,
                                 std::uint64_t probe_seed = 0);

}  // namespace fedunlearn
