#pragma once

#include <cstddef>
#include <set>

#include <Eigen/Dense>

namespace fedunlearn {

/// Flat vector of trainable parameters.
using ModelParams = Eigen::VectorXd;

using ClientId = std::size_t;

/// Ordered so that every iteration over a set of clients is deterministic.
using ClientSet = std::set<ClientId>;

/// Local data of one client. Rows of `features` are samples.
struct ClientDataset {
  Eigen::MatrixXd features;
  Eigen::VectorXd targets;

  std::size_t sample_count() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(features.cols()); }

  /// Throws ContractError unless N >= 1 and rows match targets.
  void validate() const;
};

inline bool all_finite(const ModelParams& v) { return v.allFinite(); }

}  // namespace fedunlearn
