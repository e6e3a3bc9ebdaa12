#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <vector>

#include "fedunlearn/types.hpp"

namespace fedunlearn {

enum class CheckpointMode {
  Full,    // every global model is kept
  Frugal,  // theta_0, the latest model and whatever positions are pinned
};

/// Sequence of global models H = (H[0], ..., H[size()-1]) across training and
/// unlearning segments. Positions are contiguous; storage may be sparse.
class TrainingHistory {
 public:
  explicit TrainingHistory(ModelParams theta0, CheckpointMode mode = CheckpointMode::Full);

  /// Sparse history rebuilt from stored checkpoints. `size` counts positions,
  /// the map holds the models that are actually available.
  TrainingHistory(std::size_t size, std::map<std::size_t, ModelParams> stored,
                  CheckpointMode mode = CheckpointMode::Frugal);

  CheckpointMode mode() const { return mode_; }
  std::size_t size() const { return size_; }
  std::size_t last_position() const { return size_ - 1; }

  bool contains(std::size_t position) const { return models_.contains(position); }

  /// Throws MissingCheckpointError when the position is not retained.
  const ModelParams& at(std::size_t position) const;
  const ModelParams& latest() const { return at(last_position()); }

  void push(ModelParams model);

  /// Keep positions 0..position.
  void truncate(std::size_t position);

  /// Frugal mode: drop every stored model outside pins, 0 and the latest.
  void compact(const std::set<std::size_t>& pins);

  std::vector<std::size_t> stored_positions() const;

 private:
  CheckpointMode mode_;
  std::size_t size_ = 0;
  std::map<std::size_t, ModelParams> models_;
};

}  // namespace fedunlearn
