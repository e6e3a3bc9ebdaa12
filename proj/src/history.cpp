#include "fedunlearn/history.hpp"

#include <string>

#include "fedunlearn/errors.hpp"

namespace fedunlearn {

TrainingHistory::TrainingHistory(ModelParams theta0, CheckpointMode mode) : mode_(mode), size_(1) {
  models_.emplace(0, std::move(theta0));
}

TrainingHistory::TrainingHistory(std::size_t size, std::map<std::size_t, ModelParams> stored,
                                 CheckpointMode mode)
    : mode_(mode), size_(size), models_(std::move(stored)) {
  if (size_ == 0) throw ContractError("history needs at least the initial model");
  if (!models_.empty() && models_.rbegin()->first >= size_)
    throw ContractError("stored checkpoint beyond the history length");
}

const ModelParams& TrainingHistory::at(std::size_t position) const {
  if (position >= size_)
    throw ContractError("history position " + std::to_string(position) + " out of range (size " +
                        std::to_string(size_) + ")");
  auto it = models_.find(position);
  if (it == models_.end())
    throw MissingCheckpointError("history position " + std::to_string(position) +
                                 " was not retained");
  return it->second;
}

void TrainingHistory::push(ModelParams model) { models_.insert_or_assign(size_++, std::move(model)); }

void TrainingHistory::truncate(std::size_t position) {
  if (position >= size_) throw ContractError("truncation position out of range");
  models_.erase(models_.upper_bound(position), models_.end());
  size_ = position + 1;
}

void TrainingHistory::compact(const std::set<std::size_t>& pins) {
  if (mode_ == CheckpointMode::Full) return;
  for (auto it = models_.begin(); it != models_.end();) {
    const std::size_t p = it->first;
    if (p == 0 || p == last_position() || pins.contains(p)) {
      ++it;
    } else {
      it = models_.erase(it);
    }
  }
}

std::vector<std::size_t> TrainingHistory::stored_positions() const {
  std::vector<std::size_t> out;
  out.reserve(models_.size());
  for (const auto& [p, _] : models_) out.push_back(p);
  return out;
}

}  // namespace fedunlearn
