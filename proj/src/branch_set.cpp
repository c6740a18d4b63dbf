#include "ffn/branch_set.hpp"

#include <cstdlib>
#include <string>

namespace ffn {

FrameBranchSet::FrameBranchSet(std::vector<int> frame_counts) : counts_(std::move(frame_counts)) {
  if (counts_.empty()) throw std::invalid_argument("frame branch set is empty");
  for (std::size_t i = 0; i < counts_.size(); ++i) {
    if (counts_[i] < 1) {
      throw std::invalid_argument("frame count must be positive, got " + std::to_string(counts_[i]));
    }
    if (i > 0 && counts_[i] <= counts_[i - 1]) {
      throw std::invalid_argument("frame counts must be strictly increasing");
    }
  }
}

std::optional<int> FrameBranchSet::index_of(int frames) const {
  for (int b = 0; b < size(); ++b)
    if (counts_[b] == frames) return b;
  return std::nullopt;
}

int select_branch(const FrameBranchSet& branches, int n) {
  if (n < 1) throw std::invalid_argument("frame count must be >= 1");
  int best = 0;
  int best_gap = std::abs(n - branches.frames(0));
  for (int b = 1; b < branches.size(); ++b) {
    // counts ascend, so "<=" hands ties to the larger count
    const int gap = std::abs(n - branches.frames(b));
    if (gap <= best_gap) {
      best = b;
      best_gap = gap;
    }
  }
  return best;
}

}  // namespace ffn
