#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace ffn {

/// Ordered frame counts of the sub-networks (e.g. 4/8/16). The last entry is
/// the largest count and its branch is the distillation teacher.
///
/// A single-count set is accepted so that plain single-frequency models can
/// reuse the same metadata; training a frame-flexible model requires k >= 2.
class FrameBranchSet {
 public:
  FrameBranchSet() = default;
  explicit FrameBranchSet(std::vector<int> frame_counts);

  std::span<const int> frame_counts() const { return counts_; }
  int size() const { return static_cast<int>(counts_.size()); }
  int frames(int branch) const { return counts_.at(branch); }
  int teacher_index() const { return size() - 1; }
  int max_frames() const { return counts_.back(); }

  /// Branch trained at exactly `frames`, if any.
  std::optional<int> index_of(int frames) const;

  bool operator==(const FrameBranchSet&) const = default;

 private:
  std::vector<int> counts_;
};

/// Any-frame routing: the branch whose frame count is nearest to n, ties
/// going to the larger count. Total over n >= 1.
int select_branch(const FrameBranchSet& branches, int n);

}  // namespace ffn
