#pragma once

// Segmentation quality measures over a confusion matrix.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ecac/grid.hpp"
#include "ecac/label_mask.hpp"

namespace ecac {

/// Head / moderate / tail by descending frequency rank r: group floor(3r / n).
std::vector<int> frequency_groups(const Grid& frequencies);

inline constexpr std::array<const char*, 3> kGroupNames = {"head", "moderate", "tail"};

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n);

  /// Counts (truth, prediction) over non-ignored pixels.
  void add(const LabelMask& truth, const LabelMask& prediction);

  std::size_t classes() const { return n_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  std::uint64_t total() const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

struct EvalReport {
  ConfusionMatrix confusion{1};    // rows: truth, columns: prediction
  std::vector<double> iou;         // per class; meaningless where !has_union
  std::vector<bool> has_union;     // TP + FP + FN > 0
  double miou = 0.0;               // over classes with a nonzero union
  std::array<double, 3> group_miou{};  // NaN for a group with no scored class
  double pixel_accuracy = 0.0;
  std::uint64_t pixels = 0;
};

/// IoU_c = TP / (TP + FP + FN); classes with an empty union are left out of
/// every mean.
EvalReport summarize(const ConfusionMatrix& cm, std::span<const int> groups);

}  // namespace ecac
