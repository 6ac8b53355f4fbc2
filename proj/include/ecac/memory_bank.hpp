#pragma once

// Dataset-level class representations kept as a momentum average of the
// per-image, ground-truth masked class centers.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ecac/grid.hpp"
#include "ecac/label_mask.hpp"

namespace ecac {

struct MaskedCenters {
  Grid centers;                           // [n x d], detached
  std::vector<std::size_t> pixel_counts;  // K_i
  std::vector<bool> present;              // K_i > 0
};

/// Mean feature over the ground-truth pixels of each class. `features` is
/// [d x h x w]; ignore pixels are skipped. Values are detached from the graph.
MaskedCenters masked_class_centers(const Grid& features, const LabelMask& labels, std::size_t n);

/// Pixel-weighted merge of several images' centers, as if computed over the
/// concatenated batch.
MaskedCenters merge_centers(std::span<const MaskedCenters> parts);

inline constexpr double kDefaultBankMomentum = 0.1;

class MemoryBank {
 public:
  MemoryBank(std::size_t n, std::size_t d, double momentum = kDefaultBankMomentum);

  /// Rebuilds a bank from serialized state.
  static MemoryBank restore(std::size_t n, std::size_t d, double momentum,
                            std::vector<double> rows, std::vector<bool> initialized,
                            std::uint64_t update_count);

  /// First sighting of a class copies Z_i; afterwards
  /// rows_i <- (1 - mu) rows_i + mu Z_i. Absent classes are untouched.
  void update(const MaskedCenters& centers);

  std::size_t classes() const { return n_; }
  std::size_t feature_dim() const { return d_; }
  double momentum() const { return momentum_; }
  std::uint64_t update_count() const { return update_count_; }
  const std::vector<bool>& initialized() const { return initialized_; }
  std::span<const double> row_values() const { return rows_; }

  /// Detached [n x d] copy of the current rows.
  Grid snapshot() const;

 private:
  std::size_t n_;
  std::size_t d_;
  double momentum_;
  std::vector<double> rows_;
  std::vector<bool> initialized_;
  std::uint64_t update_count_ = 0;
};

/// logits[i, p] = <rows_i, F_p>. The bank is a constant; gradients reach F.
/// Returns [n x h x w].
Grid memory_logits(const MemoryBank& bank, const Grid& features);

}  // namespace ecac
