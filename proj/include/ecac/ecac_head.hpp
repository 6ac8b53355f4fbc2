#pragma once

// Extended context-aware classifier heads.
//
// A head turns per-image class centers [n x d] and the memory bank rows
// [n x d] into classifier weights through a two-layer projector, applies them
// to the feature map, and calibrates the logits with a per-class affine.
// The teacher gets centers from ground truth; the student from the soft
// assignment of its own coarse linear classifier.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "ecac/grid.hpp"
#include "ecac/label_mask.hpp"
#include "ecac/memory_bank.hpp"

namespace ecac {

class CounterRng;

enum class HeadRole { teacher, student };

struct ProjectorParams {
  Grid w1;  // [2d x d]
  Grid b1;  // [d]
  Grid w2;  // [d x d]
  Grid b2;  // [d]
  bool relu = true;

  static ProjectorParams init(std::size_t d, CounterRng& rng, bool relu = true);
  std::size_t parameter_count() const;
};

struct CalibrationParams {
  Grid gamma;  // [n], starts at 1
  Grid delta;  // [n], starts at 0

  static CalibrationParams identity(std::size_t n, bool trainable = true);
};

struct CoarseClassifier {
  Grid weight;  // [n x d]
  Grid bias;    // [n]

  static CoarseClassifier init(std::size_t n, std::size_t d, CounterRng& rng);
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

struct EcacHead {
  HeadRole role = HeadRole::student;
  ProjectorParams projector;
  CalibrationParams calibration;
  std::optional<CoarseClassifier> coarse;  // student only

  std::size_t classes() const { return calibration.gamma.size(); }
  std::size_t feature_dim() const { return projector.b2.size(); }

  /// Throws DimensionError/RoleError when the parts disagree.
  void validate() const;
  std::size_t parameter_count() const;
};

/// (2d*d + d) + (d*d + d) + 2n, plus n*d + n for a student's coarse classifier.
std::size_t closed_form_head_parameters(std::size_t n, std::size_t d, HeadRole role);

/// Ground-truth class centers; classes absent from the image take the bank
/// row instead. Gradient flows into F for present classes. Returns [n x d].
Grid teacher_class_center(const Grid& features, const LabelMask& labels, const Grid& bank_rows);
Grid teacher_class_center(const Grid& features, const LabelMask& labels, const MemoryBank& bank);

/// Soft centers: softmax of the coarse logits over the pixel axis, one
/// attention map per class, applied to the pixel features. Returns [n x d].
Grid student_class_center(const Grid& features, const Grid& coarse_logits);

/// xi(centers ++ bank_rows): [n x 2d] -> linear -> ReLU -> linear -> [n x d].
/// Bank rows are used as constants.
Grid build_classifier(const EcacHead& head, const Grid& centers, const Grid& bank_rows);

/// logits[i, p] = <weights_i, F_p>, [n x h x w].
Grid classify(const Grid& weights, const Grid& features);

/// gamma_i * logits_i + delta_i, broadcast over pixels.
Grid calibrate(const Grid& logits, const CalibrationParams& params);

/// The student's plain linear classifier W0 F + b0, [n x h x w].
Grid coarse_segment(const EcacHead& head, const Grid& features);

}  // namespace ecac
