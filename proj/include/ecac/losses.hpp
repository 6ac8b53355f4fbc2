#pragma once

// Training objectives for the ECAC branches.
//
// Logit grids are [n x h x w] with the class axis first. Pixels carrying the
// ignore label never contribute to any sum.

#include <cstddef>
#include <cstdint>

#include "ecac/grid.hpp"
#include "ecac/label_mask.hpp"

namespace ecac {

/// Floor applied to every loss denominator (pixel counts, entropy mass, norms).
inline constexpr double kLossEps = 1e-12;

inline constexpr double kDefaultAlpha = 1.0;
inline constexpr double kDefaultBeta = 50.0;
inline constexpr std::uint64_t kDefaultMemoryDelay = 1000;
inline constexpr double kDefaultRho = 0.5;

struct ClassWeights {
  Grid weights;      // [n], sums to 1
  double rho = 0.0;
  Grid frequencies;  // [n], strictly positive
};

/// w_c = (1/f_c)^rho / sum_k (1/f_k)^rho
ClassWeights class_weights(const Grid& frequencies, double rho);

/// Mean over valid pixels of w_{y_p} * (-log softmax(logits)_{y_p, p}).
Grid reweighted_ce(const Grid& logits, const LabelMask& labels, const ClassWeights& weights);

/// Plain mean cross-entropy (every class weight 1).
Grid mean_ce(const Grid& logits, const LabelMask& labels);

/// Per-pixel entropy of [n x h x w] probabilities divided by ln n, as a
/// constant [h x w] grid.
Grid pixel_entropy(const Grid& probs);

enum class DistillForm {
  entropy_weighted,  // class-balanced, entropy-weighted (default)
  plain,             // unweighted pixel mean
};

/// Cross-entropy of the student against the (constant) teacher distribution.
/// Default form: per ground-truth class k, the entropy-weighted mean over the
/// pixels of k, then averaged over classes present in the image.
Grid distillation_loss(const Grid& teacher_cal, const Grid& student_cal, const LabelMask& labels,
                       DistillForm form = DistillForm::entropy_weighted);

/// Cosine similarity between each pixel's logit vector and the mean logit
/// vector of its ground-truth class. Ignore pixels read 0. Returns [h x w].
Grid intra_class_similarity(const Grid& logits_cal, const LabelMask& labels);

/// Mean over valid pixels of (D_s - D_t)^2.
Grid intra_variance_loss(const Grid& ds, const Grid& dt, const LabelMask& labels);

/// Cross-entropy of the memory-bank logits, or an exact constant 0 while
/// iteration < delay.
Grid memory_loss(const Grid& mem_logits, const LabelMask& labels, std::uint64_t iteration,
                 std::uint64_t delay);

struct LossComponents {
  Grid rce_student;
  Grid rce_teacher;
  Grid memory;
  Grid kl;
  Grid iv;
};

struct LossBundle {
  Grid rce_student;
  Grid rce_teacher;
  Grid memory;
  Grid kl;
  Grid iv;
  Grid total;
  std::uint64_t iteration = 0;
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
  std::uint64_t memory_delay = kDefaultMemoryDelay;
};

/// total = rce_S + rce_T + L_M + alpha * L_KL + beta * L_IV
LossBundle total_loss(const LossComponents& parts, double alpha, double beta,
                      std::uint64_t iteration, std::uint64_t memory_delay);

}  // namespace ecac
