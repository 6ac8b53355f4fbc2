#include "ecac/ecac_head.hpp"

#include <cmath>
#include <string>

#include "ecac/errors.hpp"
#include "ecac/random.hpp"

namespace ecac {
namespace {

Grid gaussian(Shape shape, double stddev, CounterRng& rng) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = stddev * rng.normal();
  return Grid::from_values(std::move(shape), std::move(v), true);
}

Grid flatten_pixels(const Grid& g, const char* op) {
  if (g.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected [c x h x w], got " + shape_str(g.shape()));
  }
  return reshape(g, {g.dim(0), g.dim(1) * g.dim(2)});
}

}  // namespace

ProjectorParams ProjectorParams::init(std::size_t d, CounterRng& rng, bool relu) {
  ProjectorParams p;
  p.w1 = gaussian({2 * d, d}, std::sqrt(2.0 / static_cast<double>(2 * d)), rng);
  p.b1 = Grid::zeros({d}, true);
  p.w2 = gaussian({d, d}, std::sqrt(1.0 / static_cast<double>(d)), rng);
  p.b2 = Grid::zeros({d}, true);
  p.relu = relu;
  return p;
}

std::size_t ProjectorParams::parameter_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size();
}

CalibrationParams CalibrationParams::identity(std::size_t n, bool trainable) {
  return {Grid::full({n}, 1.0, trainable), Grid::zeros({n}, trainable)};
}

CoarseClassifier CoarseClassifier::init(std::size_t n, std::size_t d, CounterRng& rng) {
  return {gaussian({n, d}, std::sqrt(1.0 / static_cast<double>(d)), rng), Grid::zeros({n}, true)};
}

void EcacHead::validate() const {
  const std::size_t d = projector.b2.size();
  const std::size_t n = calibration.gamma.size();
  const bool ok = projector.w1.shape() == Shape{2 * d, d} && projector.b1.shape() == Shape{d} &&
                  projector.w2.shape() == Shape{d, d} && calibration.delta.shape() == Shape{n};
  if (!ok) throw DimensionError("ECAC head parameters disagree on d or n");
  if (role == HeadRole::teacher && coarse) {
    throw RoleError("teacher head must not carry a coarse classifier");
  }
  if (role == HeadRole::student) {
    if (!coarse) throw RoleError("student head needs a coarse classifier");
    if (coarse->weight.shape() != Shape{n, d} || coarse->bias.shape() != Shape{n}) {
      throw DimensionError("coarse classifier " + shape_str(coarse->weight.shape()) +
                           " does not match n=" + std::to_string(n) + ", d=" + std::to_string(d));
    }
  }
}

std::size_t EcacHead::parameter_count() const {
  std::size_t total = projector.parameter_count() + calibration.gamma.size() +
                      calibration.delta.size();
  if (coarse) total += coarse->parameter_count();
  return total;
}

std::size_t closed_form_head_parameters(std::size_t n, std::size_t d, HeadRole role) {
  std::size_t count = (2 * d * d + d) + (d * d + d) + 2 * n;
  if (role == HeadRole::student) count += n * d + n;
  return count;
}

Grid teacher_class_center(const Grid& features, const LabelMask& labels, const Grid& bank_rows) {
  const Grid flat = flatten_pixels(features, "teacher_class_center");
  const std::size_t d = flat.dim(0), hw = flat.dim(1);
  if (features.dim(1) != labels.height || features.dim(2) != labels.width) {
    throw DimensionError("teacher_class_center: features " + shape_str(features.shape()) +
                         " vs labels " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width));
  }
  if (bank_rows.rank() != 2 || bank_rows.dim(1) != d) {
    throw DimensionError("teacher_class_center: bank rows " + shape_str(bank_rows.shape()) +
                         " vs feature depth " + std::to_string(d));
  }
  const std::size_t n = bank_rows.dim(0);
  labels.validate(n);

  std::vector<std::size_t> counts(n, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    if (!labels.ignored(p)) ++counts[labels.labels[p]];
  }
  // Row-normalized one-hot mask: Y[c, p] = 1 / K_c.
  std::vector<double> ynorm(n * hw, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    if (labels.ignored(p)) continue;
    const std::size_t c = labels.labels[p];
    ynorm[c * hw + p] = 1.0 / static_cast<double>(counts[c]);
  }
  std::vector<double> fallback(n * d, 0.0);
  const auto bank = bank_rows.values();
  for (std::size_t c = 0; c < n; ++c) {
    if (counts[c] > 0) continue;
    std::copy_n(bank.begin() + c * d, d, fallback.begin() + c * d);
  }
  const Grid means = matmul(Grid::from_values({n, hw}, std::move(ynorm)), transpose(flat));
  return add(means, Grid::from_values({n, d}, std::move(fallback)));
}

Grid teacher_class_center(const Grid& features, const LabelMask& labels, const MemoryBank& bank) {
  return teacher_class_center(features, labels, bank.snapshot());
}

Grid student_class_center(const Grid& features, const Grid& coarse_logits) {
  const Grid flat = flatten_pixels(features, "student_class_center");
  const Grid coarse = flatten_pixels(coarse_logits, "student_class_center");
  if (coarse.dim(1) != flat.dim(1)) {
    throw DimensionError("student_class_center: coarse logits " +
                         shape_str(coarse_logits.shape()) + " vs features " +
                         shape_str(features.shape()));
  }
  const Grid attention = softmax(coarse, 1);
  return matmul(attention, transpose(flat));
}

Grid build_classifier(const EcacHead& head, const Grid& centers, const Grid& bank_rows) {
  if (centers.rank() != 2 || centers.shape() != bank_rows.shape()) {
    throw DimensionError("build_classifier: centers " + shape_str(centers.shape()) +
                         " vs bank rows " + shape_str(bank_rows.shape()));
  }
  const auto& pr = head.projector;
  if (pr.w1.dim(0) != 2 * centers.dim(1)) {
    throw DimensionError("build_classifier: projector input width " +
                         std::to_string(pr.w1.dim(0)) + " vs concatenated width " +
                         std::to_string(2 * centers.dim(1)));
  }
  const Grid joined = concat_cols(centers, bank_rows.detach());
  Grid hidden = add_row_bias(matmul(joined, pr.w1), pr.b1);
  if (pr.relu) hidden = relu(hidden);
  return add_row_bias(matmul(hidden, pr.w2), pr.b2);
}

Grid classify(const Grid& weights, const Grid& features) {
  const Grid flat = flatten_pixels(features, "classify");
  if (weights.rank() != 2 || weights.dim(1) != flat.dim(0)) {
    throw DimensionError("classify: weights " + shape_str(weights.shape()) + " vs features " +
                         shape_str(features.shape()));
  }
  return reshape(matmul(weights, flat), {weights.dim(0), features.dim(1), features.dim(2)});
}

Grid calibrate(const Grid& logits, const CalibrationParams& params) {
  const Grid flat = flatten_pixels(logits, "calibrate");
  if (params.gamma.shape() != Shape{flat.dim(0)} || params.delta.shape() != Shape{flat.dim(0)}) {
    throw DimensionError("calibrate: logits " + shape_str(logits.shape()) + " vs gamma " +
                         shape_str(params.gamma.shape()) + ", delta " +
                         shape_str(params.delta.shape()));
  }
  return reshape(add_col_bias(scale_rows(flat, params.gamma), params.delta), logits.shape());
}

Grid coarse_segment(const EcacHead& head, const Grid& features) {
  if (head.role != HeadRole::student || !head.coarse) {
    throw RoleError("coarse_segment needs a student head");
  }
  const Grid flat = flatten_pixels(features, "coarse_segment");
  const auto& c = *head.coarse;
  if (c.weight.dim(1) != flat.dim(0)) {
    throw DimensionError("coarse_segment: weights " + shape_str(c.weight.shape()) +
                         " vs features " + shape_str(features.shape()));
  }
  return reshape(add_col_bias(matmul(c.weight, flat), c.bias),
                 {c.weight.dim(0), features.dim(1), features.dim(2)});
}

}  // namespace ecac
