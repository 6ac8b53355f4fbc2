#include "ecac/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ecac/errors.hpp"

namespace ecac {
namespace {

struct PixelView {
  std::size_t n = 0;
  std::size_t hw = 0;
};

PixelView check_logits(const Grid& logits, const LabelMask& labels, const char* op) {
  if (logits.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected [n x h x w], got " +
                         shape_str(logits.shape()));
  }
  if (logits.dim(1) != labels.height || logits.dim(2) != labels.width) {
    throw DimensionError(std::string(op) + ": logits " + shape_str(logits.shape()) +
                         " vs labels " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width));
  }
  labels.validate(logits.dim(0));
  return {logits.dim(0), labels.pixels()};
}

std::size_t require_supervision(const LabelMask& labels, const char* op) {
  const std::size_t valid = labels.valid_pixels();
  if (valid == 0) throw EmptySupervisionError(std::string(op) + ": every pixel is ignored");
  return valid;
}

// -sum_p coef[y_p] * log_softmax(logits)[y_p, p]
Grid picked_nll(const Grid& logits, const LabelMask& labels, const std::vector<double>& coef) {
  const std::size_t n = logits.dim(0), hw = labels.pixels();
  std::vector<double> pick(n * hw, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    if (labels.ignored(p)) continue;
    const std::size_t c = labels.labels[p];
    pick[c * hw + p] = coef[c];
  }
  const Grid logp = log_softmax(logits, 0);
  return scale(sum(mul(logp, Grid::from_values(logits.shape(), std::move(pick)))), -1.0);
}

}  // namespace

ClassWeights class_weights(const Grid& frequencies, double rho) {
  if (frequencies.rank() != 1) {
    throw DimensionError("class_weights: frequencies must be a vector, got " +
                         shape_str(frequencies.shape()));
  }
  if (!(rho >= 0.0)) throw ContractError("class_weights: rho must be >= 0");
  const auto f = frequencies.values();
  const std::size_t n = f.size();
  for (std::size_t c = 0; c < n; ++c) {
    if (!(f[c] > 0.0)) {
      throw FrequencyError("class_weights: frequency of class " + std::to_string(c) +
                           " is not positive (" + std::to_string(f[c]) + ")");
    }
  }
  // Evaluated in log space: log w_c = -rho log f_c - logsumexp_k(-rho log f_k).
  std::vector<double> logs(n);
  for (std::size_t c = 0; c < n; ++c) logs[c] = -rho * std::log(f[c]);
  const double mx = *std::max_element(logs.begin(), logs.end());
  double z = 0.0;
  for (double l : logs) z += std::exp(l - mx);
  std::vector<double> w(n);
  for (std::size_t c = 0; c < n; ++c) w[c] = std::exp(logs[c] - mx) / z;
  return {Grid::from_values({n}, std::move(w)), rho, frequencies.detach()};
}

Grid reweighted_ce(const Grid& logits, const LabelMask& labels, const ClassWeights& weights) {
  const auto v = check_logits(logits, labels, "reweighted_ce");
  if (weights.weights.size() != v.n) {
    throw DimensionError("reweighted_ce: " + std::to_string(weights.weights.size()) +
                         " weights for " + std::to_string(v.n) + " classes");
  }
  const double valid = static_cast<double>(require_supervision(labels, "reweighted_ce"));
  std::vector<double> coef(weights.weights.values().begin(), weights.weights.values().end());
  for (double& c : coef) c /= valid;
  return picked_nll(logits, labels, coef);
}

Grid mean_ce(const Grid& logits, const LabelMask& labels) {
  const auto v = check_logits(logits, labels, "mean_ce");
  const double valid = static_cast<double>(require_supervision(labels, "mean_ce"));
  return picked_nll(logits, labels, std::vector<double>(v.n, 1.0 / valid));
}

Grid pixel_entropy(const Grid& probs) {
  if (probs.rank() != 3) {
    throw DimensionError("pixel_entropy: expected [n x h x w], got " + shape_str(probs.shape()));
  }
  const std::size_t n = probs.dim(0), hw = probs.dim(1) * probs.dim(2);
  const auto pv = probs.values();
  const double norm = n > 1 ? std::log(static_cast<double>(n)) : 1.0;
  std::vector<double> h(hw, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    double total = 0.0;
    double ent = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double q = pv[c * hw + p];
      if (q < 0.0) throw NormalizationError("pixel_entropy: negative probability");
      total += q;
      if (q > 0.0) ent -= q * std::log(q);
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw NormalizationError("pixel_entropy: probabilities at pixel " + std::to_string(p) +
                               " sum to " + std::to_string(total));
    }
    h[p] = n > 1 ? ent / norm : 0.0;
  }
  return Grid::from_values({probs.dim(1), probs.dim(2)}, std::move(h));
}

Grid distillation_loss(const Grid& teacher_cal, const Grid& student_cal, const LabelMask& labels,
                       DistillForm form) {
  if (teacher_cal.shape() != student_cal.shape()) {
    throw DimensionError("distillation_loss: teacher " + shape_str(teacher_cal.shape()) +
                         " vs student " + shape_str(student_cal.shape()));
  }
  const auto v = check_logits(student_cal, labels, "distillation_loss");
  const Grid teacher_probs = softmax(teacher_cal.detach(), 0);
  const auto pv = teacher_probs.values();

  // The loss is -sum_{c,p} coef_p * P[c,p] * logQ[c,p]; only coef_p differs
  // between the two forms.
  std::vector<double> coef(v.hw, 0.0);
  if (form == DistillForm::plain) {
    const double valid = static_cast<double>(require_supervision(labels, "distillation_loss"));
    for (std::size_t p = 0; p < v.hw; ++p) {
      if (!labels.ignored(p)) coef[p] = 1.0 / valid;
    }
  } else {
    const Grid entropy = pixel_entropy(teacher_probs);
    const auto h = entropy.values();
    std::vector<double> mass(v.n, 0.0);
    std::vector<bool> present(v.n, false);
    for (std::size_t p = 0; p < v.hw; ++p) {
      if (labels.ignored(p)) continue;
      present[labels.labels[p]] = true;
      mass[labels.labels[p]] += h[p];
    }
    const auto classes = static_cast<std::size_t>(std::count(present.begin(), present.end(), true));
    if (classes == 0) {
      throw EmptySupervisionError("distillation_loss: no ground-truth class present");
    }
    for (std::size_t p = 0; p < v.hw; ++p) {
      if (labels.ignored(p)) continue;
      const std::size_t k = labels.labels[p];
      coef[p] = h[p] / (std::max(mass[k], kLossEps) * static_cast<double>(classes));
    }
  }
  std::vector<double> target(v.n * v.hw);
  for (std::size_t c = 0; c < v.n; ++c) {
    for (std::size_t p = 0; p < v.hw; ++p) target[c * v.hw + p] = coef[p] * pv[c * v.hw + p];
  }
  const Grid logq = log_softmax(student_cal, 0);
  return scale(sum(mul(logq, Grid::from_values(student_cal.shape(), std::move(target)))), -1.0);
}

Grid intra_class_similarity(const Grid& logits_cal, const LabelMask& labels) {
  const auto v = check_logits(logits_cal, labels, "intra_class_similarity");
  const std::size_t n = v.n, hw = v.hw;
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    if (!labels.ignored(p)) ++counts[labels.labels[p]];
  }
  std::vector<double> averaging(hw * n, 0.0);  // [hw x n], column c averages class c
  std::vector<double> gather(n * hw, 0.0);     // [n x hw], one-hot of y_p
  std::vector<double> valid(hw, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    if (labels.ignored(p)) continue;
    const std::size_t c = labels.labels[p];
    averaging[p * n + c] = 1.0 / static_cast<double>(counts[c]);
    gather[c * hw + p] = 1.0;
    valid[p] = 1.0;
  }
  const Grid flat = reshape(logits_cal, {n, hw});
  const Grid centers = matmul(flat, Grid::from_values({hw, n}, std::move(averaging)));
  const Grid per_pixel = matmul(centers, Grid::from_values({n, hw}, std::move(gather)));
  const Grid sims = column_cosine(flat, per_pixel, kLossEps);
  return reshape(mul(sims, Grid::from_values({hw}, std::move(valid))),
                 {labels.height, labels.width});
}

Grid intra_variance_loss(const Grid& ds, const Grid& dt, const LabelMask& labels) {
  if (ds.shape() != dt.shape() || ds.shape() != Shape{labels.height, labels.width}) {
    throw DimensionError("intra_variance_loss: " + shape_str(ds.shape()) + " vs " +
                         shape_str(dt.shape()) + " for " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width) + " labels");
  }
  const double valid = static_cast<double>(require_supervision(labels, "intra_variance_loss"));
  std::vector<double> mask(labels.pixels(), 0.0);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!labels.ignored(p)) mask[p] = 1.0 / valid;
  }
  const Grid diff = sub(ds, dt);
  return sum(mul(mul(diff, diff), Grid::from_values(ds.shape(), std::move(mask))));
}

Grid memory_loss(const Grid& mem_logits, const LabelMask& labels, std::uint64_t iteration,
                 std::uint64_t delay) {
  check_logits(mem_logits, labels, "memory_loss");
  if (iteration < delay) return Grid::scalar(0.0);
  return mean_ce(mem_logits, labels);
}

LossBundle total_loss(const LossComponents& parts, double alpha, double beta,
                      std::uint64_t iteration, std::uint64_t memory_delay) {
  const std::pair<const char*, const Grid*> named[] = {
      {"L_rceS", &parts.rce_student}, {"L_rceT", &parts.rce_teacher}, {"L_M", &parts.memory},
      {"L_KL", &parts.kl},            {"L_IV", &parts.iv}};
  for (const auto& [name, g] : named) {
    if (g->rank() != 0) {
      throw DimensionError(std::string("total_loss: ") + name + " is not a scalar");
    }
    if (!std::isfinite(g->item())) {
      throw NumericError(std::string("total_loss: component ") + name + " is not finite");
    }
  }
  if (iteration < memory_delay && parts.memory.item() != 0.0) {
    throw ContractError("total_loss: L_M must be 0 before the memory delay elapses");
  }
  LossBundle b;
  b.rce_student = parts.rce_student;
  b.rce_teacher = parts.rce_teacher;
  b.memory = parts.memory;
  b.kl = parts.kl;
  b.iv = parts.iv;
  b.total = add(add(add(parts.rce_student, parts.rce_teacher), parts.memory),
                add(scale(parts.kl, alpha), scale(parts.iv, beta)));
  b.iteration = iteration;
  b.alpha = alpha;
  b.beta = beta;
  b.memory_delay = memory_delay;
  return b;
}

}  // namespace ecac
