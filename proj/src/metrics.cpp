#include "ecac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ecac/errors.hpp"

namespace ecac {

std::vector<int> frequency_groups(const Grid& frequencies) {
  if (frequencies.rank() != 1 || frequencies.size() == 0) {
    throw DimensionError("frequency_groups: expected a non-empty [n] grid, got " +
                         shape_str(frequencies.shape()));
  }
  const auto f = frequencies.values();
  const std::size_t n = f.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return f[a] > f[b]; });
  std::vector<int> groups(n);
  for (std::size_t r = 0; r < n; ++r) groups[order[r]] = static_cast<int>(3 * r / n);
  return groups;
}

ConfusionMatrix::ConfusionMatrix(std::size_t n) : n_(n), counts_(n * n, 0) {
  if (n == 0) throw ContractError("ConfusionMatrix: no classes");
}

void ConfusionMatrix::add(const LabelMask& truth, const LabelMask& prediction) {
  if (truth.height != prediction.height || truth.width != prediction.width) {
    throw DimensionError("ConfusionMatrix: truth " + std::to_string(truth.height) + "x" +
                         std::to_string(truth.width) + " vs prediction " +
                         std::to_string(prediction.height) + "x" +
                         std::to_string(prediction.width));
  }
  truth.validate(n_);
  for (std::size_t p = 0; p < truth.pixels(); ++p) {
    if (truth.ignored(p)) continue;
    const std::size_t y = prediction.labels[p];
    if (y >= n_) {
      throw LabelRangeError("ConfusionMatrix: predicted label " + std::to_string(y) +
                            " outside [0, " + std::to_string(n_) + ")");
    }
    ++counts_[truth.labels[p] * n_ + y];
  }
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

EvalReport summarize(const ConfusionMatrix& cm, std::span<const int> groups) {
  const std::size_t n = cm.classes();
  if (groups.size() != n) {
    throw DimensionError("summarize: " + std::to_string(groups.size()) + " group ids for " +
                         std::to_string(n) + " classes");
  }
  EvalReport r;
  r.confusion = cm;
  r.iou.assign(n, 0.0);
  r.has_union.assign(n, false);
  std::uint64_t correct = 0;
  double sum = 0.0;
  std::size_t scored = 0;
  std::array<double, 3> gsum{};
  std::array<std::size_t, 3> gcount{};
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    correct += tp;
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    r.has_union[c] = true;
    r.iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
    sum += r.iou[c];
    ++scored;
    if (groups[c] < 0 || groups[c] > 2) {
      throw ContractError("summarize: group id " + std::to_string(groups[c]) + " for class " +
                          std::to_string(c));
    }
    gsum[static_cast<std::size_t>(groups[c])] += r.iou[c];
    ++gcount[static_cast<std::size_t>(groups[c])];
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.miou = scored ? sum / static_cast<double>(scored) : nan;
  for (std::size_t g = 0; g < 3; ++g) {
    r.group_miou[g] = gcount[g] ? gsum[g] / static_cast<double>(gcount[g]) : nan;
  }
  r.pixels = cm.total();
  r.pixel_accuracy = r.pixels ? static_cast<double>(correct) / static_cast<double>(r.pixels) : nan;
  return r;
}

}  // namespace ecac
