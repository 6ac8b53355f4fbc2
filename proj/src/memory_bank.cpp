#include "ecac/memory_bank.hpp"

#include <string>

#include "ecac/errors.hpp"
#include "ecac/kernels.hpp"

namespace ecac {
namespace {

void check_features(const Grid& features, const LabelMask& labels, const char* op) {
  if (features.rank() != 3) {
    throw DimensionError(std::string(op) + ": features must be [d x h x w], got " +
                         shape_str(features.shape()));
  }
  if (features.dim(1) != labels.height || features.dim(2) != labels.width) {
    throw DimensionError(std::string(op) + ": features " + shape_str(features.shape()) +
                         " vs labels " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width));
  }
}

}  // namespace

MaskedCenters masked_class_centers(const Grid& features, const LabelMask& labels, std::size_t n) {
  check_features(features, labels, "masked_class_centers");
  labels.validate(n);
  const std::size_t d = features.dim(0);
  const std::size_t hw = labels.pixels();
  const auto f = features.values();

  MaskedCenters out;
  out.pixel_counts.assign(n, 0);
  out.present.assign(n, false);
  std::vector<double> z(n * d, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    if (labels.ignored(p)) continue;
    const std::size_t c = labels.labels[p];
    ++out.pixel_counts[c];
    for (std::size_t k = 0; k < d; ++k) z[c * d + k] += f[k * hw + p];
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (out.pixel_counts[c] == 0) continue;
    out.present[c] = true;
    kernels::scale(1.0 / static_cast<double>(out.pixel_counts[c]),
                   std::span<double>(z).subspan(c * d, d));
  }
  out.centers = Grid::from_values({n, d}, std::move(z));
  return out;
}

MaskedCenters merge_centers(std::span<const MaskedCenters> parts) {
  if (parts.empty()) throw ContractError("merge_centers: no inputs");
  if (parts.size() == 1) return parts.front();
  const Shape shape = parts.front().centers.shape();
  const std::size_t n = shape[0], d = shape[1];
  std::vector<double> sums(n * d, 0.0);
  std::vector<std::size_t> counts(n, 0);
  for (const auto& part : parts) {
    if (part.centers.shape() != shape) {
      throw DimensionError("merge_centers: " + shape_str(part.centers.shape()) + " vs " +
                           shape_str(shape));
    }
    const auto v = part.centers.values();
    for (std::size_t c = 0; c < n; ++c) {
      if (part.pixel_counts[c] == 0) continue;
      counts[c] += part.pixel_counts[c];
      kernels::axpy(static_cast<double>(part.pixel_counts[c]), v.subspan(c * d, d),
                    std::span<double>(sums).subspan(c * d, d));
    }
  }
  MaskedCenters out;
  out.pixel_counts = counts;
  out.present.assign(n, false);
  for (std::size_t c = 0; c < n; ++c) {
    if (counts[c] == 0) continue;
    out.present[c] = true;
    kernels::scale(1.0 / static_cast<double>(counts[c]), std::span<double>(sums).subspan(c * d, d));
  }
  out.centers = Grid::from_values({n, d}, std::move(sums));
  return out;
}

MemoryBank::MemoryBank(std::size_t n, std::size_t d, double momentum)
    : n_(n), d_(d), momentum_(momentum), rows_(n * d, 0.0), initialized_(n, false) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw ContractError("memory bank momentum must lie in [0, 1], got " + std::to_string(momentum));
  }
}

MemoryBank MemoryBank::restore(std::size_t n, std::size_t d, double momentum,
                               std::vector<double> rows, std::vector<bool> initialized,
                               std::uint64_t update_count) {
  MemoryBank bank(n, d, momentum);
  if (rows.size() != n * d || initialized.size() != n) {
    throw DimensionError("memory bank restore: expected " + std::to_string(n) + "x" +
                         std::to_string(d) + " rows and " + std::to_string(n) + " flags");
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (initialized[c]) continue;
    for (std::size_t k = 0; k < d; ++k) {
      if (rows[c * d + k] != 0.0) {
        throw ContractError("memory bank restore: uninitialized class " + std::to_string(c) +
                            " has a non-zero row");
      }
    }
  }
  bank.rows_ = std::move(rows);
  bank.initialized_ = std::move(initialized);
  bank.update_count_ = update_count;
  return bank;
}

void MemoryBank::update(const MaskedCenters& centers) {
  const Shape expected{n_, d_};
  if (centers.centers.shape() != expected || centers.present.size() != n_) {
    throw DimensionError("memory bank update: bank " + shape_str(expected) + " vs centers " +
                         shape_str(centers.centers.shape()));
  }
  const auto z = centers.centers.values();
  for (std::size_t c = 0; c < n_; ++c) {
    if (!centers.present[c]) continue;
    auto row = std::span<double>(rows_).subspan(c * d_, d_);
    const auto zc = z.subspan(c * d_, d_);
    if (!initialized_[c]) {
      std::copy(zc.begin(), zc.end(), row.begin());
      initialized_[c] = true;
    } else {
      for (std::size_t k = 0; k < d_; ++k) row[k] = (1.0 - momentum_) * row[k] + momentum_ * zc[k];
    }
  }
  ++update_count_;
}

Grid MemoryBank::snapshot() const { return Grid::from_values({n_, d_}, rows_); }

Grid memory_logits(const MemoryBank& bank, const Grid& features) {
  if (features.rank() != 3) {
    throw DimensionError("memory_logits: features must be [d x h x w], got " +
                         shape_str(features.shape()));
  }
  if (features.dim(0) != bank.feature_dim()) {
    throw DimensionError("memory_logits: bank rows " + shape_str({bank.classes(), bank.feature_dim()}) +
                         " vs features " + shape_str(features.shape()));
  }
  const std::size_t d = features.dim(0), h = features.dim(1), w = features.dim(2);
  const Grid flat = reshape(features, {d, h * w});
  return reshape(matmul(bank.snapshot(), flat), {bank.classes(), h, w});
}

}  // namespace ecac
