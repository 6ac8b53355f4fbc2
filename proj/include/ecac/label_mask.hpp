#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace ecac {

inline constexpr std::uint16_t kIgnoreLabel = 255;

/// Per-pixel class map, row-major h x w.
struct LabelMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;

  LabelMask() = default;
  LabelMask(std::size_t h, std::size_t w, std::vector<std::uint16_t> values);

  std::size_t pixels() const { return height * width; }
  bool ignored(std::size_t p) const { return labels[p] == kIgnoreLabel; }
  std::size_t valid_pixels() const;

  /// Throws LabelRangeError naming the first label outside [0, n) that is not ignore.
  void validate(std::size_t n) const;
};

}  // namespace ecac
