#include "ecac/label_mask.hpp"

#include <algorithm>
#include <string>

#include "ecac/errors.hpp"

namespace ecac {

LabelMask::LabelMask(std::size_t h, std::size_t w, std::vector<std::uint16_t> values)
    : height(h), width(w), labels(std::move(values)) {
  if (labels.size() != h * w) {
    throw DimensionError("label mask " + std::to_string(h) + "x" + std::to_string(w) + " got " +
                         std::to_string(labels.size()) + " labels");
  }
}

std::size_t LabelMask::valid_pixels() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](auto l) { return l != kIgnoreLabel; }));
}

void LabelMask::validate(std::size_t n) const {
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const auto l = labels[p];
    if (l != kIgnoreLabel && l >= n) {
      throw LabelRangeError("label " + std::to_string(l) + " at pixel " + std::to_string(p) +
                            " outside [0, " + std::to_string(n) + ")");
    }
  }
}

}  // namespace ecac
