#pragma once

// Deterministic class-imbalanced segmentation scenes.
//
// An image is cut into rectangular tiles by random guillotine splits. Each
// tile draws a class from a Zipf law over all n classes (class 0 is the
// background) and is painted with a rectangle, an inscribed disc, or either.
// Pixels outside a disc fall back to background. The observation at a pixel
// is its class prototype plus one drift vector shared by the whole image plus
// independent pixel noise.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ecac/grid.hpp"
#include "ecac/label_mask.hpp"

namespace ecac {

enum class ShapePalette { rectangles, discs, both };

std::string_view palette_name(ShapePalette p);
ShapePalette parse_palette(std::string_view name);

struct SceneSpec {
  std::size_t n_classes = 8;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t input_dim = 256;
  double zipf_s = 1.2;
  double drift = 1.0;
  double noise = 0.5;
  ShapePalette palette = ShapePalette::rectangles;
  std::size_t tile_area = 16;  // splitting stops at or below this many pixels
  std::uint64_t seed = 1;

  /// Throws ConfigError describing the first invalid field.
  void validate() const;
};

struct Instance {
  Grid observation;   // [input_dim x h x w]
  LabelMask labels;
  Grid frequencies;   // [n], the Zipf law the scene was drawn from
};

/// Zipf pixel-share law: pi_c proportional to (c + 1)^(-s).
std::vector<double> zipf_shares(std::size_t n, double s);

/// Fixed class prototypes mu_c, [n x input_dim], row-major.
std::vector<double> class_prototypes(const SceneSpec& spec);

/// The index-th scene; a pure function of (spec, index).
Instance generate(const SceneSpec& spec, std::uint64_t index);

/// Labels only (cheaper than generate when observations are not needed).
LabelMask generate_labels(const SceneSpec& spec, std::uint64_t index);

/// Per-class pixel frequencies over scenes [0, count), each count smoothed by
/// one pixel so every entry is positive.
Grid dataset_frequencies(const SceneSpec& spec, std::size_t count);

/// Binary record: "ECSY" magic, u32 version, u32 n, u32 d_in, u32 h, u32 w,
/// then h*w u16 labels and d_in*h*w f32 observations, all little-endian.
void write_instance(std::ostream& out, const Instance& instance, std::size_t n_classes);

inline constexpr std::uint32_t kInstanceFormatVersion = 1;

}  // namespace ecac
