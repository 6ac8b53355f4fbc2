#include "ecac/synth_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>

#include "ecac/errors.hpp"
#include "ecac/random.hpp"

namespace ecac {
namespace {

struct Tile {
  std::size_t r0, c0, rows, cols;
};

constexpr std::size_t kMinSide = 2;

std::vector<Tile> split_tiles(const SceneSpec& spec, CounterRng& rng) {
  std::vector<Tile> pending{{0, 0, spec.height, spec.width}};
  std::vector<Tile> done;
  while (!pending.empty()) {
    Tile t = pending.back();
    pending.pop_back();
    const bool by_rows = t.rows > t.cols || (t.rows == t.cols && rng.uniform() < 0.5);
    const std::size_t side = by_rows ? t.rows : t.cols;
    if (t.rows * t.cols <= spec.tile_area || side < 2 * kMinSide) {
      done.push_back(t);
      continue;
    }
    const std::size_t cut = kMinSide + rng.below(side - 2 * kMinSide + 1);
    if (by_rows) {
      pending.push_back({t.r0, t.c0, cut, t.cols});
      pending.push_back({t.r0 + cut, t.c0, t.rows - cut, t.cols});
    } else {
      pending.push_back({t.r0, t.c0, t.rows, cut});
      pending.push_back({t.r0, t.c0 + cut, t.rows, t.cols - cut});
    }
  }
  return done;
}

std::size_t draw_class(const std::vector<double>& cdf, CounterRng& rng) {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

bool inside_disc(const Tile& t, std::size_t r, std::size_t c) {
  const double cy = static_cast<double>(t.r0) + 0.5 * static_cast<double>(t.rows);
  const double cx = static_cast<double>(t.c0) + 0.5 * static_cast<double>(t.cols);
  const double radius = 0.5 * static_cast<double>(std::min(t.rows, t.cols));
  const double dy = static_cast<double>(r) + 0.5 - cy;
  const double dx = static_cast<double>(c) + 0.5 - cx;
  return dx * dx + dy * dy <= radius * radius;
}

template <class T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

}  // namespace

std::string_view palette_name(ShapePalette p) {
  switch (p) {
    case ShapePalette::rectangles: return "rectangles";
    case ShapePalette::discs: return "discs";
    case ShapePalette::both: return "both";
  }
  return "rectangles";
}

ShapePalette parse_palette(std::string_view name) {
  if (name == "rectangles") return ShapePalette::rectangles;
  if (name == "discs") return ShapePalette::discs;
  if (name == "both") return ShapePalette::both;
  throw ConfigError("unknown shape palette '" + std::string(name) + "'");
}

void SceneSpec::validate() const {
  if (n_classes < 2) throw ConfigError("scene.n_classes must be >= 2");
  if (n_classes >= kIgnoreLabel) throw ConfigError("scene.n_classes must be < 255");
  if (height < kMinSide || width < kMinSide) throw ConfigError("scene height/width must be >= 2");
  if (input_dim == 0) throw ConfigError("scene.input_dim must be >= 1");
  if (!(zipf_s >= 0.0)) throw ConfigError("scene.zipf_s must be >= 0");
  if (!(drift >= 0.0)) throw ConfigError("scene.drift must be >= 0");
  if (!(noise >= 0.0)) throw ConfigError("scene.noise must be >= 0");
  if (tile_area == 0) throw ConfigError("scene.tile_area must be >= 1");
}

std::vector<double> zipf_shares(std::size_t n, double s) {
  std::vector<double> pi(n);
  double z = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    pi[c] = std::pow(static_cast<double>(c + 1), -s);
    z += pi[c];
  }
  for (double& p : pi) p /= z;
  return pi;
}

std::vector<double> class_prototypes(const SceneSpec& spec) {
  CounterRng rng(spec.seed, "prototypes");
  const double sd = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  std::vector<double> mu(spec.n_classes * spec.input_dim);
  for (double& x : mu) x = sd * rng.normal();
  return mu;
}

LabelMask generate_labels(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  CounterRng rng(spec.seed, "layout", index);
  const auto shares = zipf_shares(spec.n_classes, spec.zipf_s);
  std::vector<double> cdf(shares.size());
  std::partial_sum(shares.begin(), shares.end(), cdf.begin());

  const auto tiles = split_tiles(spec, rng);
  LabelMask mask(spec.height, spec.width, std::vector<std::uint16_t>(spec.height * spec.width, 0));
  bool has_background = false;
  for (const auto& t : tiles) {
    const auto cls = static_cast<std::uint16_t>(draw_class(cdf, rng));
    const bool disc = spec.palette == ShapePalette::discs ||
                      (spec.palette == ShapePalette::both && rng.uniform() < 0.5);
    for (std::size_t r = t.r0; r < t.r0 + t.rows; ++r) {
      for (std::size_t c = t.c0; c < t.c0 + t.cols; ++c) {
        const std::uint16_t v = (!disc || inside_disc(t, r, c)) ? cls : 0;
        mask.labels[r * spec.width + c] = v;
        has_background = has_background || v == 0;
      }
    }
  }
  if (!has_background) {
    // Background must appear in every scene: repaint the smallest tile.
    const auto smallest = std::min_element(tiles.begin(), tiles.end(), [](auto& a, auto& b) {
      return a.rows * a.cols < b.rows * b.cols;
    });
    for (std::size_t r = smallest->r0; r < smallest->r0 + smallest->rows; ++r) {
      for (std::size_t c = smallest->c0; c < smallest->c0 + smallest->cols; ++c) {
        mask.labels[r * spec.width + c] = 0;
      }
    }
  }
  return mask;
}

Instance generate(const SceneSpec& spec, std::uint64_t index) {
  LabelMask labels = generate_labels(spec, index);
  const std::size_t d = spec.input_dim, hw = labels.pixels();
  const auto mu = class_prototypes(spec);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));

  CounterRng drift_rng(spec.seed, "drift", index);
  std::vector<double> drift(d);
  for (double& x : drift) x = spec.drift * sd * drift_rng.normal();

  CounterRng noise_rng(spec.seed, "noise", index);
  std::vector<double> obs(d * hw);
  for (std::size_t p = 0; p < hw; ++p) {
    const std::size_t y = labels.labels[p];
    for (std::size_t k = 0; k < d; ++k) {
      const double eps = spec.noise > 0.0 ? spec.noise * sd * noise_rng.normal() : 0.0;
      obs[k * hw + p] = mu[y * d + k] + drift[k] + eps;
    }
  }
  Instance inst;
  inst.observation = Grid::from_values({d, spec.height, spec.width}, std::move(obs));
  inst.labels = std::move(labels);
  inst.frequencies = Grid::from_values({spec.n_classes}, zipf_shares(spec.n_classes, spec.zipf_s));
  return inst;
}

Grid dataset_frequencies(const SceneSpec& spec, std::size_t count) {
  if (count == 0) throw ContractError("dataset_frequencies: count must be >= 1");
  std::vector<double> counts(spec.n_classes, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const auto mask = generate_labels(spec, i);
    for (auto l : mask.labels) {
      if (l != kIgnoreLabel) counts[l] += 1.0;
    }
  }
  double total = 0.0;
  for (double c : counts) total += c;
  for (double& c : counts) c /= total;
  return Grid::from_values({spec.n_classes}, std::move(counts));
}

void write_instance(std::ostream& out, const Instance& instance, std::size_t n_classes) {
  const auto& obs = instance.observation;
  out.write("ECSY", 4);
  put_le<std::uint32_t>(out, kInstanceFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(n_classes));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(obs.dim(0)));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(obs.dim(1)));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(obs.dim(2)));
  for (auto l : instance.labels.labels) put_le<std::uint16_t>(out, l);
  for (double v : obs.values()) put_le<float>(out, static_cast<float>(v));
}

}  // namespace ecac
