#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ecac/errors.hpp"
#include "ecac/losses.hpp"
#include "support.hpp"

using namespace ecac;
using ecac::test::cp;
using ecac::test::random_grid;
using ecac::test::random_labels;

namespace {

Grid freq(std::vector<double> f) {
  const std::size_t n = f.size();
  return Grid::from_values({n}, std::move(f));
}

// -log softmax(logits)[y, p] by direct evaluation.
double nll(const Grid& logits, std::size_t y, std::size_t p) {
  const std::size_t n = logits.dim(0);
  double z = 0.0;
  for (std::size_t c = 0; c < n; ++c) z += std::exp(cp(logits, c, p));
  return -(cp(logits, y, p) - std::log(z));
}

std::vector<double> probs_at(const Grid& logits, std::size_t p) {
  const std::size_t n = logits.dim(0);
  std::vector<double> out(n);
  double z = 0.0;
  for (std::size_t c = 0; c < n; ++c) z += (out[c] = std::exp(cp(logits, c, p)));
  for (double& v : out) v /= z;
  return out;
}

}  // namespace

TEST_CASE("class weights") {
  SUBCASE("rho = 0 is uniform") {
    const auto w = class_weights(freq({0.7, 0.2, 0.1}), 0.0);
    for (double v : w.weights.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  }
  SUBCASE("two-class inversion") {
    const auto w = class_weights(freq({0.75, 0.25}), 1.0);
    CHECK(std::abs(w.weights.values()[0] - 0.25) < 1e-15);
    CHECK(std::abs(w.weights.values()[1] - 0.75) < 1e-15);
  }
  SUBCASE("square-root weights by hand") {
    const auto w = class_weights(freq({0.64, 0.32, 0.04}), 0.5);
    const double s = 1.25 + std::sqrt(1 / 0.32) + 5.0;
    CHECK(std::abs(w.weights.values()[0] - 1.25 / s) < 1e-15);
    CHECK(std::abs(w.weights.values()[1] - std::sqrt(1 / 0.32) / s) < 1e-15);
    CHECK(std::abs(w.weights.values()[2] - 5.0 / s) < 1e-15);
    CHECK(std::abs(w.weights.values()[2] - 0.6236150326307661) < 1e-15);
  }
  SUBCASE("non-positive frequency names the class") {
    try {
      class_weights(freq({0.5, 0.0, 0.5}), 0.5);
      FAIL("expected a frequency error");
    } catch (const FrequencyError& e) {
      CHECK(std::string(e.what()).find("class 1") != std::string::npos);
    }
  }
}

TEST_CASE("class weights sum to one and favour the rarest class as rho grows") {
  CounterRng rng(1, "t");
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(10);
    std::vector<double> f(n);
    for (double& x : f) x = 1e-4 + rng.uniform();
    const std::size_t rare = static_cast<std::size_t>(std::min_element(f.begin(), f.end()) - f.begin());
    double prev = -1.0;
    for (double rho : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0}) {
      const auto w = class_weights(freq(f), rho);
      double s = 0.0;
      for (double v : w.weights.values()) {
        CHECK(v > 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
      CHECK(w.weights.values()[rare] > prev);
      prev = w.weights.values()[rare];
    }
  }
}

TEST_CASE("re-weighted cross-entropy") {
  SUBCASE("saturated logits") {
    std::vector<double> v(3 * 4, 0.0);
    const LabelMask y(2, 2, {0, 1, 2, 1});
    for (std::size_t p = 0; p < 4; ++p) v[y.labels[p] * 4 + p] = 1e3;
    const auto w = class_weights(freq({0.2, 0.3, 0.5}), 0.5);
    CHECK(reweighted_ce(Grid::from_values({3, 2, 2}, v), y, w).item() < 1e-6);
  }
  SUBCASE("uniform logits and weights give ln(n)/n") {
    const auto w = class_weights(freq({0.1, 0.2, 0.3, 0.4}), 0.0);
    const double l = reweighted_ce(Grid::zeros({4, 2, 2}), LabelMask(2, 2, {0, 1, 2, 3}), w).item();
    CHECK(std::abs(l - std::log(4.0) / 4.0) < 1e-15);
  }
  SUBCASE("pixel-loop oracle and the uniform scaling identity") {
    CounterRng rng(2, "t");
    for (int trial = 0; trial < 100; ++trial) {
      const Grid logits = random_grid({3, 2, 2}, rng, 2.0);
      auto labels = random_labels(2, 2, 3, rng, 0.2);
      labels.labels[0] = 1;
      std::vector<double> f(3);
      for (double& x : f) x = 0.01 + rng.uniform();
      const auto w = class_weights(freq(f), 0.5);
      double want = 0.0;
      std::size_t valid = 0;
      for (std::size_t p = 0; p < 4; ++p) {
        if (labels.ignored(p)) continue;
        ++valid;
        want += w.weights.values()[labels.labels[p]] * nll(logits, labels.labels[p], p);
      }
      want /= static_cast<double>(valid);
      CHECK(std::abs(reweighted_ce(logits, labels, w).item() - want) < 1e-10);
      const auto uniform = class_weights(freq(f), 0.0);
      CHECK(std::abs(3.0 * reweighted_ce(logits, labels, uniform).item() -
                     mean_ce(logits, labels).item()) < 1e-12);
    }
  }
  const auto w = class_weights(freq({0.5, 0.5}), 0.5);
  CHECK_THROWS_AS(reweighted_ce(Grid::zeros({2, 1, 2}), LabelMask(1, 2, {255, 255}), w),
                  EmptySupervisionError);
  CHECK_THROWS_AS(reweighted_ce(Grid::zeros({2, 1, 2}), LabelMask(1, 2, {0, 4}), w),
                  LabelRangeError);
  CHECK_THROWS_AS(reweighted_ce(Grid::zeros({2, 2, 2}), LabelMask(1, 2, {0, 1}), w),
                  DimensionError);
}

TEST_CASE("pixel entropy") {
  const Grid onehot = Grid::from_values({3, 1, 1}, {0, 1, 0});
  CHECK(pixel_entropy(onehot).item() == 0.0);
  const Grid uniform = Grid::full({4, 1, 1}, 0.25);
  CHECK(std::abs(pixel_entropy(uniform).item() - 1.0) < 1e-15);
  const Grid p = Grid::from_values({3, 1, 1}, {0.5, 0.25, 0.25});
  const double want = -(0.5 * std::log(0.5) + 0.5 * std::log(0.25)) / std::log(3.0);
  CHECK(std::abs(pixel_entropy(p).item() - want) < 1e-12);
  CHECK_THROWS_AS(pixel_entropy(Grid::from_values({2, 1, 1}, {0.5, 0.6})), NormalizationError);
}

TEST_CASE("distillation loss") {
  SUBCASE("teacher one-hot everywhere gives zero") {
    std::vector<double> t(2 * 3, -1e3);
    t[0] = t[4] = t[2] = 1e3;  // pixel 0,2 -> class 0; pixel 1 -> class 1
    CounterRng rng(3, "t");
    const double l = distillation_loss(Grid::from_values({2, 1, 3}, t), random_grid({2, 1, 3}, rng),
                                       LabelMask(1, 3, {0, 1, 0}))
                         .item();
    CHECK(l == 0.0);
  }
  SUBCASE("self-distillation equals the weighted teacher entropy floor") {
    CounterRng rng(4, "t");
    const Grid t = random_grid({3, 2, 3}, rng);
    const auto labels = random_labels(2, 3, 3, rng);
    const double l = distillation_loss(t, t, labels).item();
    const Grid h = pixel_entropy(softmax(t, 0));
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      double num = 0.0, den = 0.0;
      for (std::size_t p = 0; p < 6; ++p) {
        if (labels.labels[p] != k) continue;
        const auto pr = probs_at(t, p);
        double ent = 0.0;
        for (double q : pr) ent -= q * std::log(q);
        num += h.values()[p] * ent;
        den += h.values()[p];
      }
      if (den > 0.0) {
        total += num / den;
        ++present;
      }
    }
    CHECK(std::abs(l - total / static_cast<double>(present)) < 1e-12);
  }
  SUBCASE("triple-loop oracle") {
    CounterRng rng(5, "t");
    for (int trial = 0; trial < 100; ++trial) {
      const Grid t = random_grid({3, 2, 3}, rng, 2.0), s = random_grid({3, 2, 3}, rng, 2.0);
      auto labels = random_labels(2, 3, 3, rng, 0.15);
      labels.labels[1] = 2;
      double total = 0.0;
      std::size_t present = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        double num = 0.0, den = 0.0;
        bool seen = false;
        for (std::size_t p = 0; p < 6; ++p) {
          if (labels.labels[p] != k) continue;
          seen = true;
          const auto pt = probs_at(t, p), ps = probs_at(s, p);
          double ent = 0.0, ce = 0.0;
          for (std::size_t c = 0; c < 3; ++c) {
            ent -= pt[c] * std::log(pt[c]);
            ce -= pt[c] * std::log(ps[c]);
          }
          ent /= std::log(3.0);
          num += ent * ce;
          den += ent;
        }
        if (seen) {
          total += num / std::max(den, 1e-12);
          ++present;
        }
      }
      CHECK(std::abs(distillation_loss(t, s, labels).item() - total / static_cast<double>(present)) < 1e-10);

      double plain = 0.0;
      std::size_t valid = 0;
      for (std::size_t p = 0; p < 6; ++p) {
        if (labels.ignored(p)) continue;
        ++valid;
        const auto pt = probs_at(t, p), ps = probs_at(s, p);
        for (std::size_t c = 0; c < 3; ++c) plain -= pt[c] * std::log(ps[c]);
      }
      CHECK(std::abs(distillation_loss(t, s, labels, DistillForm::plain).item() -
                     plain / static_cast<double>(valid)) < 1e-10);
    }
  }
  SUBCASE("gradient flows into the student only and vanishes at the teacher") {
    CounterRng rng(6, "t");
    Grid t = random_grid({3, 2, 2}, rng, 1.0, true);
    Grid s = Grid::from_values({3, 2, 2}, std::vector<double>(t.values().begin(), t.values().end()), true);
    const auto labels = random_labels(2, 2, 3, rng);
    backward(distillation_loss(t, s, labels));
    CHECK(!t.has_grad());
    double norm = 0.0;
    for (double g : s.grad()) norm += g * g;
    CHECK(std::sqrt(norm) < 1e-8);
  }
  CHECK_THROWS_AS(distillation_loss(Grid::zeros({2, 1, 1}), Grid::zeros({2, 1, 1}), LabelMask(1, 1, {255})),
                  EmptySupervisionError);
  CHECK_THROWS_AS(distillation_loss(Grid::zeros({2, 1, 1}), Grid::zeros({3, 1, 1}), LabelMask(1, 1, {0})),
                  DimensionError);
}

TEST_CASE("intra-class similarity") {
  SUBCASE("shared logit vector gives similarity one") {
    const Grid l = Grid::from_values({2, 1, 3}, {1, 1, 5, 2, 2, -1});
    const Grid s = intra_class_similarity(l, LabelMask(1, 3, {0, 0, 1}));
    for (double v : s.values()) CHECK(std::abs(v - 1.0) < 1e-12);
  }
  SUBCASE("ignore pixels read zero") {
    CounterRng rng(7, "t");
    const Grid s = intra_class_similarity(random_grid({2, 1, 3}, rng), LabelMask(1, 3, {0, 255, 1}));
    CHECK(s.values()[1] == 0.0);
  }
  SUBCASE("mean-then-cosine oracle and bounds") {
    CounterRng rng(8, "t");
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 3, hw = 9;
      const Grid l = random_grid({n, 3, 3}, rng, 2.0);
      const auto labels = random_labels(3, 3, n, rng, 0.1);
      const Grid s = intra_class_similarity(l, labels);
      std::vector<double> center(n * n, 0.0);
      std::vector<std::size_t> count(n, 0);
      for (std::size_t p = 0; p < hw; ++p) {
        if (labels.ignored(p)) continue;
        ++count[labels.labels[p]];
        for (std::size_t c = 0; c < n; ++c) center[labels.labels[p] * n + c] += cp(l, c, p);
      }
      for (std::size_t p = 0; p < hw; ++p) {
        if (labels.ignored(p)) {
          CHECK(s.values()[p] == 0.0);
          continue;
        }
        const std::size_t k = labels.labels[p];
        double dot = 0, a = 0, b = 0;
        for (std::size_t c = 0; c < n; ++c) {
          const double m = center[k * n + c] / static_cast<double>(count[k]);
          dot += cp(l, c, p) * m;
          a += cp(l, c, p) * cp(l, c, p);
          b += m * m;
        }
        const double want = dot / (std::max(std::sqrt(a), 1e-12) * std::max(std::sqrt(b), 1e-12));
        CHECK(std::abs(s.values()[p] - want) < 1e-10);
        CHECK(s.values()[p] >= -1.0 - 1e-12);
        CHECK(s.values()[p] <= 1.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("intra-variance loss") {
  const LabelMask y(1, 3, {0, 1, 0});
  const Grid a = Grid::from_values({1, 3}, {0.3, -0.2, 0.9});
  CHECK(intra_variance_loss(a, a, y).item() == 0.0);
  const Grid b = Grid::from_values({1, 3}, {0.2, -0.3, 0.8});
  CHECK(std::abs(intra_variance_loss(a, b, y).item() - 0.01) < 1e-12);
  CounterRng rng(9, "t");
  for (int trial = 0; trial < 20; ++trial) {
    const Grid s = random_grid({2, 3}, rng), t = random_grid({2, 3}, rng);
    const auto labels = random_labels(2, 3, 2, rng, 0.3);
    if (labels.valid_pixels() == 0) continue;
    double want = 0.0;
    for (std::size_t p = 0; p < 6; ++p) {
      if (!labels.ignored(p)) want += std::pow(s.values()[p] - t.values()[p], 2);
    }
    want /= static_cast<double>(labels.valid_pixels());
    CHECK(std::abs(intra_variance_loss(s, t, labels).item() - want) < 1e-12);
  }
  CHECK_THROWS_AS(intra_variance_loss(a, a, LabelMask(1, 3, {255, 255, 255})), EmptySupervisionError);
  CHECK_THROWS_AS(intra_variance_loss(a, Grid::zeros({3, 1}), y), DimensionError);
}

TEST_CASE("memory loss is gated by the delay") {
  CounterRng rng(10, "t");
  const Grid l = random_grid({3, 2, 2}, rng);
  const auto y = random_labels(2, 2, 3, rng);
  const Grid early = memory_loss(l, y, 999, kDefaultMemoryDelay);
  CHECK(early.item() == 0.0);
  CHECK(!early.requires_grad());
  CHECK(std::abs(memory_loss(l, y, 1000, 1000).item() - mean_ce(l, y).item()) < 1e-15);
  double want = 0.0;
  for (std::size_t p = 0; p < 4; ++p) want += nll(l, y.labels[p], p) / 4.0;
  CHECK(std::abs(memory_loss(l, y, 5000, 1000).item() - want) < 1e-10);

  std::vector<double> peaked(3 * 4, 0.0);
  for (std::size_t p = 0; p < 4; ++p) peaked[y.labels[p] * 4 + p] = 1e3;
  CHECK(memory_loss(Grid::from_values({3, 2, 2}, peaked), y, 1000, 1000).item() < 1e-6);
}

TEST_CASE("total loss") {
  auto s = [](double v) { return Grid::scalar(v); };
  CHECK(total_loss({s(0), s(0), s(0), s(0), s(0)}, 1, 50, 2000, 1000).total.item() == 0.0);
  const auto b = total_loss({s(1), s(1), s(1), s(1), s(0.01)}, kDefaultAlpha, kDefaultBeta, 2000, 1000);
  CHECK(std::abs(b.total.item() - 4.5) < 1e-12);
  CHECK(b.alpha == 1.0);
  CHECK(b.beta == 50.0);
  CounterRng rng(11, "t");
  for (int trial = 0; trial < 50; ++trial) {
    double v[5];
    for (double& x : v) x = rng.uniform() * 3;
    const double a = rng.uniform() * 10, be = rng.uniform() * 100;
    const auto t = total_loss({s(v[0]), s(v[1]), s(v[2]), s(v[3]), s(v[4])}, a, be, 5000, 1000);
    CHECK(std::abs(t.total.item() - (v[0] + v[1] + v[2] + a * v[3] + be * v[4])) < 1e-12);
  }
  try {
    Grid bad = s(1);
    total_loss({s(0), s(0), s(0), s(0), Grid::zeros({2})}, 1, 1, 0, 0);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("L_IV") != std::string::npos);
  }
  CHECK_THROWS_AS(total_loss({s(0), s(0), s(0.5), s(0), s(0)}, 1, 1, 10, 1000), ContractError);
}

TEST_CASE("memory loss before the delay adds no gradient") {
  CounterRng rng(12, "t");
  Grid logits = random_grid({3, 2, 2}, rng, 1.0, true);
  const auto y = random_labels(2, 2, 3, rng);
  const auto w = class_weights(freq({0.5, 0.3, 0.2}), 0.5);
  backward(total_loss({reweighted_ce(logits, y, w), Grid::scalar(0), memory_loss(logits, y, 10, 1000),
                       Grid::scalar(0), Grid::scalar(0)},
                      1, 50, 10, 1000)
               .total);
  const std::vector<double> with(logits.grad().begin(), logits.grad().end());
  logits.zero_grad();
  backward(reweighted_ce(logits, y, w));
  CHECK(std::vector<double>(logits.grad().begin(), logits.grad().end()) == with);
}

TEST_CASE("every loss passes grad_check on a random 3-class instance") {
  CounterRng rng(13, "t");
  Grid t = random_grid({3, 2, 2}, rng, 1.0, true);
  Grid s = random_grid({3, 2, 2}, rng, 1.0, true);
  auto y = random_labels(2, 2, 3, rng);
  y.labels[3] = kIgnoreLabel;
  const auto w = class_weights(freq({0.6, 0.3, 0.1}), 0.5);
  const Grid frozen = t.detach();
  const std::pair<const char*, std::function<Grid()>> cases[] = {
      {"rce", [&] { return reweighted_ce(s, y, w); }},
      {"kl", [&] { return distillation_loss(frozen, s, y); }},
      {"kl_plain", [&] { return distillation_loss(frozen, s, y, DistillForm::plain); }},
      {"iv", [&] { return intra_variance_loss(intra_class_similarity(s, y), intra_class_similarity(t, y), y); }},
      {"memory", [&] { return memory_loss(s, y, 1000, 1000); }},
  };
  for (const auto& [name, fn] : cases) {
    INFO(name);
    CHECK(grad_check(name, fn, {{"teacher", t}, {"student", s}}).max_relative_error < 1e-4);
  }
}
