#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ecac/errors.hpp"
#include "ecac/grid.hpp"
#include "support.hpp"

using namespace ecac;
using ecac::test::random_grid;

TEST_CASE("construction and access") {
  const Grid g = Grid::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(g.rank() == 2);
  CHECK(g.size() == 6);
  CHECK(g.at({1, 2}) == 6);
  CHECK(Grid::scalar(4).item() == 4);
  CHECK(Grid().rank() == 0);
  CHECK_THROWS_AS(Grid::from_values({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Grid::from_values({1}, {NAN}), NumericError);
  CHECK_THROWS_AS(g.item(), ContractError);
  CHECK_THROWS_AS(g.grad(), ContractError);
}

TEST_CASE("operation results are immutable") {
  Grid x = Grid::full({2}, 1.0, true);
  Grid y = scale(x, 2.0);
  CHECK_THROWS_AS(y.mutable_values(), ContractError);
  x.mutable_values()[0] = 3.0;
  CHECK(x.values()[0] == 3.0);
}

TEST_CASE("backward of sum is ones and accumulates") {
  Grid x = Grid::zeros({2, 3}, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 2.0);
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == 0.0);
  CHECK_THROWS_AS(backward(x), ContractError);
}

TEST_CASE("half squared norm has gradient x") {
  CounterRng rng(3, "t");
  Grid x = random_grid({5}, rng, 1.0, true);
  backward(scale(sum(mul(x, x)), 0.5));
  for (std::size_t i = 0; i < 5; ++i) CHECK(x.grad()[i] == doctest::Approx(x.values()[i]));
}

TEST_CASE("a node reached through two paths gets both contributions") {
  Grid x = Grid::from_values({1}, {2.0}, true);
  const Grid y = mul(x, x);
  backward(sum(add(y, y)));
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("matmul agrees with a triple loop") {
  CounterRng rng(5, "t");
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t p = 1 + rng.below(16), q = 1 + rng.below(16), r = 1 + rng.below(16);
    const Grid a = random_grid({p, q}, rng), b = random_grid({q, r}, rng);
    const Grid c = matmul(a, b);
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        double s = 0.0;
        for (std::size_t l = 0; l < q; ++l) s += a.at({i, l}) * b.at({l, j});
        CHECK(std::abs(c.at({i, j}) - s) < 1e-12);
      }
    }
  }
  CHECK_THROWS_AS(matmul(Grid::zeros({2, 3}), Grid::zeros({2, 3})), DimensionError);
}

TEST_CASE("log_softmax examples") {
  const Grid z = log_softmax(Grid::from_values({2}, {0, 0}), 0);
  CHECK(z.values()[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  CHECK(z.values()[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-15));

  CounterRng rng(9, "t");
  const Grid x = random_grid({5}, rng, 3.0);
  const Grid ls = log_softmax(x, 0);
  double norm = 0.0;
  for (double v : x.values()) norm += std::exp(v);
  double total = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(std::abs(ls.values()[i] - std::log(std::exp(x.values()[i]) / norm)) < 1e-10);
    total += std::exp(ls.values()[i]);
  }
  CHECK(std::abs(total - 1.0) < 1e-10);
}

TEST_CASE("softmax is shift invariant along its axis") {
  CounterRng rng(10, "t");
  for (int trial = 0; trial < 20; ++trial) {
    const Grid x = random_grid({4, 6}, rng, 2.0);
    const double c = 50.0 * rng.normal();
    for (std::size_t axis : {0u, 1u}) {
      const Grid a = softmax(x, axis);
      const Grid b = softmax(add(x, Grid::full({4, 6}, c)), axis);
      CHECK(test::max_abs_diff(a.values(), b.values()) < 1e-12);
      const Grid e = log_softmax(x, axis);
      // Each slice along the axis sums to one after exponentiation.
      const std::size_t slices = axis == 0 ? 6 : 4, len = axis == 0 ? 4 : 6;
      for (std::size_t s = 0; s < slices; ++s) {
        double t = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          t += std::exp(axis == 0 ? e.at({i, s}) : e.at({s, i}));
        }
        CHECK(std::abs(t - 1.0) < 1e-10);
      }
    }
  }
}

TEST_CASE("softmax stays finite on extreme logits") {
  const Grid s = softmax(Grid::from_values({3}, {1e300, -1e300, 0.0}), 0);
  for (double v : s.values()) CHECK(std::isfinite(v));
  CHECK(s.values()[0] == 1.0);
}

TEST_CASE("cosine similarity examples") {
  CHECK(cosine_similarity(Grid::from_values({3}, {1, 2, 3}), Grid::from_values({3}, {1, 2, 3}))
            .item() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(Grid::from_values({2}, {1, 0}), Grid::from_values({2}, {0, 1})).item() ==
        0.0);
  CounterRng rng(12, "t");
  for (int trial = 0; trial < 20; ++trial) {
    const Grid a = random_grid({7}, rng), b = random_grid({7}, rng);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < 7; ++i) {
      dot += a.values()[i] * b.values()[i];
      na += a.values()[i] * a.values()[i];
      nb += b.values()[i] * b.values()[i];
    }
    const double c = cosine_similarity(a, b).item();
    CHECK(std::abs(c - dot / std::sqrt(na * nb)) < 1e-12);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
  }
  // A zero vector is clamped rather than divided by zero.
  CHECK(cosine_similarity(Grid::zeros({3}), Grid::from_values({3}, {1, 1, 1})).item() == 0.0);
  CHECK_THROWS_AS(cosine_similarity(Grid::zeros({3}), Grid::zeros({4})), DimensionError);
}

TEST_CASE("grad_check examples") {
  SUBCASE("constant loss reports zero error") {
    Grid p = Grid::full({3}, 1.0, true);
    const auto r = grad_check("const", [] { return Grid::scalar(2.0); }, {{"p", p}});
    CHECK(r.max_relative_error == 0.0);
  }
  SUBCASE("theta squared at 3") {
    Grid t = Grid::from_values({1}, {3.0}, true);
    const auto r = grad_check("sq", [&] { return sum(mul(t, t)); }, {{"t", t}}, 1e-5);
    CHECK(std::abs(t.grad()[0] - 6.0) < 1e-7);
    CHECK(r.max_relative_error < 1e-7);
    CHECK(r.per_parameter.size() == 1);
    CHECK(r.step == 1e-5);
  }
  SUBCASE("step must lie in (0, 1e-3]") {
    Grid t = Grid::from_values({1}, {3.0}, true);
    auto f = [&] { return sum(t); };
    CHECK_THROWS_AS(grad_check("f", f, {{"t", t}}, 0.0), ContractError);
    CHECK_THROWS_AS(grad_check("f", f, {{"t", t}}, 2e-3), ContractError);
  }
  SUBCASE("non-deterministic loss is rejected") {
    Grid t = Grid::from_values({1}, {1.0}, true);
    int calls = 0;
    auto f = [&] { return scale(sum(t), 1.0 + 1e-3 * ++calls); };
    CHECK_THROWS_AS(grad_check("f", f, {{"t", t}}), ContractError);
  }
  CHECK(gradcheck_relative_error(0.0, 0.0) == 0.0);
  CHECK(gradcheck_relative_error(1e-9, 0.0) == doctest::Approx(0.1));
}

TEST_CASE("every primitive passes grad_check on random inputs") {
  CounterRng rng(21, "t");
  Grid a = random_grid({3, 4}, rng, 1.0, true);
  Grid b = random_grid({4, 2}, rng, 1.0, true);
  Grid c = random_grid({3, 4}, rng, 1.0, true);
  Grid rowb = random_grid({4}, rng, 1.0, true);
  Grid colb = random_grid({3}, rng, 1.0, true);
  Grid w = random_grid({3, 4}, rng);  // fixed weights break symmetries of sum()
  auto weighted = [&](const Grid& g) {
    return sum(mul(g, w));
  };
  const std::pair<const char*, std::function<Grid()>> cases[] = {
      {"matmul", [&] { return sum(mul(matmul(a, b), matmul(c, b))); }},
      {"transpose", [&] { return weighted(transpose(transpose(a))); }},
      {"reshape", [&] { return weighted(reshape(reshape(a, {12}), {3, 4})); }},
      {"add_sub_mul", [&] { return weighted(mul(sub(a, c), add(a, c))); }},
      {"relu", [&] { return weighted(relu(a)); }},
      {"row_bias", [&] { return weighted(add_row_bias(a, rowb)); }},
      {"col_bias", [&] { return weighted(mul(add_col_bias(a, colb), c)); }},
      {"scale_rows", [&] { return weighted(scale_rows(a, colb)); }},
      {"concat", [&] { return sum(mul(concat_cols(a, c), concat_cols(w, w))); }},
      {"softmax0", [&] { return weighted(softmax(a, 0)); }},
      {"softmax1", [&] { return weighted(softmax(a, 1)); }},
      {"log_softmax", [&] { return weighted(log_softmax(a, 0)); }},
      {"column_cosine", [&] { return sum(mul(column_cosine(a, c), rowb)); }},
  };
  for (const auto& [name, fn] : cases) {
    const auto r = grad_check(name, fn, {{"a", a}, {"b", b}, {"c", c}, {"rowb", rowb}, {"colb", colb}});
    INFO(name);
    CHECK(r.max_relative_error < 1e-4);
  }
}
