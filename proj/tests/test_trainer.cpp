#include <doctest.h>

#include <cmath>

#include "ecac/errors.hpp"
#include "ecac/metrics.hpp"
#include "ecac/trainer.hpp"
#include "support.hpp"

using namespace ecac;
using ecac::test::random_grid;
using ecac::test::random_labels;

namespace {

ModelConfig micro_model(HeadKind head) {
  ModelConfig c;
  c.n_classes = 3;
  c.input_dim = 6;
  c.feature_dim = 4;
  c.head = head;
  return c;
}

Instance micro_instance(CounterRng& rng, std::size_t n = 3, std::size_t d_in = 6) {
  Instance inst;
  inst.observation = random_grid({d_in, 4, 4}, rng);
  inst.labels = random_labels(4, 4, n, rng, 0.1);
  inst.labels.labels[0] = 0;
  inst.frequencies = Grid::full({n}, 1.0 / static_cast<double>(n));
  return inst;
}

// beta * L_IV has steep early gradients; unclipped SGD at these rates diverges.
OptimState clipped(double lr, std::uint64_t iters) {
  OptimConfig c{lr, 0.9, 0.9, iters};
  c.clip_norm = 1.0;
  return OptimState(c);
}

std::vector<double> flat_params(const Model& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) out.insert(out.end(), p.grid.values().begin(), p.grid.values().end());
  return out;
}

}  // namespace

TEST_CASE("poly learning rate") {
  CHECK(poly_lr(0.01, 0, 1000, 0.9) == 0.01);
  CHECK(poly_lr(0.01, 1000, 1000, 0.9) == 0.0);
  CHECK(std::abs(poly_lr(0.01, 500, 1000, 0.5) - 0.01 * std::sqrt(0.5)) < 1e-18);
  CHECK(std::abs(poly_lr(0.02, 250, 1000, 0.9) - 0.02 * std::pow(0.75, 0.9)) < 1e-18);
  for (std::uint64_t t = 1; t <= 1000; ++t) CHECK(poly_lr(0.01, t, 1000, 0.9) < poly_lr(0.01, t - 1, 1000, 0.9));
  CHECK_THROWS_AS(poly_lr(0.01, 1001, 1000, 0.9), ScheduleError);
  CHECK_THROWS_AS(poly_lr(0.01, 0, 0, 0.9), ScheduleError);
}

TEST_CASE("sgd with momentum") {
  SUBCASE("momentum 0 is plain gradient descent") {
    Grid t = Grid::from_values({3}, {1, -2, 0.5}, true);
    backward(sum(mul(t, t)));  // g = 2t
    std::vector<NamedGrid> ps{{"t", t}};
    OptimState st({0.1, 0.0, 0.9, 10});
    sgd_step(ps, st, 0);
    CHECK(t.values()[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(t.values()[1] == doctest::Approx(-1.6).epsilon(1e-15));
    CHECK(t.values()[2] == doctest::Approx(0.4).epsilon(1e-15));
  }
  SUBCASE("zero gradient leaves parameters fixed") {
    Grid t = Grid::from_values({2}, {1, 2}, true);
    std::vector<NamedGrid> ps{{"t", t}};
    OptimState st({0.1, 0.9, 0.9, 10});
    for (std::uint64_t i = 0; i < 5; ++i) sgd_step(ps, st, i);
    CHECK(t.values()[0] == 1.0);
    CHECK(t.values()[1] == 2.0);
  }
  SUBCASE("quadratic bowl follows the heavy-ball recurrence") {
    Grid t = Grid::from_values({1}, {3.0}, true);
    std::vector<NamedGrid> ps{{"t", t}};
    OptimState st({0.05, 0.9, 0.9, 100});
    double theta = 3.0, v = 0.0;
    for (std::uint64_t i = 0; i < 100; ++i) {
      t.zero_grad();
      backward(scale(sum(mul(t, t)), 0.5));
      sgd_step(ps, st, i);
      v = 0.9 * v + theta;
      theta -= poly_lr(0.05, i, 100, 0.9) * v;
      CHECK(std::abs(t.values()[0] - theta) < 1e-10);
    }
    CHECK(std::abs(theta) < 3.0);
  }
  SUBCASE("global norm clipping") {
    Grid a = Grid::from_values({1}, {3.0}, true), b = Grid::from_values({1}, {4.0}, true);
    backward(add(scale(sum(mul(a, a)), 0.5), scale(sum(mul(b, b)), 0.5)));  // g = (3, 4), |g| = 5
    std::vector<NamedGrid> ps{{"a", a}, {"b", b}};
    OptimConfig c{1.0, 0.0, 0.9, 10};
    c.clip_norm = 1.0;
    OptimState st(c);
    sgd_step(ps, st, 0);
    CHECK(std::abs(a.values()[0] - (3.0 - 0.6)) < 1e-15);
    CHECK(std::abs(b.values()[0] - (4.0 - 0.8)) < 1e-15);
  }
  SUBCASE("velocity of the wrong size is rejected") {
    Grid t = Grid::from_values({1}, {1.0}, true);
    backward(sum(t));
    std::vector<NamedGrid> ps{{"weights", t}};
    OptimState st({0.1, 0.0, 0.9, 10});
    st.velocity["weights"] = {0.0, 0.0};
    CHECK_THROWS_AS(sgd_step(ps, st, 0), DimensionError);
  }
}

TEST_CASE("zero learning rate leaves the model unchanged") {
  CounterRng rng(1, "t");
  for (auto head : {HeadKind::vanilla, HeadKind::ecac}) {
    Model m = Model::init(micro_model(head), 3);
    const auto before = flat_params(m);
    OptimState st({0.0, 0.9, 0.9, 10});
    const auto w = class_weights(Grid::full({3}, 1.0 / 3), 0.5);
    const Instance inst = micro_instance(rng);
    train_step({&inst, 1}, m, st, w, LossConfig{}, 0);
    CHECK(flat_params(m) == before);
  }
}

TEST_CASE("a one-class problem is fit quickly") {
  ModelConfig c = micro_model(HeadKind::vanilla);
  c.n_classes = 2;
  Model m = Model::init(c, 1);
  CounterRng rng(2, "t");
  Instance inst;
  inst.observation = random_grid({6, 4, 4}, rng);
  inst.labels = LabelMask(4, 4, std::vector<std::uint16_t>(16, 1));
  inst.frequencies = Grid::full({2}, 0.5);
  OptimState st({0.5, 0.9, 0.9, 200});
  const auto w = class_weights(inst.frequencies, 0.0);
  for (std::uint64_t i = 0; i < 200; ++i) train_step({&inst, 1}, m, st, w, LossConfig{}, i);
  CHECK(mean_ce(m.predict_logits(inst.observation), inst.labels).item() < 0.01);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run = [] {
    Model m = Model::init(micro_model(HeadKind::ecac), 9);
    CounterRng rng(9, "t");
    OptimState st = clipped(0.05, 30);
    const auto w = class_weights(Grid::from_values({3}, {0.5, 0.3, 0.2}), 0.5);
    LossConfig lc;
    lc.memory_delay = 10;
    std::vector<double> totals;
    for (std::uint64_t i = 0; i < 30; ++i) {
      const Instance inst = micro_instance(rng);
      totals.push_back(train_step({&inst, 1}, m, st, w, lc, i).losses.total.item());
    }
    auto p = flat_params(m);
    p.insert(p.end(), totals.begin(), totals.end());
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("memory loss stays zero before the delay during training") {
  Model m = Model::init(micro_model(HeadKind::ecac), 4);
  CounterRng rng(4, "t");
  OptimState st = clipped(0.05, 20);
  const auto w = class_weights(Grid::full({3}, 1.0 / 3), 0.5);
  LossConfig lc;
  lc.memory_delay = 10;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Instance inst = micro_instance(rng);
    const auto r = train_step({&inst, 1}, m, st, w, lc, i);
    if (i < 10) {
      CHECK(r.losses.memory.item() == 0.0);
    } else {
      CHECK(r.losses.memory.item() > 0.0);
    }
  }
}

TEST_CASE("inference never reads labels") {
  CounterRng rng(5, "t");
  for (auto head : {HeadKind::vanilla, HeadKind::ecac}) {
    Model m = Model::init(micro_model(head), 5);
    Instance a = micro_instance(rng), b = a;
    b.labels = random_labels(4, 4, 3, rng);
    const auto pa = predict_all(m, {&a, 1}), pb = predict_all(m, {&b, 1});
    CHECK(pa[0].labels == pb[0].labels);
  }
}

TEST_CASE("argmax takes the lowest index on ties") {
  const Grid s = Grid::from_values({3, 1, 2}, {1, 0, 1, 2, 0, 2});
  CHECK(argmax_labels(s).labels == std::vector<std::uint16_t>{0, 1});
}

TEST_CASE("frequency groups") {
  const Grid f = Grid::from_values({8}, {0.3, 0.02, 0.2, 0.1, 0.15, 0.05, 0.08, 0.1});
  // ranks: 0,7,1,3,2,6,5,4 (ties keep index order)
  CHECK(frequency_groups(f) == std::vector<int>{0, 2, 0, 1, 0, 2, 1, 1});
  const Grid three = Grid::from_values({3}, {0.2, 0.5, 0.3});
  CHECK(frequency_groups(three) == std::vector<int>{2, 0, 1});
}

TEST_CASE("summarize examples") {
  const std::vector<int> groups{0, 1};
  const LabelMask truth(1, 4, {0, 0, 1, 1});
  SUBCASE("perfect predictions") {
    ConfusionMatrix cm(2);
    cm.add(truth, truth);
    const auto r = summarize(cm, groups);
    CHECK(r.miou == 1.0);
    CHECK(r.pixel_accuracy == 1.0);
  }
  SUBCASE("constant prediction on balanced data") {
    ConfusionMatrix cm(2);
    cm.add(truth, LabelMask(1, 4, {0, 0, 0, 0}));
    const auto r = summarize(cm, groups);
    CHECK(r.iou[0] == 0.5);
    CHECK(r.iou[1] == 0.0);
    CHECK(r.miou == 0.25);
    CHECK(r.pixel_accuracy == 0.5);
    CHECK(r.group_miou[0] == 0.5);
    CHECK(r.group_miou[1] == 0.0);
    CHECK(std::isnan(r.group_miou[2]));
  }
  SUBCASE("ignored pixels are not scored") {
    ConfusionMatrix cm(2);
    cm.add(LabelMask(1, 2, {0, kIgnoreLabel}), LabelMask(1, 2, {0, 1}));
    CHECK(cm.total() == 1);
    const auto r = summarize(cm, groups);
    CHECK(!r.has_union[1]);
    CHECK(r.miou == 1.0);
  }
}

TEST_CASE("evaluate matches a pixel-loop oracle") {
  CounterRng rng(6, "t");
  const std::vector<int> groups{0, 1, 2};
  for (int trial = 0; trial < 100; ++trial) {
    Model m = Model::init(micro_model(trial % 2 ? HeadKind::ecac : HeadKind::vanilla), 100 + trial);
    std::vector<Instance> data;
    for (int i = 0; i < 3; ++i) data.push_back(micro_instance(rng));
    const auto report = evaluate(m, data, groups);
    const auto preds = predict_all(m, data);
    double tp[3] = {}, fp[3] = {}, fn[3] = {};
    double correct = 0, total = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      for (std::size_t p = 0; p < 16; ++p) {
        const auto y = data[i].labels.labels[p];
        if (y == kIgnoreLabel) continue;
        const auto q = preds[i].labels[p];
        ++total;
        if (y == q) {
          ++tp[y];
          ++correct;
        } else {
          ++fn[y];
          ++fp[q];
        }
      }
    }
    double miou = 0, scored = 0;
    for (int c = 0; c < 3; ++c) {
      const double u = tp[c] + fp[c] + fn[c];
      if (u == 0) continue;
      CHECK(std::abs(report.iou[c] - tp[c] / u) < 1e-12);
      CHECK(std::abs(report.group_miou[c] - tp[c] / u) < 1e-12);
      miou += tp[c] / u;
      ++scored;
    }
    CHECK(std::abs(report.miou - miou / scored) < 1e-12);
    CHECK(std::abs(report.pixel_accuracy - correct / total) < 1e-12);
    CHECK(report.pixels == static_cast<std::uint64_t>(total));
  }
  Model m = Model::init(micro_model(HeadKind::vanilla), 1);
  CHECK_THROWS_AS(evaluate(m, {}, groups), ContractError);
}

TEST_CASE("model parameters") {
  const Model v = Model::init(micro_model(HeadKind::vanilla), 1);
  CHECK(v.parameter_count() == 4 * 6 + 4 + 3 * 4 + 3);
  CHECK(v.encoder_parameter_count() == 28);
  const Model e = Model::init(micro_model(HeadKind::ecac), 1);
  const std::size_t d = 4, n = 3;
  CHECK(e.parameter_count() - e.encoder_parameter_count() ==
        2 * d * d + d * d + 2 * d + 2 * 2 * n + n * d + n);
  CHECK(&e.student->coarse->weight.values()[0] == &e.classifier.weight.values()[0]);
  CHECK_THROWS_AS(parse_head_kind("mlp"), ConfigError);
  CHECK(parse_head_kind(head_kind_name(HeadKind::ecac)) == HeadKind::ecac);
}
