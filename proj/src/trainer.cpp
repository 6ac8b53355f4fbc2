#include "ecac/trainer.hpp"

#include <cmath>
#include <string>

#include "ecac/errors.hpp"
#include "ecac/metrics.hpp"
#include "ecac/random.hpp"

namespace ecac {

double poly_lr(double base, std::uint64_t iter, std::uint64_t max, double power) {
  if (max == 0) throw ScheduleError("poly_lr: max_iterations must be positive");
  if (iter > max) {
    throw ScheduleError("poly_lr: iteration " + std::to_string(iter) + " exceeds max_iterations " +
                        std::to_string(max));
  }
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max);
  return base * std::pow(frac, power);
}

OptimState::OptimState(OptimConfig c) : config(c) {}

double OptimState::lr(std::uint64_t iter) const {
  return poly_lr(config.base_lr, iter, config.max_iterations, config.poly_power);
}

void sgd_step(std::span<NamedGrid> params, OptimState& state, std::uint64_t iter) {
  const double lr = state.lr(iter);
  const double m = state.config.momentum;
  const double wd = state.config.weight_decay;
  double norm2 = 0.0;
  for (auto& p : params) {
    if (p.grid.has_grad()) {
      for (double g : p.grid.grad()) {
        if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite gradient in " + p.name);
        norm2 += g * g;
      }
    }
  }
  const double clip = state.config.clip_norm;
  const double norm = std::sqrt(norm2);
  const double gscale = clip > 0.0 && norm > clip ? clip / norm : 1.0;
  for (auto& p : params) {
    auto& v = state.velocity[p.name];
    auto theta = p.grid.mutable_values();
    if (v.empty()) v.assign(theta.size(), 0.0);
    if (v.size() != theta.size()) {
      throw DimensionError("sgd_step: velocity for " + p.name + " has " +
                           std::to_string(v.size()) + " entries, parameter has " +
                           std::to_string(theta.size()));
    }
    const bool has = p.grid.has_grad();
    const auto g = has ? p.grid.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = (has ? gscale * g[i] : 0.0) + wd * theta[i];
      v[i] = m * v[i] + gi;
      theta[i] -= lr * v[i];
    }
  }
}

std::string_view head_kind_name(HeadKind k) {
  return k == HeadKind::vanilla ? "vanilla" : "ecac";
}

HeadKind parse_head_kind(std::string_view name) {
  if (name == "vanilla") return HeadKind::vanilla;
  if (name == "ecac") return HeadKind::ecac;
  throw ConfigError("unknown head '" + std::string(name) + "' (expected vanilla or ecac)");
}

Model Model::init(const ModelConfig& c, std::uint64_t seed) {
  if (c.n_classes < 2 || c.feature_dim == 0 || c.input_dim == 0) {
    throw ConfigError("model needs n_classes >= 2 and positive dimensions");
  }
  Model m(c);
  CounterRng rng(seed, "init");
  const std::size_t d = c.feature_dim, n = c.n_classes;
  std::vector<double> w(d * c.input_dim);
  const double sd = std::sqrt(1.0 / static_cast<double>(c.input_dim));
  for (double& x : w) x = sd * rng.normal();
  m.encoder_weight = Grid::from_values({d, c.input_dim}, std::move(w), true);
  m.encoder_bias = Grid::zeros({d}, true);
  m.classifier = CoarseClassifier::init(n, d, rng);
  if (c.head == HeadKind::ecac) {
    const auto shared = ProjectorParams::init(d, rng, c.projector_relu);
    EcacHead t;
    t.role = HeadRole::teacher;
    t.projector = shared;
    t.calibration = CalibrationParams::identity(n, c.calibration);
    EcacHead s;
    s.role = HeadRole::student;
    s.projector = c.share_projector ? shared : ProjectorParams::init(d, rng, c.projector_relu);
    s.calibration = CalibrationParams::identity(n, c.calibration);
    s.coarse = m.classifier;
    t.validate();
    s.validate();
    m.teacher = std::move(t);
    m.student = std::move(s);
  }
  return m;
}

std::vector<NamedGrid> Model::parameters() const {
  std::vector<NamedGrid> out = {{"encoder.weight", encoder_weight},
                                {"encoder.bias", encoder_bias},
                                {"classifier.weight", classifier.weight},
                                {"classifier.bias", classifier.bias}};
  if (!teacher) return out;
  auto projector = [&](const std::string& prefix, const ProjectorParams& p) {
    out.push_back({prefix + "projector.w1", p.w1});
    out.push_back({prefix + "projector.b1", p.b1});
    out.push_back({prefix + "projector.w2", p.w2});
    out.push_back({prefix + "projector.b2", p.b2});
  };
  if (config.share_projector) {
    projector("", teacher->projector);
  } else {
    projector("teacher.", teacher->projector);
    projector("student.", student->projector);
  }
  if (config.calibration) {
    out.push_back({"teacher.calibration.gamma", teacher->calibration.gamma});
    out.push_back({"teacher.calibration.delta", teacher->calibration.delta});
    out.push_back({"student.calibration.gamma", student->calibration.gamma});
    out.push_back({"student.calibration.delta", student->calibration.delta});
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.grid.size();
  return total;
}

std::size_t Model::encoder_parameter_count() const {
  return encoder_weight.size() + encoder_bias.size();
}

Grid Model::encode(const Grid& observation) const {
  if (observation.rank() != 3 || observation.dim(0) != config.input_dim) {
    throw DimensionError("encode: expected [" + std::to_string(config.input_dim) +
                         " x h x w], got " + shape_str(observation.shape()));
  }
  const std::size_t h = observation.dim(1), w = observation.dim(2);
  const Grid flat = reshape(observation, {config.input_dim, h * w});
  return reshape(add_col_bias(matmul(encoder_weight, flat), encoder_bias),
                 {config.feature_dim, h, w});
}

Grid bank_rows_or_zero(const Model& model) {
  if (model.config.memory_bank) return model.bank.snapshot();
  return Grid::zeros({model.config.n_classes, model.config.feature_dim});
}

Grid vanilla_forward(const Model& m, const Grid& features) {
  const Grid flat = reshape(features, {features.dim(0), features.dim(1) * features.dim(2)});
  return reshape(add_col_bias(matmul(m.classifier.weight, flat), m.classifier.bias),
                 {m.config.n_classes, features.dim(1), features.dim(2)});
}

Grid student_forward(const Model& m, const Grid& features, const Grid& bank_rows) {
  if (!m.student) throw RoleError("student_forward: model has no ECAC head");
  // The coarse bias is constant along each class row, so it cancels in the
  // pixel-axis softmax; leaving it out keeps that cancellation exact.
  const Grid flat = reshape(features, {features.dim(0), features.dim(1) * features.dim(2)});
  const Grid coarse = reshape(matmul(m.classifier.weight, flat),
                              {m.config.n_classes, features.dim(1), features.dim(2)});
  const Grid centers = student_class_center(features, coarse);
  const Grid weights = build_classifier(*m.student, centers, bank_rows);
  return calibrate(classify(weights, features), m.student->calibration);
}

Grid teacher_forward(const Model& m, const Grid& features, const LabelMask& labels,
                     const Grid& bank_rows) {
  if (!m.teacher) throw RoleError("teacher_forward: model has no ECAC head");
  const Grid centers = teacher_class_center(features, labels, bank_rows);
  const Grid weights = build_classifier(*m.teacher, centers, bank_rows);
  return calibrate(classify(weights, features), m.teacher->calibration);
}

Grid Model::predict_logits(const Grid& observation) const {
  const Grid features = encode(observation);
  if (!student) return vanilla_forward(*this, features);
  return student_forward(*this, features, bank_rows_or_zero(*this));
}

LabelMask Model::predict(const Grid& observation) const {
  return argmax_labels(predict_logits(observation));
}

LabelMask argmax_labels(const Grid& scores) {
  if (scores.rank() != 3) {
    throw DimensionError("argmax_labels: expected [n x h x w], got " + shape_str(scores.shape()));
  }
  const std::size_t n = scores.dim(0), h = scores.dim(1), w = scores.dim(2), hw = h * w;
  const auto v = scores.values();
  std::vector<std::uint16_t> out(hw, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
      if (v[c * hw + p] > v[best * hw + p]) best = c;
    }
    out[p] = static_cast<std::uint16_t>(best);
  }
  return LabelMask(h, w, std::move(out));
}

StepResult train_step(std::span<const Instance> batch, Model& model, OptimState& opt,
                      const ClassWeights& weights, const LossConfig& loss, std::uint64_t iter) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const std::size_t n = model.config.n_classes;
  StepResult result;
  result.lr = opt.lr(iter);

  std::vector<Grid> features;
  features.reserve(batch.size());
  for (const auto& inst : batch) {
    inst.labels.validate(n);
    features.push_back(model.encode(inst.observation));
  }

  const bool ecac = model.student.has_value();
  if (ecac && model.config.memory_bank) {
    std::vector<MaskedCenters> parts;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      parts.push_back(masked_class_centers(features[i], batch[i].labels, n));
    }
    model.bank.update(merge_centers(parts));
  }
  const Grid bank_rows = bank_rows_or_zero(model);

  std::vector<Grid> rce_s, rce_t, mem, kl, iv;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& labels = batch[i].labels;
    if (!ecac) {
      const Grid logits = vanilla_forward(model, features[i]);
      rce_s.push_back(reweighted_ce(logits, labels, weights));
      result.student_predictions.push_back(argmax_labels(logits));
      continue;
    }
    const Grid ot = teacher_forward(model, features[i], labels, bank_rows);
    const Grid os = student_forward(model, features[i], bank_rows);
    rce_s.push_back(reweighted_ce(os, labels, weights));
    rce_t.push_back(reweighted_ce(ot, labels, weights));
    if (loss.memory && model.config.memory_bank) {
      mem.push_back(memory_loss(memory_logits(model.bank, features[i]), labels, iter,
                                loss.memory_delay));
    }
    if (loss.kl) kl.push_back(distillation_loss(ot, os, labels, loss.kl_form));
    if (loss.iv) {
      iv.push_back(intra_variance_loss(intra_class_similarity(os, labels),
                                       intra_class_similarity(ot, labels), labels));
    }
    result.student_predictions.push_back(argmax_labels(os));
    result.teacher_predictions.push_back(argmax_labels(ot));
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  auto mean = [&](const std::vector<Grid>& xs) {
    if (xs.empty()) return Grid::scalar(0.0);
    Grid acc = xs.front();
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return xs.size() == 1 ? acc : scale(acc, inv);
  };
  LossComponents parts{mean(rce_s), mean(rce_t), mean(mem), mean(kl), mean(iv)};
  result.losses = total_loss(parts, loss.alpha, loss.beta, iter, loss.memory_delay);

  auto params = model.parameters();
  for (auto& p : params) p.grid.zero_grad();
  backward(result.losses.total);
  sgd_step(params, opt, iter);
  for (auto& p : params) p.grid.zero_grad();
  return result;
}

std::vector<LabelMask> predict_all(const Model& model, std::span<const Instance> dataset) {
  std::vector<LabelMask> out;
  out.reserve(dataset.size());
  for (const auto& inst : dataset) out.push_back(model.predict(inst.observation));
  return out;
}

EvalReport evaluate(const Model& model, std::span<const Instance> dataset,
                    std::span<const int> groups) {
  if (dataset.empty()) throw ContractError("evaluate: empty dataset");
  ConfusionMatrix cm(model.config.n_classes);
  for (const auto& inst : dataset) cm.add(inst.labels, model.predict(inst.observation));
  auto report = summarize(cm, groups);
  report.confusion = std::move(cm);
  return report;
}

}  // namespace ecac
