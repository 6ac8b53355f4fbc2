#include "ecac/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ecac/errors.hpp"
#include "ecac/random.hpp"

namespace ecac {

SceneSpec scene_for_seed(const ExperimentConfig& config, std::uint64_t seed) {
  SceneSpec s = config.scene;
  s.seed = seed;
  return s;
}

std::vector<Instance> eval_set(const ExperimentConfig& config, std::uint64_t seed) {
  const auto scene = scene_for_seed(config, seed);
  std::vector<Instance> out;
  out.reserve(config.eval_images);
  for (std::size_t k = 0; k < config.eval_images; ++k) {
    out.push_back(generate(scene, kEvalIndexOffset + k));
  }
  return out;
}

Grid training_frequencies(const ExperimentConfig& config, std::uint64_t seed) {
  return dataset_frequencies(scene_for_seed(config, seed), config.train_images);
}

ParameterCounts count_parameters(const Model& model) {
  ParameterCounts c;
  c.total = model.parameter_count();
  c.encoder = model.encoder_parameter_count();
  c.head = c.total - c.encoder;
  c.vanilla_total = c.encoder + model.classifier.parameter_count();
  const std::size_t n = model.config.n_classes, d = model.config.feature_dim;
  if (model.student) {
    const std::size_t projector = 3 * d * d + 2 * d;
    c.closed_form = (model.config.share_projector ? 1 : 2) * projector +
                    (model.config.calibration ? 2 * 2 * n : 0) + n * d + n;
  } else {
    c.closed_form = n * d + n;
  }
  return c;
}

namespace {

class Shuffler {
 public:
  Shuffler(std::uint64_t seed, std::size_t n) : seed_(seed), order_(n) {}

  std::size_t at(std::uint64_t k) {
    const std::uint64_t epoch = k / order_.size();
    if (epoch != epoch_) {
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      CounterRng rng(seed_, "shuffle", epoch);
      for (std::size_t i = order_.size(); i > 1; --i) {
        std::swap(order_[i - 1], order_[rng.below(i)]);
      }
      epoch_ = epoch;
    }
    return order_[k % order_.size()];
  }

 private:
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::uint64_t epoch_ = ~std::uint64_t{0};
};

double batch_miou(const std::vector<LabelMask>& preds, std::span<const Instance> batch,
                  std::size_t n, std::span<const int> groups) {
  if (preds.empty()) return 0.0;
  ConfusionMatrix cm(n);
  for (std::size_t i = 0; i < preds.size(); ++i) cm.add(batch[i].labels, preds[i]);
  return summarize(cm, groups).miou;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

nlohmann::json eval_json(const EvalReport& r) {
  nlohmann::json iou = nlohmann::json::array();
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    iou.push_back(r.has_union[c] ? nlohmann::json(r.iou[c]) : nlohmann::json(nullptr));
  }
  nlohmann::json cm = nlohmann::json::array();
  const std::size_t n = r.confusion.classes();
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < n; ++j) row.push_back(r.confusion.at(i, j));
    cm.push_back(row);
  }
  return {{"miou", number_or_null(r.miou)},
          {"head_miou", number_or_null(r.group_miou[0])},
          {"moderate_miou", number_or_null(r.group_miou[1])},
          {"tail_miou", number_or_null(r.group_miou[2])},
          {"pixel_accuracy", number_or_null(r.pixel_accuracy)},
          {"pixels", r.pixels},
          {"iou", iou},
          {"confusion", cm}};
}

}  // namespace

TrainedRun train_run(const ExperimentConfig& config_in, std::uint64_t seed,
                     const std::filesystem::path& out) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig config = config_in;
  config.finalize();
  const auto scene = scene_for_seed(config, seed);
  const Grid freqs = training_frequencies(config, seed);
  const auto weights = class_weights(freqs, config.loss.reweight ? config.loss.rho : 0.0);
  const auto groups = frequency_groups(freqs);
  const auto evals = eval_set(config, seed);

  Model model = Model::init(config.model, seed);
  OptimState opt(config.optim);
  Shuffler shuffle(seed, config.train_images);
  const std::size_t n = config.scene.n_classes;

  RunReport report;
  report.config = config;
  report.seed = seed;
  report.groups = groups;
  report.parameters = count_parameters(model);
  report.losses.reserve(config.iterations);

  std::vector<Instance> batch(config.batch_size);
  for (std::uint64_t it = 0; it < config.iterations; ++it) {
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      batch[b] = generate(scene, shuffle.at(it * config.batch_size + b));
    }
    StepResult step;
    try {
      step = train_step(batch, model, opt, weights, config.loss, it);
    } catch (const Error& e) {
      throw std::runtime_error("iteration " + std::to_string(it) + ": " + e.what());
    }
    LossRow row;
    row.iteration = it;
    row.rce_student = step.losses.rce_student.item();
    row.rce_teacher = step.losses.rce_teacher.item();
    row.memory = step.losses.memory.item();
    row.kl = step.losses.kl.item();
    row.iv = step.losses.iv.item();
    row.total = step.losses.total.item();
    row.lr = step.lr;
    row.train_miou_student = batch_miou(step.student_predictions, batch, n, groups);
    row.train_miou_teacher = batch_miou(step.teacher_predictions, batch, n, groups);
    report.losses.push_back(row);
    if ((it + 1) % config.eval_period == 0 || it + 1 == config.iterations) {
      report.evals.push_back({it + 1, evaluate(model, evals, groups)});
    }
  }
  report.final_eval = report.evals.back().report;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ostringstream losses, evalcsv;
    write_loss_csv(losses, report.losses);
    write_eval_csv(evalcsv, report.evals, n);
    write_text(out / "losses.csv", losses.str());
    write_text(out / "eval.csv", evalcsv.str());
    write_text(out / "report.json", report_json(report));
    save_checkpoint(out / "checkpoint.txt", model, opt, config.iterations);
  }
  return {std::move(report), std::move(model), std::move(opt)};
}

RunReport run_train(const ExperimentConfig& config, std::uint64_t seed,
                    const std::filesystem::path& out) {
  return train_run(config, seed, out).report;
}

void write_loss_csv(std::ostream& out, const std::vector<LossRow>& rows) {
  out << kLossCsvHeader << "\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << format_double(r.rce_student) << ','
        << format_double(r.rce_teacher) << ',' << format_double(r.memory) << ','
        << format_double(r.kl) << ',' << format_double(r.iv) << ',' << format_double(r.total)
        << ',' << format_double(r.lr) << "\n";
  }
}

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows, std::size_t n) {
  out << "iteration,miou,head_miou,moderate_miou,tail_miou,pixel_accuracy";
  for (std::size_t c = 0; c < n; ++c) out << ",iou_" << c;
  out << "\n";
  auto cell = [](double v) { return std::isfinite(v) ? format_double(v) : std::string("nan"); };
  for (const auto& row : rows) {
    const auto& r = row.report;
    out << row.iteration << ',' << cell(r.miou) << ',' << cell(r.group_miou[0]) << ','
        << cell(r.group_miou[1]) << ',' << cell(r.group_miou[2]) << ','
        << cell(r.pixel_accuracy);
    for (std::size_t c = 0; c < n; ++c) {
      out << ',' << (r.has_union[c] ? format_double(r.iou[c]) : std::string("nan"));
    }
    out << "\n";
  }
}

std::string report_json(const RunReport& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["config"] = serialize_config(r.config);
  j["wall_seconds"] = r.wall_seconds;
  j["parameters"] = {{"total", r.parameters.total},
                     {"encoder", r.parameters.encoder},
                     {"head", r.parameters.head},
                     {"vanilla_total", r.parameters.vanilla_total},
                     {"closed_form_head", r.parameters.closed_form}};
  j["groups"] = r.groups;
  j["final"] = eval_json(r.final_eval);
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : r.evals) {
    auto row = eval_json(e.report);
    row["iteration"] = e.iteration;
    evals.push_back(row);
  }
  j["evals"] = evals;
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& l : r.losses) {
    curve.push_back({l.iteration, l.rce_student, l.rce_teacher, l.memory, l.kl, l.iv, l.total,
                     l.lr});
  }
  j["loss_columns"] = {"iteration", "L_rceS", "L_rceT", "L_M", "L_KL", "L_IV", "total", "lr"};
  j["losses"] = curve;
  return j.dump(2) + "\n";
}

// ---- ablations --------------------------------------------------------------

AblationAxis parse_axis(std::string_view name) {
  if (name == "loss-combination") return AblationAxis::loss_combination;
  if (name == "kd-weights") return AblationAxis::kd_weights;
  if (name == "bank-strategy") return AblationAxis::bank_strategy;
  if (name == "calibration") return AblationAxis::calibration;
  throw ConfigError("unsupported ablation axis '" + std::string(name) +
                    "' (loss-combination, kd-weights, bank-strategy, calibration)");
}

std::string_view axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::loss_combination: return "loss-combination";
    case AblationAxis::kd_weights: return "kd-weights";
    case AblationAxis::bank_strategy: return "bank-strategy";
    case AblationAxis::calibration: return "calibration";
  }
  return "?";
}

std::vector<AblationArm> ablation_arms(const ExperimentConfig& base_in, AblationAxis axis) {
  ExperimentConfig base = base_in;
  base.finalize();
  ExperimentConfig vanilla = base;
  vanilla.model.head = HeadKind::vanilla;
  vanilla.loss.reweight = false;
  ExperimentConfig vanilla_rce = vanilla;
  vanilla_rce.loss.reweight = true;
  ExperimentConfig full = base;
  full.model.head = HeadKind::ecac;
  full.loss.reweight = true;
  full.loss.memory = full.loss.kl = full.loss.iv = true;

  std::vector<AblationArm> arms;
  switch (axis) {
    case AblationAxis::loss_combination: {
      ExperimentConfig c = full;
      c.loss.memory = c.loss.kl = c.loss.iv = false;
      arms = {{"base", vanilla}, {"+rce", vanilla_rce}, {"+ecac", c}};
      c.loss.memory = true;
      arms.push_back({"+memory", c});
      c.loss.kl = true;
      arms.push_back({"+kl", c});
      c.loss.iv = true;
      arms.push_back({"+iv", c});
      break;
    }
    case AblationAxis::kd_weights: {
      const std::pair<double, double> grid[] = {{0, 0},   {0.1, 0}, {1, 0},  {10, 0},
                                                {1, 50}, {1, 100}, {1, 200}};
      for (const auto& [a, b] : grid) {
        ExperimentConfig c = full;
        c.loss.alpha = a;
        c.loss.beta = b;
        arms.push_back({"alpha=" + format_double(a) + " beta=" + format_double(b), c});
      }
      break;
    }
    case AblationAxis::bank_strategy: {
      ExperimentConfig nobank = full;
      nobank.model.memory_bank = false;
      nobank.loss.memory = false;
      arms = {{"base", vanilla_rce}, {"no-bank", nobank}, {"cosine", std::nullopt}, {"ours", full}};
      break;
    }
    case AblationAxis::calibration: {
      ExperimentConfig nocal = full;
      nocal.model.calibration = false;
      arms = {{"base", vanilla_rce}, {"+ecac", nocal}, {"+ecac+calibration", full}};
      break;
    }
  }
  for (auto& a : arms) {
    if (a.config) a.config->finalize();
  }
  return arms;
}

namespace {

std::string arm_dir(const std::string& arm) {
  std::string out;
  for (char ch : arm) {
    const bool keep = std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-';
    out += keep ? ch : (ch == '+' ? 'p' : '_');
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

AblationTable run_ablation(const ExperimentConfig& config, AblationAxis axis,
                           const std::filesystem::path& out, AblationOptions options) {
  const auto arms = ablation_arms(config, axis);
  if (options.only_arm) {
    const bool known = std::any_of(arms.begin(), arms.end(),
                                   [&](const auto& a) { return a.name == *options.only_arm; });
    if (!known) throw ConfigError("no arm named '" + *options.only_arm + "' on this axis");
  }
  AblationTable table;
  table.axis = axis;
  struct Job {
    std::size_t row, seed;
  };
  std::vector<Job> jobs;
  std::vector<std::size_t> arm_of_row;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    if (options.only_arm && *options.only_arm != arms[a].name) continue;
    AblationRow row;
    row.arm = arms[a].name;
    row.implemented = arms[a].config.has_value();
    row.seeds = config.seeds;
    row.miou.assign(config.seeds.size(), 0.0);
    row.tail_miou.assign(config.seeds.size(), 0.0);
    table.rows.push_back(row);
    arm_of_row.push_back(a);
    if (!row.implemented) continue;
    for (std::size_t s = 0; s < config.seeds.size(); ++s) jobs.push_back({table.rows.size() - 1, s});
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::vector<std::exception_ptr> errors(jobs.size());
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const auto [r_index, s] = jobs[j];
      const std::size_t a = arm_of_row[r_index];
      const std::uint64_t seed = config.seeds[s];
      try {
        const auto dir = out.empty() ? std::filesystem::path{}
                                     : out / arm_dir(arms[a].name) / ("seed-" + std::to_string(seed));
        const auto r = run_train(*arms[a].config, seed, dir);
        table.rows[r_index].miou[s] = r.final_eval.miou;
        table.rows[r_index].tail_miou[s] = r.final_eval.group_miou[2];
        if (options.log) {
          std::lock_guard lock(log_mutex);
          *options.log << axis_name(axis) << " " << arms[a].name << " seed " << seed
                       << ": mIoU " << r.final_eval.miou << " tail " << r.final_eval.group_miou[2]
                       << " (" << r.wall_seconds << " s)\n";
        }
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.jobs, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (auto& row : table.rows) {
    if (!row.implemented) continue;
    row.mean = mean_of(row.miou);
    row.spread = sample_std(row.miou);
    row.tail_mean = mean_of(row.tail_miou);
  }
  if (!out.empty() && !options.only_arm) {
    std::filesystem::create_directories(out);
    std::ostringstream csv;
    write_ablation_csv(csv, table);
    write_text(out / "ablation.csv", csv.str());
  }
  return table;
}

void write_ablation_csv(std::ostream& out, const AblationTable& table) {
  out << "axis,arm,status,seeds,miou_mean,miou_spread,tail_miou_mean,miou_per_seed\n";
  for (const auto& r : table.rows) {
    out << axis_name(table.axis) << ',' << r.arm << ',';
    if (!r.implemented) {
      out << "not-implemented," << r.seeds.size() << ",,,,\n";
      continue;
    }
    out << "ok," << r.seeds.size() << ',' << format_double(r.mean) << ','
        << format_double(r.spread) << ',' << format_double(r.tail_mean) << ',';
    for (std::size_t i = 0; i < r.miou.size(); ++i) {
      if (i) out << ' ';
      out << format_double(r.miou[i]);
    }
    out << "\n";
  }
}

// ---- gradient checks ---------------------------------------------------------

bool GradCheckSuite::passed() const {
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) {
    return r.max_relative_error < kGradCheckTolerance;
  });
}

GradCheckSuite run_gradcheck(const ExperimentConfig& config_in, std::uint64_t seed, double step) {
  ExperimentConfig config = config_in;
  config.scene.n_classes = 3;
  config.scene.height = 4;
  config.scene.width = 4;
  config.scene.input_dim = 6;
  config.model.feature_dim = 4;
  config.model.head = HeadKind::ecac;
  config.finalize();

  const std::size_t n = 3, h = 4, w = 4, hw = h * w, din = 6;
  Model model = Model::init(config.model, seed);
  CounterRng rng(seed, "gradcheck");
  std::vector<double> obs(din * hw);
  for (double& x : obs) x = rng.normal();
  const Grid observation = Grid::from_values({din, h, w}, std::move(obs));
  std::vector<std::uint16_t> lab(hw);
  for (std::size_t p = 0; p < hw; ++p) lab[p] = static_cast<std::uint16_t>(rng.below(n));
  lab[0] = 0;
  lab[1] = 1;
  lab[2] = 2;
  lab[3] = kIgnoreLabel;
  const LabelMask labels(h, w, std::move(lab));
  std::vector<double> f(n);
  for (double& x : f) x = 0.05 + rng.uniform();
  const auto weights = class_weights(Grid::from_values({n}, f), config.loss.rho);

  // Move off the zero-bias, identity-calibration initialization so that no
  // parameter sits on a softmax shift symmetry.
  for (auto& p : model.parameters()) {
    const bool is_bias = p.grid.rank() == 1;
    if (!is_bias) continue;
    const bool is_gamma = p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, "gamma") == 0;
    for (double& v : p.grid.mutable_values()) v = (is_gamma ? 1.0 : 0.0) + 0.25 * rng.normal();
  }
  if (config.model.memory_bank) {
    model.bank.update(masked_class_centers(model.encode(observation), labels, n));
  }
  const Grid bank_rows = bank_rows_or_zero(model);
  const Grid frozen_teacher =
      teacher_forward(model, model.encode(observation), labels, bank_rows).detach();
  const std::uint64_t late = config.loss.memory_delay;

  auto rce_s = [&] {
    return reweighted_ce(student_forward(model, model.encode(observation), bank_rows), labels,
                         weights);
  };
  auto rce_t = [&] {
    return reweighted_ce(teacher_forward(model, model.encode(observation), labels, bank_rows),
                         labels, weights);
  };
  auto kl = [&] {
    return distillation_loss(frozen_teacher,
                             student_forward(model, model.encode(observation), bank_rows), labels,
                             config.loss.kl_form);
  };
  auto iv = [&] {
    const Grid f = model.encode(observation);
    return intra_variance_loss(
        intra_class_similarity(student_forward(model, f, bank_rows), labels),
        intra_class_similarity(teacher_forward(model, f, labels, bank_rows), labels), labels);
  };
  auto mem = [&] {
    return memory_loss(memory_logits(model.bank, model.encode(observation)), labels, late, late);
  };
  auto total = [&] {
    const Grid f = model.encode(observation);
    const Grid os = student_forward(model, f, bank_rows);
    const Grid ot = teacher_forward(model, f, labels, bank_rows);
    LossComponents parts{
        reweighted_ce(os, labels, weights), reweighted_ce(ot, labels, weights),
        memory_loss(memory_logits(model.bank, f), labels, late, late),
        distillation_loss(frozen_teacher, os, labels, config.loss.kl_form),
        intra_variance_loss(intra_class_similarity(os, labels), intra_class_similarity(ot, labels),
                            labels)};
    return total_loss(parts, config.loss.alpha, config.loss.beta, late, late).total;
  };

  GradCheckSuite suite;
  const std::pair<const char*, std::function<Grid()>> checks[] = {
      {"L_rceS", rce_s}, {"L_rceT", rce_t}, {"L_KL", kl},
      {"L_IV", iv},      {"L_M", mem},      {"total", total}};
  for (const auto& [name, fn] : checks) {
    suite.reports.push_back(grad_check(name, fn, model.parameters(), step));
  }
  return suite;
}

}  // namespace ecac
