#pragma once

// Model definition, SGD with momentum under a polynomial schedule, and the
// per-iteration orchestration of the teacher branch, student branch and
// memory bank.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecac/ecac_head.hpp"
#include "ecac/grid.hpp"
#include "ecac/losses.hpp"
#include "ecac/memory_bank.hpp"
#include "ecac/synth_data.hpp"

namespace ecac {

// ---- optimizer -------------------------------------------------------------

struct OptimConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double poly_power = 0.9;
  std::uint64_t max_iterations = 1000;
  double weight_decay = 0.0;
  double clip_norm = 0.0;  // global gradient-norm ceiling; 0 disables
};

/// base * (1 - iter/max)^power. Throws ScheduleError when iter > max.
double poly_lr(double base, std::uint64_t iter, std::uint64_t max, double power);

struct OptimState {
  OptimConfig config;
  std::map<std::string, std::vector<double>> velocity;

  explicit OptimState(OptimConfig c = {});
  double lr(std::uint64_t iter) const;
};

/// v <- momentum * v + g (+ weight_decay * theta); theta <- theta - lr(iter) * v.
/// Parameters without an accumulated gradient see g = 0. With clip_norm > 0
/// the gradients are first rescaled so their joint L2 norm is at most clip_norm.
void sgd_step(std::span<NamedGrid> params, OptimState& state, std::uint64_t iter);

// ---- model -----------------------------------------------------------------

enum class HeadKind { vanilla, ecac };

std::string_view head_kind_name(HeadKind k);
HeadKind parse_head_kind(std::string_view name);

struct ModelConfig {
  std::size_t n_classes = 8;
  std::size_t input_dim = 256;
  std::size_t feature_dim = 8;
  HeadKind head = HeadKind::ecac;
  bool projector_relu = true;
  bool share_projector = true;
  bool calibration = true;
  bool memory_bank = true;
  double bank_momentum = kDefaultBankMomentum;
};

struct Model {
  ModelConfig config;
  Grid encoder_weight;  // [d x d_in]
  Grid encoder_bias;    // [d]
  CoarseClassifier classifier;       // the vanilla head; the student's coarse segmenter
  std::optional<EcacHead> teacher;   // ecac only
  std::optional<EcacHead> student;   // ecac only; coarse == classifier
  MemoryBank bank;

  static Model init(const ModelConfig& config, std::uint64_t seed);

  /// Trainable parameters in a fixed order, shared tensors listed once.
  std::vector<NamedGrid> parameters() const;
  std::size_t parameter_count() const;
  std::size_t encoder_parameter_count() const;

  /// Per-pixel affine encoder: [d_in x h x w] -> [d x h x w].
  Grid encode(const Grid& observation) const;

  /// Inference path (vanilla logits, or calibrated student logits). Labels are
  /// never consulted.
  Grid predict_logits(const Grid& observation) const;
  LabelMask predict(const Grid& observation) const;

 private:
  Model(const ModelConfig& c) : config(c), bank(c.n_classes, c.feature_dim, c.bank_momentum) {}
};

/// Zero-row bank used when the model runs without one.
Grid bank_rows_or_zero(const Model& model);

// ---- training step ---------------------------------------------------------

struct LossConfig {
  bool reweight = true;        // rho > 0; off means uniform weights
  double rho = kDefaultRho;
  bool memory = true;
  bool kl = true;
  bool iv = true;
  double alpha = kDefaultAlpha;
  double beta = kDefaultBeta;
  std::uint64_t memory_delay = kDefaultMemoryDelay;
  DistillForm kl_form = DistillForm::entropy_weighted;
};

struct StepResult {
  LossBundle losses;
  double lr = 0.0;
  // Training-batch predictions from both branches (teacher empty for vanilla).
  std::vector<LabelMask> student_predictions;
  std::vector<LabelMask> teacher_predictions;
};

/// Forward both branches on `batch`, update the bank, backpropagate the total
/// loss and take one SGD step.
StepResult train_step(std::span<const Instance> batch, Model& model, OptimState& opt,
                      const ClassWeights& weights, const LossConfig& loss, std::uint64_t iter);

/// Branch forwards on encoded features [d x h x w]; each returns [n x h x w].
Grid vanilla_forward(const Model& model, const Grid& features);
Grid teacher_forward(const Model& model, const Grid& features, const LabelMask& labels,
                     const Grid& bank_rows);
Grid student_forward(const Model& model, const Grid& features, const Grid& bank_rows);

/// Argmax over the class axis of [n x h x w] scores.
LabelMask argmax_labels(const Grid& scores);

}  // namespace ecac

namespace ecac {

struct EvalReport;
class ConfusionMatrix;

/// Scores the inference path over `dataset`. Labels are read only for
/// scoring. Throws ContractError on an empty dataset.
EvalReport evaluate(const Model& model, std::span<const Instance> dataset,
                    std::span<const int> groups);

/// The raw predictions evaluate() scores, one mask per instance.
std::vector<LabelMask> predict_all(const Model& model, std::span<const Instance> dataset);

}  // namespace ecac
