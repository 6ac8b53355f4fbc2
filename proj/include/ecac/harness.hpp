#pragma once

// Experiment orchestration: training runs, ablation tables, gradient checks
// and checkpoints.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ecac/config.hpp"
#include "ecac/grid.hpp"
#include "ecac/metrics.hpp"
#include "ecac/trainer.hpp"

namespace ecac {

/// Evaluation scenes start here so they never overlap the training indices.
inline constexpr std::uint64_t kEvalIndexOffset = std::uint64_t{1} << 32;

SceneSpec scene_for_seed(const ExperimentConfig& config, std::uint64_t seed);
std::vector<Instance> eval_set(const ExperimentConfig& config, std::uint64_t seed);
/// Training-set pixel frequencies (+1 smoothed) used for weights and groups.
Grid training_frequencies(const ExperimentConfig& config, std::uint64_t seed);

struct LossRow {
  std::uint64_t iteration = 0;
  double rce_student = 0, rce_teacher = 0, memory = 0, kl = 0, iv = 0, total = 0, lr = 0;
  double train_miou_student = 0;
  double train_miou_teacher = 0;  // 0 for vanilla runs
};

inline constexpr const char* kLossCsvHeader = "iteration,L_rceS,L_rceT,L_M,L_KL,L_IV,total,lr";

struct EvalRow {
  std::uint64_t iteration = 0;
  EvalReport report;
};

struct ParameterCounts {
  std::size_t total = 0;          // every trainable parameter of this model
  std::size_t encoder = 0;
  std::size_t head = 0;           // total - encoder
  std::size_t vanilla_total = 0;  // the same encoder with the linear head
  std::size_t closed_form = 0;    // 3d^2 + 2d + 4n + nd + n for ECAC, nd + n otherwise
};

ParameterCounts count_parameters(const Model& model);

struct RunReport {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::vector<LossRow> losses;
  std::vector<EvalRow> evals;
  EvalReport final_eval;
  std::vector<int> groups;
  ParameterCounts parameters;
  double wall_seconds = 0.0;
};

struct TrainedRun {
  RunReport report;
  Model model;
  OptimState optim;
};

/// Trains one seed. When `out` is non-empty, writes losses.csv, eval.csv,
/// report.json and checkpoint.txt into it.
TrainedRun train_run(const ExperimentConfig& config, std::uint64_t seed,
                     const std::filesystem::path& out = {});
RunReport run_train(const ExperimentConfig& config, std::uint64_t seed,
                    const std::filesystem::path& out = {});

void write_loss_csv(std::ostream& out, const std::vector<LossRow>& rows);
void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows, std::size_t n_classes);
std::string report_json(const RunReport& report);

// ---- ablations --------------------------------------------------------------

enum class AblationAxis { loss_combination, kd_weights, bank_strategy, calibration };

AblationAxis parse_axis(std::string_view name);
std::string_view axis_name(AblationAxis axis);

struct AblationArm {
  std::string name;
  std::optional<ExperimentConfig> config;  // empty: listed but not implemented
};

std::vector<AblationArm> ablation_arms(const ExperimentConfig& base, AblationAxis axis);

struct AblationRow {
  std::string arm;
  bool implemented = true;
  std::vector<std::uint64_t> seeds;
  std::vector<double> miou;
  std::vector<double> tail_miou;
  double mean = 0.0;
  double spread = 0.0;  // sample standard deviation over seeds
  double tail_mean = 0.0;
};

struct AblationTable {
  AblationAxis axis = AblationAxis::loss_combination;
  std::vector<AblationRow> rows;
};

struct AblationOptions {
  std::size_t jobs = 1;
  std::optional<std::string> only_arm;  // run a single row
  std::ostream* log = nullptr;
};

/// Runs every (arm, seed) pair; each pair writes into out/<arm>/seed-<s> when
/// `out` is non-empty, and the table goes to out/ablation.csv.
AblationTable run_ablation(const ExperimentConfig& config, AblationAxis axis,
                           const std::filesystem::path& out = {}, AblationOptions options = {});

void write_ablation_csv(std::ostream& out, const AblationTable& table);

// ---- gradient checks ---------------------------------------------------------

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckSuite {
  std::vector<GradCheckReport> reports;
  bool passed() const;
};

/// Checks every loss of the objective on a seeded 3-class 4x4 instance with the
/// configured head options.
GradCheckSuite run_gradcheck(const ExperimentConfig& config, std::uint64_t seed,
                             double step = 1e-5);

// ---- checkpoints -------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  OptimState optim;
  std::uint64_t iteration = 0;
};

void save_checkpoint(std::ostream& out, const Model& model, const OptimState& optim,
                     std::uint64_t iteration);
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const OptimState& optim, std::uint64_t iteration);

/// Rebuilds the model described by `config` and fills it from the stream.
/// Nothing is returned unless the whole document parses and every shape
/// matches; otherwise CheckpointError.
Checkpoint load_checkpoint(std::istream& in, const ExperimentConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config);

/// Number of values in the parameter records of a checkpoint, split into
/// encoder and head ("encoder.*" versus everything else).
struct CheckpointCounts {
  std::size_t encoder = 0;
  std::size_t head = 0;
};
CheckpointCounts checkpoint_parameter_counts(std::istream& in);

}  // namespace ecac
