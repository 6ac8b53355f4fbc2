#pragma once

// Experiment configuration.
//
// Text format: '#' starts a comment, "[section]" opens a section, and every
// other non-blank line is "key = value". Keys are addressed as section.key.
// Booleans are true/false, lists are comma separated. Unknown sections or
// keys are rejected.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ecac/losses.hpp"
#include "ecac/synth_data.hpp"
#include "ecac/trainer.hpp"

namespace ecac {

struct ExperimentConfig {
  // Toy benchmark defaults: a drifting, noisy Zipf scene and a larger,
  // clipped step than the paper's pretrained-backbone setting.
  SceneSpec scene{.drift = 2.0, .noise = 4.0};  // scene.seed is replaced by the run seed
  ModelConfig model;  // n_classes and input_dim follow the scene
  OptimConfig optim{.base_lr = 0.03, .clip_norm = 1.0};  // max_iterations follows run.iterations
  LossConfig loss;
  std::size_t batch_size = 1;
  std::uint64_t iterations = 4000;
  std::uint64_t eval_period = 1000;
  std::size_t train_images = 200;
  std::size_t eval_images = 64;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "runs";

  /// Copies shared dimensions into model/optim and checks every field.
  /// Throws ConfigError naming the key.
  void finalize();
};

ExperimentConfig default_config();

/// Parses text on top of the defaults. Throws ConfigError with the key path
/// (or line number) on any problem.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);

/// Applies "section.key=value".
void apply_override(ExperimentConfig& config, std::string_view assignment);

/// Every effective value, defaults included, in the parse format.
std::string serialize_config(const ExperimentConfig& config);

/// The full list of section.key names.
std::vector<std::string> config_keys();

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace ecac
