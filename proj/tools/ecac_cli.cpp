// Command-line front end: train, eval, ablate, gradcheck, config, report.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecac/config.hpp"
#include "ecac/errors.hpp"
#include "ecac/harness.hpp"
#include "ecac/kernels.hpp"

namespace fs = std::filesystem;
using namespace ecac;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Config file (defaults apply when omitted)");
  cmd->add_option("--seed", c.seed, "Run only this seed");
  cmd->add_option("--out", c.out, "Output directory (overrides run.out_dir)");
  cmd->add_option("--override", c.overrides, "section.key=value, repeatable");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig config = c.config_path.empty() ? default_config() : load_config(c.config_path);
  for (const auto& o : c.overrides) apply_override(config, o);
  if (!c.out.empty()) config.out_dir = c.out;
  if (c.seed) config.seeds = {*c.seed};
  config.finalize();
  return config;
}

void print_eval(const EvalReport& r) {
  std::cout << std::fixed << std::setprecision(4) << "mIoU " << r.miou << "  head "
            << r.group_miou[0] << "  moderate " << r.group_miou[1] << "  tail " << r.group_miou[2]
            << "  pixel acc " << r.pixel_accuracy << "\n";
  std::cout.unsetf(std::ios::floatfield);
}

int cmd_train(const Common& c) {
  const auto config = resolve(c);
  const fs::path out = config.out_dir;
  fs::create_directories(out);
  {
    std::ofstream cfg(out / "config.ini");
    cfg << serialize_config(config);
  }
  for (auto seed : config.seeds) {
    const fs::path dir = config.seeds.size() == 1 ? out : out / ("seed-" + std::to_string(seed));
    const auto r = run_train(config, seed, dir);
    std::cout << "seed " << seed << " (" << r.wall_seconds << " s): ";
    print_eval(r.final_eval);
  }
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  const auto config = resolve(c);
  const auto ck = load_checkpoint(fs::path(checkpoint), config);
  const auto seed = config.seeds.front();
  const auto groups = frequency_groups(training_frequencies(config, seed));
  const auto data = eval_set(config, seed);
  const auto report = evaluate(ck.model, data, groups);
  std::cout << "checkpoint " << checkpoint << " at iteration " << ck.iteration << ", seed " << seed
            << ": ";
  print_eval(report);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    std::ofstream csv(fs::path(c.out) / "eval.csv");
    write_eval_csv(csv, {{ck.iteration, report}}, config.scene.n_classes);
  }
  return 0;
}

int cmd_ablate(const Common& c, const std::string& axis, std::size_t jobs,
               const std::optional<std::string>& arm) {
  const auto config = resolve(c);
  const auto ax = parse_axis(axis);
  AblationOptions opts;
  opts.jobs = jobs;
  opts.only_arm = arm;
  opts.log = &std::cerr;
  const fs::path out = fs::path(config.out_dir) / std::string(axis_name(ax));
  const auto table = run_ablation(config, ax, out, opts);
  write_ablation_csv(std::cout, table);
  return 0;
}

int cmd_gradcheck(const Common& c) {
  const auto config = resolve(c);
  const auto suite = run_gradcheck(config, config.seeds.front());
  for (const auto& r : suite.reports) {
    std::cout << std::left << std::setw(8) << r.operation << " max rel err "
              << std::scientific << std::setprecision(3) << r.max_relative_error << "\n";
    for (const auto& [name, err] : r.per_parameter) {
      std::cout << "    " << std::setw(28) << name << err
                << (err >= kGradCheckTolerance ? "  FAIL" : "") << "\n";
    }
  }
  std::cout << (suite.passed() ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return suite.passed() ? 0 : 1;
}

int cmd_report(const std::string& dir) {
  const fs::path root(dir);
  bool found = false;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    if (name == "report.json") {
      std::ifstream in(entry.path());
      const auto j = nlohmann::json::parse(in);
      const auto& f = j.at("final");
      const auto& p = j.at("parameters");
      std::cout << fs::relative(entry.path().parent_path(), root).string() << ": seed "
                << j.at("seed") << ", mIoU " << f.at("miou") << ", tail " << f.at("tail_miou")
                << ", params " << p.at("total") << " (head " << p.at("head") << ")\n";
      found = true;
    } else if (name == "ablation.csv") {
      std::ifstream in(entry.path());
      std::cout << in.rdbuf();
      found = true;
    }
  }
  if (!found) {
    std::cerr << "no report.json or ablation.csv under " << dir << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ECAC toy-scale segmentation experiments"};
  app.require_subcommand(1);
  std::string isa;
  app.add_option("--isa", isa, "Kernel variant: scalar or avx2 (default: best available)")
      ->check(CLI::IsMember({"scalar", "avx2"}));

  Common train_opts, eval_opts, ablate_opts, grad_opts, show_opts;
  auto* train = app.add_subcommand("train", "Train on every configured seed");
  add_common(train, train_opts);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the evaluation scenes");
  add_common(eval, eval_opts);
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  auto* ablate = app.add_subcommand("ablate", "Run one ablation table");
  add_common(ablate, ablate_opts);
  std::string axis;
  std::size_t jobs = 1;
  std::optional<std::string> arm;
  ablate->add_option("--axis", axis, "loss-combination | kd-weights | bank-strategy | calibration")
      ->required();
  ablate->add_option("--jobs", jobs, "Concurrent (arm, seed) jobs");
  ablate->add_option("--arm", arm, "Re-run a single arm only");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
  add_common(grad, grad_opts);

  auto* show = app.add_subcommand("config", "Print the effective configuration");
  add_common(show, show_opts);

  auto* report = app.add_subcommand("report", "Summarize the outputs under a directory");
  std::string report_dir;
  report->add_option("--out", report_dir, "Directory to scan")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!isa.empty()) {
      kernels::set_isa(isa == "scalar" ? kernels::Isa::scalar : kernels::Isa::avx2);
    }
    if (*train) return cmd_train(train_opts);
    if (*eval) return cmd_eval(eval_opts, checkpoint);
    if (*ablate) return cmd_ablate(ablate_opts, axis, jobs, arm);
    if (*grad) return cmd_gradcheck(grad_opts);
    if (*report) return cmd_report(report_dir);
    if (*show) {
      std::cout << serialize_config(resolve(show_opts));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
