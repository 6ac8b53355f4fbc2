#include "ecac/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ecac/errors.hpp"

namespace ecac {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

DistillForm parse_form(std::string_view key, std::string_view v) {
  if (v == "entropy_weighted") return DistillForm::entropy_weighted;
  if (v == "plain") return DistillForm::plain;
  throw ConfigError(std::string(key) + ": expected entropy_weighted or plain, got '" +
                    std::string(v) + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

#define ECAC_DOUBLE(name, member)                                               \
  Field{name, [](const ExperimentConfig& c) { return format_double(c.member); }, \
        [](ExperimentConfig& c, std::string_view v) { c.member = parse_double(name, v); }}
#define ECAC_COUNT(name, member)                                                      \
  Field{name, [](const ExperimentConfig& c) { return std::to_string(c.member); },     \
        [](ExperimentConfig& c, std::string_view v) {                                 \
          c.member = static_cast<decltype(c.member)>(parse_u64(name, v));            \
        }}
#define ECAC_BOOL(name, member)                                                             \
  Field{name, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](ExperimentConfig& c, std::string_view v) { c.member = parse_bool(name, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      ECAC_COUNT("scene.n_classes", scene.n_classes),
      ECAC_COUNT("scene.height", scene.height),
      ECAC_COUNT("scene.width", scene.width),
      ECAC_COUNT("scene.input_dim", scene.input_dim),
      ECAC_DOUBLE("scene.zipf_s", scene.zipf_s),
      ECAC_DOUBLE("scene.drift", scene.drift),
      ECAC_DOUBLE("scene.noise", scene.noise),
      Field{"scene.palette",
            [](const ExperimentConfig& c) { return std::string(palette_name(c.scene.palette)); },
            [](ExperimentConfig& c, std::string_view v) { c.scene.palette = parse_palette(v); }},
      ECAC_COUNT("scene.tile_area", scene.tile_area),
      Field{"model.head",
            [](const ExperimentConfig& c) { return std::string(head_kind_name(c.model.head)); },
            [](ExperimentConfig& c, std::string_view v) { c.model.head = parse_head_kind(v); }},
      ECAC_COUNT("model.feature_dim", model.feature_dim),
      ECAC_BOOL("model.projector_relu", model.projector_relu),
      ECAC_BOOL("model.share_projector", model.share_projector),
      ECAC_BOOL("model.calibration", model.calibration),
      ECAC_BOOL("model.memory_bank", model.memory_bank),
      ECAC_DOUBLE("model.bank_momentum", model.bank_momentum),
      ECAC_DOUBLE("optim.base_lr", optim.base_lr),
      ECAC_DOUBLE("optim.momentum", optim.momentum),
      ECAC_DOUBLE("optim.poly_power", optim.poly_power),
      ECAC_DOUBLE("optim.weight_decay", optim.weight_decay),
      ECAC_DOUBLE("optim.clip_norm", optim.clip_norm),
      ECAC_COUNT("optim.batch_size", batch_size),
      ECAC_BOOL("loss.reweight", loss.reweight),
      ECAC_DOUBLE("loss.rho", loss.rho),
      ECAC_BOOL("loss.memory", loss.memory),
      ECAC_BOOL("loss.kl", loss.kl),
      ECAC_BOOL("loss.iv", loss.iv),
      ECAC_DOUBLE("loss.alpha", loss.alpha),
      ECAC_DOUBLE("loss.beta", loss.beta),
      ECAC_COUNT("loss.memory_delay", loss.memory_delay),
      Field{"loss.kl_form",
            [](const ExperimentConfig& c) {
              return std::string(c.loss.kl_form == DistillForm::plain ? "plain"
                                                                      : "entropy_weighted");
            },
            [](ExperimentConfig& c, std::string_view v) {
              c.loss.kl_form = parse_form("loss.kl_form", v);
            }},
      ECAC_COUNT("run.iterations", iterations),
      ECAC_COUNT("run.eval_period", eval_period),
      ECAC_COUNT("run.train_images", train_images),
      ECAC_COUNT("run.eval_images", eval_images),
      Field{"run.seeds",
            [](const ExperimentConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.seeds.size(); ++i) {
                if (i) out += ", ";
                out += std::to_string(c.seeds[i]);
              }
              return out;
            },
            [](ExperimentConfig& c, std::string_view v) {
              c.seeds.clear();
              while (!v.empty()) {
                const auto comma = v.find(',');
                c.seeds.push_back(parse_u64("run.seeds", trim(v.substr(0, comma))));
                if (comma == std::string_view::npos) break;
                v.remove_prefix(comma + 1);
              }
            }},
      Field{"run.out_dir", [](const ExperimentConfig& c) { return c.out_dir; },
            [](ExperimentConfig& c, std::string_view v) { c.out_dir = std::string(v); }},
  };
  return table;
}

#undef ECAC_DOUBLE
#undef ECAC_COUNT
#undef ECAC_BOOL

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError(std::string(key) + ": unknown key");
}

void set_field(ExperimentConfig& c, std::string_view key, std::string_view value) {
  const Field& f = find_field(key);
  try {
    f.set(c, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ContractError("format_double: conversion failed");
  return std::string(buf, ptr);
}

void ExperimentConfig::finalize() {
  auto fail = [](const char* key, const std::string& why) {
    throw ConfigError(std::string(key) + ": " + why);
  };
  try {
    scene.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("scene: ") + e.what());
  }
  model.n_classes = scene.n_classes;
  model.input_dim = scene.input_dim;
  optim.max_iterations = iterations;
  if (model.feature_dim == 0) fail("model.feature_dim", "must be positive");
  if (!(model.bank_momentum >= 0.0 && model.bank_momentum <= 1.0)) {
    fail("model.bank_momentum", "must lie in [0, 1]");
  }
  if (!(optim.base_lr >= 0.0)) fail("optim.base_lr", "must be non-negative");
  if (!(optim.momentum >= 0.0 && optim.momentum < 1.0)) fail("optim.momentum", "must lie in [0, 1)");
  if (!(optim.weight_decay >= 0.0)) fail("optim.weight_decay", "must be non-negative");
  if (!(optim.clip_norm >= 0.0)) fail("optim.clip_norm", "must be non-negative");
  if (batch_size == 0) fail("optim.batch_size", "must be positive");
  if (!(loss.rho >= 0.0)) fail("loss.rho", "must be non-negative");
  if (!(loss.alpha >= 0.0)) fail("loss.alpha", "must be non-negative");
  if (!(loss.beta >= 0.0)) fail("loss.beta", "must be non-negative");
  if (iterations == 0) fail("run.iterations", "must be positive");
  if (eval_period == 0) fail("run.eval_period", "must be positive");
  if (train_images == 0) fail("run.train_images", "must be positive");
  if (eval_images == 0) fail("run.eval_images", "must be positive");
  if (seeds.empty()) fail("run.seeds", "needs at least one seed");
  if (out_dir.empty()) fail("run.out_dir", "must not be empty");
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.finalize();
  return c;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      static const char* known[] = {"scene", "model", "optim", "loss", "run"};
      bool ok = false;
      for (const char* k : known) ok = ok || section == k;
      if (!ok) throw ConfigError(section + ": unknown section");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    if (section.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
    }
    const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
    set_field(c, key, trim(line.substr(eq + 1)));
  }
  c.finalize();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(ExperimentConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  set_field(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  config.finalize();
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string_view key = f.key;
    const auto dot = key.find('.');
    const std::string sec(key.substr(0, dot));
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += std::string(key.substr(dot + 1)) + " = " + f.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

}  // namespace ecac
