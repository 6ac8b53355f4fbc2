#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "ecac/errors.hpp"
#include "ecac/harness.hpp"

namespace ecac {
namespace {

constexpr const char* kMagic = "ecac-checkpoint";

void put_values(std::ostream& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ' ';
    out << format_double(values[i]);
  }
  out << "\n";
}

void put_record(std::ostream& out, const char* kind, const std::string& name, const Shape& shape,
                std::span<const double> values) {
  out << kind << ' ' << name << ' ' << shape.size();
  for (auto s : shape) out << ' ' << s;
  out << "\n";
  put_values(out, values);
}

struct Record {
  Shape shape;
  std::vector<double> values;
};

struct Parsed {
  std::uint64_t iteration = 0;
  bool has_iteration = false;
  std::map<std::string, Record> params;
  std::map<std::string, Record> velocity;
  std::optional<Record> bank_rows;
  std::vector<bool> bank_initialized;
  bool has_initialized = false;
  double bank_momentum = 0.0;
  bool has_momentum = false;
  std::uint64_t bank_updates = 0;
  bool has_updates = false;
};

[[noreturn]] void fail(std::size_t line, const std::string& why) {
  throw CheckpointError("checkpoint line " + std::to_string(line) + ": " + why);
}

template <class T>
T parse_number(std::string_view tok, std::size_t line) {
  T v{};
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    fail(line, "bad number '" + std::string(tok) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    const std::size_t j = s.find(' ', i);
    const std::size_t end = j == std::string_view::npos ? s.size() : j;
    if (end > i) out.push_back(s.substr(i, end - i));
    i = end;
  }
  return out;
}

Parsed parse(std::istream& in) {
  Parsed p;
  std::string line;
  std::size_t no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++no;
    return true;
  };
  if (!next()) throw CheckpointError("checkpoint is empty");
  {
    const auto t = split(line);
    if (t.size() != 2 || t[0] != kMagic) fail(no, "not an ECAC checkpoint");
    const int version = parse_number<int>(t[1], no);
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version " + std::to_string(version) +
                            " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
  }
  auto read_record = [&](const std::vector<std::string_view>& t) {
    if (t.size() < 3) fail(no, "record header is incomplete");
    Record r;
    const auto rank = parse_number<std::size_t>(t[2], no);
    if (t.size() != 3 + rank) fail(no, "record header has the wrong number of dimensions");
    for (std::size_t k = 0; k < rank; ++k) r.shape.push_back(parse_number<std::size_t>(t[3 + k], no));
    if (!next()) fail(no, "file ends before the values of " + std::string(t[1]));
    const auto vals = split(line);
    if (vals.size() != shape_size(r.shape)) {
      fail(no, std::string(t[1]) + " has " + std::to_string(vals.size()) + " values for shape " +
                   shape_str(r.shape));
    }
    r.values.reserve(vals.size());
    for (auto v : vals) r.values.push_back(parse_number<double>(v, no));
    return r;
  };
  bool ended = false;
  while (next()) {
    const auto t = split(line);
    if (t.empty()) continue;
    const auto kind = t[0];
    if (kind == "end") {
      ended = true;
      break;
    }
    if (kind == "iteration" && t.size() == 2) {
      p.iteration = parse_number<std::uint64_t>(t[1], no);
      p.has_iteration = true;
    } else if (kind == "param" || kind == "velocity") {
      const std::string name(t[1]);
      auto& dst = kind == "param" ? p.params : p.velocity;
      if (dst.count(name)) fail(no, "duplicate record " + name);
      dst[name] = read_record(t);
    } else if (kind == "bank.rows") {
      std::vector<std::string_view> shifted = {t[0], "bank.rows"};
      shifted.insert(shifted.end(), t.begin() + 1, t.end());
      p.bank_rows = read_record(shifted);
    } else if (kind == "bank.initialized") {
      for (std::size_t k = 1; k < t.size(); ++k) {
        if (t[k] != "0" && t[k] != "1") fail(no, "initialized flags must be 0 or 1");
        p.bank_initialized.push_back(t[k] == "1");
      }
      p.has_initialized = true;
    } else if (kind == "bank.momentum" && t.size() == 2) {
      p.bank_momentum = parse_number<double>(t[1], no);
      p.has_momentum = true;
    } else if (kind == "bank.update_count" && t.size() == 2) {
      p.bank_updates = parse_number<std::uint64_t>(t[1], no);
      p.has_updates = true;
    } else {
      fail(no, "unrecognized record '" + std::string(kind) + "'");
    }
  }
  if (!ended) throw CheckpointError("checkpoint is truncated (no end marker)");
  if (!p.has_iteration) throw CheckpointError("checkpoint has no iteration counter");
  if (!p.bank_rows || !p.has_initialized || !p.has_momentum || !p.has_updates) {
    throw CheckpointError("checkpoint has incomplete memory bank state");
  }
  return p;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model, const OptimState& optim,
                     std::uint64_t iteration) {
  out << kMagic << ' ' << kCheckpointVersion << "\n";
  out << "iteration " << iteration << "\n";
  const auto params = model.parameters();
  for (const auto& p : params) put_record(out, "param", p.name, p.grid.shape(), p.grid.values());
  const auto& bank = model.bank;
  out << "bank.momentum " << format_double(bank.momentum()) << "\n";
  out << "bank.update_count " << bank.update_count() << "\n";
  out << "bank.initialized";
  for (bool b : bank.initialized()) out << ' ' << (b ? 1 : 0);
  out << "\n";
  out << "bank.rows 2 " << bank.classes() << ' ' << bank.feature_dim() << "\n";
  put_values(out, bank.row_values());
  for (const auto& p : params) {
    const auto it = optim.velocity.find(p.name);
    if (it == optim.velocity.end()) continue;
    put_record(out, "velocity", p.name, p.grid.shape(), it->second);
  }
  out << "end\n";
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const OptimState& optim, std::uint64_t iteration) {
  std::ostringstream ss;
  save_checkpoint(ss, model, optim, iteration);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << ss.str();
  if (!out) throw CheckpointError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(std::istream& in, const ExperimentConfig& config_in) {
  ExperimentConfig config = config_in;
  config.finalize();
  const Parsed p = parse(in);

  Model model = Model::init(config.model, 0);
  auto params = model.parameters();
  for (const auto& param : params) {
    const auto it = p.params.find(param.name);
    if (it == p.params.end()) {
      throw CheckpointError("checkpoint lacks parameter " + param.name);
    }
    if (it->second.shape != param.grid.shape()) {
      throw CheckpointError(param.name + ": checkpoint shape " + shape_str(it->second.shape) +
                            " vs model shape " + shape_str(param.grid.shape()));
    }
    const auto v = p.velocity.find(param.name);
    if (v != p.velocity.end() && v->second.shape != param.grid.shape()) {
      throw CheckpointError("velocity " + param.name + ": checkpoint shape " +
                            shape_str(v->second.shape) + " vs model shape " +
                            shape_str(param.grid.shape()));
    }
  }
  for (const auto& [name, rec] : p.params) {
    const bool known = std::any_of(params.begin(), params.end(),
                                   [&](const auto& q) { return q.name == name; });
    if (!known) throw CheckpointError("checkpoint parameter " + name + " is not part of this model");
  }
  for (const auto& [name, rec] : p.velocity) {
    if (!p.params.count(name)) throw CheckpointError("velocity for unknown parameter " + name);
  }
  const Shape bank_shape{config.model.n_classes, config.model.feature_dim};
  if (p.bank_rows->shape != bank_shape) {
    throw CheckpointError("bank.rows: checkpoint shape " + shape_str(p.bank_rows->shape) +
                          " vs model shape " + shape_str(bank_shape));
  }
  MemoryBank bank = [&] {
    try {
      return MemoryBank::restore(bank_shape[0], bank_shape[1], p.bank_momentum,
                                 p.bank_rows->values, p.bank_initialized, p.bank_updates);
    } catch (const Error& e) {
      throw CheckpointError(std::string("bank: ") + e.what());
    }
  }();

  // Everything validated; commit.
  for (auto& param : params) {
    const auto& src = p.params.at(param.name).values;
    std::copy(src.begin(), src.end(), param.grid.mutable_values().begin());
  }
  model.bank = std::move(bank);
  OptimState optim(config.optim);
  for (const auto& [name, rec] : p.velocity) optim.velocity[name] = rec.values;
  return {std::move(model), std::move(optim), p.iteration};
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  return load_checkpoint(in, config);
}

CheckpointCounts checkpoint_parameter_counts(std::istream& in) {
  const Parsed p = parse(in);
  CheckpointCounts c;
  for (const auto& [name, rec] : p.params) {
    (name.rfind("encoder.", 0) == 0 ? c.encoder : c.head) += rec.values.size();
  }
  return c;
}

}  // namespace ecac
