#pragma once

// Flat sectioned config files:
//
//   seed = 3
//   [dataset]
//   kind = blobs
//   rho = 0.99
//
// Every key is typed; unknown keys and keys for the other dataset kind are
// errors. to_text() writes the fully resolved config in the same format.

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "epsfair/datagen.hpp"
#include "epsfair/encoder.hpp"
#include "epsfair/fairkl.hpp"
#include "epsfair/losses.hpp"
#include "epsfair/optim.hpp"
#include "epsfair/probe.hpp"

namespace epsfair {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { kBlobs, kBiasedMnist };

inline std::string_view to_string(DatasetKind k) {
  return k == DatasetKind::kBlobs ? "blobs" : "biased_mnist";
}

struct SweepSpec {
  std::vector<double> epsilon;
  std::vector<double> alpha;
  std::vector<double> lambda;
  std::vector<double> rho;
  std::vector<std::uint64_t> seeds;
  std::size_t workers = 1;

  bool empty() const {
    return epsilon.empty() && alpha.empty() && lambda.empty() && rho.empty() && seeds.empty();
  }
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DatasetKind dataset = DatasetKind::kBlobs;
  BlobSpec blobs;
  BiasedMnistSpec mnist;
  EncoderSpec model;
  LossConfig loss;
  RegularizerConfig reg;
  double bias_confidence = 1.0;
  double alpha = 1.0;
  double lambda = 0.0;
  OptimSpec optim;
  ProbeSpec probe;
  std::size_t probe_every = 1;
  bool record_wall_time = false;
  std::size_t hist_samples = 1000;
  SweepSpec sweep;

  double rho() const { return dataset == DatasetKind::kBlobs ? blobs.rho : mnist.rho; }

  void set_rho(double r) {
    blobs.rho = r;
    mnist.rho = r;
  }

  /// Applies the run seed to every seeded component.
  void set_seed(std::uint64_t s) {
    seed = s;
    blobs.seed = s;
    mnist.seed = s;
  }

  void validate() const {
    try {
      if (dataset == DatasetKind::kBlobs) {
        blobs.validate();
      } else {
        mnist.validate();
        for (const std::string* p : {&mnist.train_images, &mnist.train_labels, &mnist.test_images,
                                     &mnist.test_labels}) {
          if (p->empty()) throw std::invalid_argument("biased_mnist: all four IDX paths are required");
        }
      }
      for (std::size_t h : model.hidden) {
        if (h == 0) throw std::invalid_argument("model: hidden widths must be > 0");
      }
      if (model.embedding_dim < 2) throw std::invalid_argument("model: embedding_dim must be >= 2");
      loss.validate();
      reg.validate();
      optim.validate();
      if (!(alpha > 0.0)) throw std::invalid_argument("objective: alpha must be > 0");
      if (!(lambda >= 0.0)) throw std::invalid_argument("objective: lambda must be >= 0");
      if (!(bias_confidence >= 0.5 && bias_confidence <= 1.0)) {
        throw std::invalid_argument("regularizer: bias_confidence must be in [0.5, 1]");
      }
      if (sweep.workers == 0) throw std::invalid_argument("sweep: workers must be >= 1");
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& v) {
  if (v.empty()) throw ConfigError("expected a number, got an empty value");
  char* end = nullptr;
  errno = 0;
  double d = std::strtod(v.c_str(), &end);
  if (*end != '\0' || errno == ERANGE) throw ConfigError("expected a number, got '" + v + "'");
  return d;
}

inline std::uint64_t to_uint(const std::string& v) {
  if (v.empty() || v[0] == '-') throw ConfigError("expected a non-negative integer, got '" + v + "'");
  char* end = nullptr;
  errno = 0;
  unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return u;
}

inline bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += f(xs[i]);
  }
  return out;
}

template <typename E, typename P>
E parse_enum(P parse, const std::string& v) {
  try {
    return parse(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

enum class Scope { kAny, kBlobs, kMnist, kSweep };

struct Field {
  std::string section;
  std::string key;
  Scope scope;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  using S = const std::string&;
  auto num = [](auto member) {
    return std::pair{std::function<void(C&, S)>([member](C& c, S v) { member(c) = to_double(v); }),
                     std::function<std::string(const C&)>(
                         [member](const C& c) { return fmt(member(const_cast<C&>(c))); })};
  };
  auto uint = [](auto member) {
    return std::pair{
        std::function<void(C&, S)>([member](C& c, S v) {
          member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(to_uint(v));
        }),
        std::function<std::string(const C&)>(
            [member](const C& c) { return std::to_string(member(const_cast<C&>(c))); })};
  };
  auto boolean = [](auto member) {
    return std::pair{std::function<void(C&, S)>([member](C& c, S v) { member(c) = to_bool(v); }),
                     std::function<std::string(const C&)>([member](const C& c) {
                       return std::string(member(const_cast<C&>(c)) ? "true" : "false");
                     })};
  };
  auto text = [](auto member) {
    return std::pair{std::function<void(C&, S)>([member](C& c, S v) { member(c) = v; }),
                     std::function<std::string(const C&)>(
                         [member](const C& c) { return member(const_cast<C&>(c)); })};
  };
  auto dlist = [](auto member) {
    return std::pair{std::function<void(C&, S)>([member](C& c, S v) {
                       auto& out = member(c);
                       out.clear();
                       for (const auto& s : split_list(v)) out.push_back(to_double(s));
                     }),
                     std::function<std::string(const C&)>([member](const C& c) {
                       return join(member(const_cast<C&>(c)), [](double d) { return fmt(d); });
                     })};
  };
  auto ulist = [](auto member) {
    return std::pair{std::function<void(C&, S)>([member](C& c, S v) {
                       auto& out = member(c);
                       out.clear();
                       for (const auto& s : split_list(v)) {
                         out.push_back(static_cast<typename std::remove_reference_t<decltype(out)>::value_type>(to_uint(s)));
                       }
                     }),
                     std::function<std::string(const C&)>([member](const C& c) {
                       return join(member(const_cast<C&>(c)), [](auto u) { return std::to_string(u); });
                     })};
  };
  auto add = [](std::vector<Field>& fs, std::string sec, std::string key, Scope scope, auto pair) {
    fs.push_back(Field{std::move(sec), std::move(key), scope, pair.first, pair.second});
  };

  static const std::vector<Field> table = [&] {
    std::vector<Field> fs;
    add(fs, "", "seed", Scope::kAny, std::pair{
        std::function<void(C&, S)>([](C& c, S v) { c.set_seed(to_uint(v)); }),
        std::function<std::string(const C&)>([](const C& c) { return std::to_string(c.seed); })});
    add(fs, "", "output_dir", Scope::kAny, text([](C& c) -> std::string& { return c.output_dir; }));

    add(fs, "dataset", "kind", Scope::kAny, std::pair{
        std::function<void(C&, S)>([](C& c, S v) {
          if (v == "blobs") c.dataset = DatasetKind::kBlobs;
          else if (v == "biased_mnist") c.dataset = DatasetKind::kBiasedMnist;
          else throw ConfigError("unknown dataset kind '" + v + "' (blobs, biased_mnist)");
        }),
        std::function<std::string(const C&)>([](const C& c) { return std::string(to_string(c.dataset)); })});
    add(fs, "dataset", "rho", Scope::kAny, std::pair{
        std::function<void(C&, S)>([](C& c, S v) { c.set_rho(to_double(v)); }),
        std::function<std::string(const C&)>([](const C& c) { return fmt(c.rho()); })});
    add(fs, "dataset", "n_classes", Scope::kBlobs, uint([](C& c) -> int& { return c.blobs.n_classes; }));
    add(fs, "dataset", "n_bias_values", Scope::kBlobs, uint([](C& c) -> int& { return c.blobs.n_bias_values; }));
    add(fs, "dataset", "dim_signal", Scope::kBlobs, uint([](C& c) -> std::size_t& { return c.blobs.dim_signal; }));
    add(fs, "dataset", "dim_bias", Scope::kBlobs, uint([](C& c) -> std::size_t& { return c.blobs.dim_bias; }));
    add(fs, "dataset", "n_train", Scope::kBlobs, uint([](C& c) -> std::size_t& { return c.blobs.n_train; }));
    add(fs, "dataset", "n_test", Scope::kBlobs, uint([](C& c) -> std::size_t& { return c.blobs.n_test; }));
    add(fs, "dataset", "signal_scale", Scope::kBlobs, num([](C& c) -> double& { return c.blobs.signal_scale; }));
    add(fs, "dataset", "bias_scale", Scope::kBlobs, num([](C& c) -> double& { return c.blobs.bias_scale; }));
    add(fs, "dataset", "noise_scale", Scope::kBlobs, num([](C& c) -> double& { return c.blobs.noise_scale; }));
    add(fs, "dataset", "train_images", Scope::kMnist, text([](C& c) -> std::string& { return c.mnist.train_images; }));
    add(fs, "dataset", "train_labels", Scope::kMnist, text([](C& c) -> std::string& { return c.mnist.train_labels; }));
    add(fs, "dataset", "test_images", Scope::kMnist, text([](C& c) -> std::string& { return c.mnist.test_images; }));
    add(fs, "dataset", "test_labels", Scope::kMnist, text([](C& c) -> std::string& { return c.mnist.test_labels; }));
    add(fs, "dataset", "test_rho", Scope::kMnist, num([](C& c) -> double& { return c.mnist.test_rho; }));
    add(fs, "dataset", "subset_size", Scope::kMnist, uint([](C& c) -> std::size_t& { return c.mnist.subset_size; }));
    add(fs, "dataset", "test_subset_size", Scope::kMnist, uint([](C& c) -> std::size_t& { return c.mnist.test_subset_size; }));
    add(fs, "dataset", "background_threshold", Scope::kMnist, uint([](C& c) -> int& { return c.mnist.background_threshold; }));
    add(fs, "dataset", "tint", Scope::kMnist, boolean([](C& c) -> bool& { return c.mnist.tint; }));
    add(fs, "dataset", "downsample", Scope::kMnist, uint([](C& c) -> int& { return c.mnist.downsample; }));

    add(fs, "model", "hidden", Scope::kAny, ulist([](C& c) -> std::vector<std::size_t>& { return c.model.hidden; }));
    add(fs, "model", "embedding_dim", Scope::kAny, uint([](C& c) -> std::size_t& { return c.model.embedding_dim; }));

    add(fs, "loss", "variant", Scope::kAny, std::pair{
        std::function<void(C&, S)>([](C& c, S v) { c.loss.variant = parse_enum<LossVariant>(parse_loss_variant, v); }),
        std::function<std::string(const C&)>([](const C& c) { return std::string(to_string(c.loss.variant)); })});
    add(fs, "loss", "epsilon", Scope::kAny, num([](C& c) -> double& { return c.loss.epsilon; }));
    add(fs, "loss", "temperature", Scope::kAny, num([](C& c) -> double& { return c.loss.temperature; }));

    add(fs, "regularizer", "kind", Scope::kAny, std::pair{
        std::function<void(C&, S)>([](C& c, S v) { c.reg.kind = parse_enum<RegularizerKind>(parse_regularizer_kind, v); }),
        std::function<std::string(const C&)>([](const C& c) { return std::string(to_string(c.reg.kind)); })});
    add(fs, "regularizer", "variance_floor", Scope::kAny, num([](C& c) -> double& { return c.reg.variance_floor; }));
    add(fs, "regularizer", "fallback", Scope::kAny, std::pair{
        std::function<void(C&, S)>([](C& c, S v) { c.reg.fallback = parse_enum<DegeneracyFallback>(parse_fallback, v); }),
        std::function<std::string(const C&)>([](const C& c) { return std::string(to_string(c.reg.fallback)); })});
    add(fs, "regularizer", "bias_mode", Scope::kAny, std::pair{
        std::function<void(C&, S)>([](C& c, S v) { c.reg.bias_mode = parse_enum<BiasMode>(parse_bias_mode, v); }),
        std::function<std::string(const C&)>([](const C& c) { return std::string(to_string(c.reg.bias_mode)); })});
    add(fs, "regularizer", "bias_confidence", Scope::kAny, num([](C& c) -> double& { return c.bias_confidence; }));

    add(fs, "objective", "alpha", Scope::kAny, num([](C& c) -> double& { return c.alpha; }));
    add(fs, "objective", "lambda", Scope::kAny, num([](C& c) -> double& { return c.lambda; }));

    add(fs, "optim", "algorithm", Scope::kAny, std::pair{
        std::function<void(C&, S)>([](C& c, S v) { c.optim.algorithm = parse_enum<OptimAlgorithm>(parse_optim_algorithm, v); }),
        std::function<std::string(const C&)>([](const C& c) { return std::string(to_string(c.optim.algorithm)); })});
    add(fs, "optim", "lr", Scope::kAny, num([](C& c) -> double& { return c.optim.lr; }));
    add(fs, "optim", "weight_decay", Scope::kAny, num([](C& c) -> double& { return c.optim.weight_decay; }));
    add(fs, "optim", "momentum", Scope::kAny, num([](C& c) -> double& { return c.optim.momentum; }));
    add(fs, "optim", "beta1", Scope::kAny, num([](C& c) -> double& { return c.optim.beta1; }));
    add(fs, "optim", "beta2", Scope::kAny, num([](C& c) -> double& { return c.optim.beta2; }));
    add(fs, "optim", "adam_eps", Scope::kAny, num([](C& c) -> double& { return c.optim.adam_eps; }));
    add(fs, "optim", "epochs", Scope::kAny, uint([](C& c) -> std::size_t& { return c.optim.epochs; }));
    add(fs, "optim", "batch_size", Scope::kAny, uint([](C& c) -> std::size_t& { return c.optim.batch_size; }));
    add(fs, "optim", "step_decay", Scope::kAny, boolean([](C& c) -> bool& { return c.optim.step_decay; }));

    add(fs, "probe", "max_epochs", Scope::kAny, uint([](C& c) -> std::size_t& { return c.probe.max_epochs; }));
    add(fs, "probe", "grad_tol", Scope::kAny, num([](C& c) -> double& { return c.probe.grad_tol; }));

    add(fs, "output", "probe_every", Scope::kAny, uint([](C& c) -> std::size_t& { return c.probe_every; }));
    add(fs, "output", "record_wall_time", Scope::kAny, boolean([](C& c) -> bool& { return c.record_wall_time; }));
    add(fs, "output", "hist_samples", Scope::kAny, uint([](C& c) -> std::size_t& { return c.hist_samples; }));

    add(fs, "sweep", "epsilon", Scope::kSweep, dlist([](C& c) -> std::vector<double>& { return c.sweep.epsilon; }));
    add(fs, "sweep", "alpha", Scope::kSweep, dlist([](C& c) -> std::vector<double>& { return c.sweep.alpha; }));
    add(fs, "sweep", "lambda", Scope::kSweep, dlist([](C& c) -> std::vector<double>& { return c.sweep.lambda; }));
    add(fs, "sweep", "rho", Scope::kSweep, dlist([](C& c) -> std::vector<double>& { return c.sweep.rho; }));
    add(fs, "sweep", "seeds", Scope::kSweep, ulist([](C& c) -> std::vector<std::uint64_t>& { return c.sweep.seeds; }));
    add(fs, "sweep", "workers", Scope::kSweep, uint([](C& c) -> std::size_t& { return c.sweep.workers; }));
    return fs;
  }();
  return table;
}

inline const Field* find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

inline void resolve_path(std::string& p, const std::filesystem::path& base) {
  if (p.empty() || base.empty()) return;
  std::filesystem::path path(p);
  if (path.is_relative()) p = (base / path).lexically_normal().string();
}

}  // namespace config_detail

/// Parses config text. Relative dataset paths are resolved against
/// `base_dir` when it is non-empty.
inline ExperimentConfig parse_config(const std::string& text, const std::string& base_dir = "") {
  using namespace config_detail;
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  std::vector<std::pair<const Field*, std::size_t>> scoped;
  while (std::getline(in, line)) {
    ++lineno;
    std::string where = "line " + std::to_string(lineno) + ": ";
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const Field& f : fields()) known = known || f.section == section;
      if (!known || section.empty()) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(section, key);
    std::string qualified = section.empty() ? key : section + "." + key;
    if (!f) throw ConfigError(where + "unknown key '" + qualified + "'");
    if (seen.count(qualified)) throw ConfigError(where + "duplicate key '" + qualified + "'");
    seen[qualified] = lineno;
    try {
      f->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + qualified + ": " + e.what());
    }
    if (f->scope == Scope::kBlobs || f->scope == Scope::kMnist) scoped.emplace_back(f, lineno);
  }
  for (const auto& [f, ln] : scoped) {
    bool ok = (f->scope == Scope::kBlobs) == (cfg.dataset == DatasetKind::kBlobs);
    if (!ok) {
      throw ConfigError("line " + std::to_string(ln) + ": key 'dataset." + f->key +
                        "' does not apply to dataset kind " + std::string(to_string(cfg.dataset)));
    }
  }
  std::filesystem::path base(base_dir);
  for (std::string* p : {&cfg.mnist.train_images, &cfg.mnist.train_labels, &cfg.mnist.test_images,
                         &cfg.mnist.test_labels}) {
    resolve_path(*p, base);
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::filesystem::path base = std::filesystem::path(path).parent_path();
  if (base.empty()) base = ".";
  return parse_config(ss.str(), std::filesystem::absolute(base).string());
}

/// Fully resolved config with defaults expanded. Parsing the result gives
/// back an equal config.
inline std::string to_text(const ExperimentConfig& cfg) {
  using namespace config_detail;
  std::ostringstream out;
  std::string section = "\x01";
  for (const Field& f : fields()) {
    if (f.scope == Scope::kBlobs && cfg.dataset != DatasetKind::kBlobs) continue;
    if (f.scope == Scope::kMnist && cfg.dataset != DatasetKind::kBiasedMnist) continue;
    if (f.scope == Scope::kSweep && cfg.sweep.empty()) continue;
    if (f.section != section) {
      if (!f.section.empty()) out << "\n[" << f.section << "]\n";
      section = f.section;
    }
    out << f.key << " = " << f.get(cfg) << "\n";
  }
  return out.str();
}

inline void write_resolved_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << to_text(cfg);
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace epsfair
