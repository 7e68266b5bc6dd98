#pragma once

// Biased dataset generators.
//
// Blobs: each sample concatenates a class signal block and a bias block,
//   x = [mu_sig(label) * signal_scale + noise, mu_bias(b) * bias_scale + noise]
// where b equals the class's designated bias value with probability rho and
// is uniform over the other K - 1 values otherwise. The test split uses
// rho = 1/K, i.e. b uniform.
//
// Biased-MNIST: background pixels of each digit are painted with a palette
// color chosen by the same rule.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "epsfair/tensor.hpp"

namespace epsfair {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One row of a dataset.
struct Sample {
  std::vector<double> features;
  int label = 0;
  int bias_attr = 0;
  bool aligned = false;
};

/// Samples stored column-compact: features [N, D] row-major.
struct Dataset {
  Tensor features;
  std::vector<int> labels;
  std::vector<int> bias_attrs;
  std::vector<char> aligned;
  int n_classes = 0;
  int n_bias_values = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.cols() : 0; }

  /// The bias value class `label` is correlated with.
  int designated_bias(int label) const { return label % n_bias_values; }

  std::size_t aligned_count() const {
    return static_cast<std::size_t>(std::count(aligned.begin(), aligned.end(), 1));
  }
  std::size_t conflicting_count() const { return size() - aligned_count(); }

  Sample sample(std::size_t i) const {
    Sample s;
    s.features.assign(features.data() + i * dim(), features.data() + (i + 1) * dim());
    s.label = labels.at(i);
    s.bias_attr = bias_attrs.at(i);
    s.aligned = aligned.at(i) != 0;
    return s;
  }

  /// Rows `idx` as a [|idx|, D] matrix.
  Tensor rows(const std::vector<std::size_t>& idx) const {
    std::size_t d = dim();
    Tensor out(Shape{idx.size(), d});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::memcpy(out.data() + k * d, features.data() + idx[k] * d, d * sizeof(double));
    }
    return out;
  }

  void validate() const {
    std::size_t n = size();
    if (features.rank() != 2 || features.rows() != n) throw ShapeError("dataset features/labels mismatch");
    if (bias_attrs.size() != n || aligned.size() != n) throw ShapeError("dataset column mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0 || labels[i] >= n_classes) throw std::invalid_argument("label out of range");
      if (bias_attrs[i] < 0 || bias_attrs[i] >= n_bias_values) {
        throw std::invalid_argument("bias attribute out of range");
      }
      if ((aligned[i] != 0) != (bias_attrs[i] == designated_bias(labels[i]))) {
        throw std::invalid_argument("aligned flag disagrees with bias attribute at row " +
                                    std::to_string(i));
      }
    }
  }
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

namespace detail {

/// Designated value with probability rho, else uniform over the others.
inline int draw_bias(std::mt19937_64& rng, int designated, int k, double rho) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (k == 1 || u(rng) < rho) return designated;
  std::uniform_int_distribution<int> other(0, k - 2);
  int v = other(rng);
  return v >= designated ? v + 1 : v;
}

/// Random unit directions, one per row.
inline std::vector<std::vector<double>> unit_directions(std::mt19937_64& rng, int count,
                                                        std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> out(count, std::vector<double>(dim));
  for (auto& v : out) {
    double s = 0.0;
    for (double& x : v) {
      x = n(rng);
      s += x * x;
    }
    s = std::sqrt(s);
    for (double& x : v) x /= s;
  }
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Blobs

struct BlobSpec {
  int n_classes = 10;
  int n_bias_values = 0;  // 0 means n_classes
  std::size_t dim_signal = 16;
  std::size_t dim_bias = 16;
  double rho = 0.99;
  std::size_t n_train = 5000;
  std::size_t n_test = 2000;
  double signal_scale = 1.0;
  double bias_scale = 4.0;
  double noise_scale = 1.0;
  std::uint64_t seed = 0;

  int bias_values() const { return n_bias_values > 0 ? n_bias_values : n_classes; }

  void validate() const {
    if (n_classes < 2) throw std::invalid_argument("blobs: n_classes must be >= 2");
    if (bias_values() < 1) throw std::invalid_argument("blobs: n_bias_values must be >= 1");
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("blobs: rho must be in (0, 1]");
    if (dim_signal < 1 || dim_bias < 1) throw std::invalid_argument("blobs: dims must be >= 1");
    auto c = static_cast<std::size_t>(n_classes);
    if (n_train < c || n_test < c) throw std::invalid_argument("blobs: counts must be >= n_classes");
    if (!(signal_scale > 0.0 && bias_scale > 0.0 && noise_scale > 0.0)) {
      throw std::invalid_argument("blobs: scales must be positive");
    }
  }

  std::string describe() const {
    std::ostringstream os;
    os << "blobs n_classes=" << n_classes << " n_bias_values=" << bias_values()
       << " dim_signal=" << dim_signal << " dim_bias=" << dim_bias
       << " rho=" << detail::format_double(rho) << " n_train=" << n_train << " n_test=" << n_test
       << " signal_scale=" << detail::format_double(signal_scale)
       << " bias_scale=" << detail::format_double(bias_scale)
       << " noise_scale=" << detail::format_double(noise_scale) << " seed=" << seed;
    return os.str();
  }
};

namespace detail {

inline Dataset blob_split(const BlobSpec& spec, std::size_t n, double rho, std::mt19937_64& rng,
                          const std::vector<std::vector<double>>& sig,
                          const std::vector<std::vector<double>>& bias) {
  Dataset ds;
  ds.n_classes = spec.n_classes;
  ds.n_bias_values = spec.bias_values();
  std::size_t d = spec.dim_signal + spec.dim_bias;
  ds.features = Tensor(Shape{n, d});
  ds.labels.resize(n);
  ds.bias_attrs.resize(n);
  ds.aligned.resize(n);
  std::normal_distribution<double> noise(0.0, spec.noise_scale);
  for (std::size_t i = 0; i < n; ++i) {
    // round-robin labels keep class counts balanced
    int y = static_cast<int>(i % static_cast<std::size_t>(spec.n_classes));
    int b = draw_bias(rng, ds.designated_bias(y), ds.n_bias_values, rho);
    ds.labels[i] = y;
    ds.bias_attrs[i] = b;
    ds.aligned[i] = b == ds.designated_bias(y) ? 1 : 0;
    double* row = ds.features.data() + i * d;
    for (std::size_t k = 0; k < spec.dim_signal; ++k) {
      row[k] = sig[y][k] * spec.signal_scale + noise(rng);
    }
    for (std::size_t k = 0; k < spec.dim_bias; ++k) {
      row[spec.dim_signal + k] = bias[b][k] * spec.bias_scale + noise(rng);
    }
  }
  return ds;
}

}  // namespace detail

inline DatasetPair gen_biased_blobs(const BlobSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto sig = detail::unit_directions(rng, spec.n_classes, spec.dim_signal);
  auto bias = detail::unit_directions(rng, spec.bias_values(), spec.dim_bias);
  DatasetPair out;
  std::mt19937_64 train_rng(spec.seed * 2654435761ULL + 1);
  std::mt19937_64 test_rng(spec.seed * 2654435761ULL + 2);
  out.train = detail::blob_split(spec, spec.n_train, spec.rho, train_rng, sig, bias);
  out.test = detail::blob_split(spec, spec.n_test, 1.0 / spec.bias_values(), test_rng, sig, bias);
  return out;
}

// ---------------------------------------------------------------------------
// IDX

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

struct IdxLabels {
  std::size_t count = 0;
  std::vector<std::uint8_t> labels;
};

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

inline void check_magic(const std::vector<std::uint8_t>& bytes, std::uint32_t expected,
                        const std::string& what) {
  if (bytes.size() < 4) throw IdxError(what + ": truncated header");
  std::uint32_t magic = read_be32(bytes, 0);
  if (magic != expected) {
    throw IdxError(what + ": bad magic, expected " + hex32(expected) + " got " + hex32(magic));
  }
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

inline IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes,
                                  const std::string& what = "idx images") {
  detail::check_magic(bytes, 0x00000803, what);
  if (bytes.size() < 16) throw IdxError(what + ": truncated header");
  IdxImages img;
  img.count = detail::read_be32(bytes, 4);
  img.rows = detail::read_be32(bytes, 8);
  img.cols = detail::read_be32(bytes, 12);
  std::size_t need = img.count * img.rows * img.cols;
  if (bytes.size() - 16 < need) {
    throw IdxError(what + ": truncated, header declares " + std::to_string(need) +
                   " pixel bytes, file has " + std::to_string(bytes.size() - 16));
  }
  if (bytes.size() - 16 > need) {
    throw IdxError(what + ": dimension mismatch, " + std::to_string(bytes.size() - 16 - need) +
                   " trailing bytes");
  }
  img.pixels.assign(bytes.begin() + 16, bytes.end());
  return img;
}

inline IdxLabels parse_idx_labels(const std::vector<std::uint8_t>& bytes,
                                  const std::string& what = "idx labels") {
  detail::check_magic(bytes, 0x00000801, what);
  if (bytes.size() < 8) throw IdxError(what + ": truncated header");
  IdxLabels lab;
  lab.count = detail::read_be32(bytes, 4);
  if (bytes.size() - 8 < lab.count) {
    throw IdxError(what + ": truncated, header declares " + std::to_string(lab.count) +
                   " labels, file has " + std::to_string(bytes.size() - 8));
  }
  if (bytes.size() - 8 > lab.count) throw IdxError(what + ": dimension mismatch, trailing bytes");
  lab.labels.assign(bytes.begin() + 8, bytes.end());
  return lab;
}

inline IdxImages parse_idx_images_file(const std::string& path) {
  return parse_idx_images(detail::read_file(path), path);
}

inline IdxLabels parse_idx_labels_file(const std::string& path) {
  return parse_idx_labels(detail::read_file(path), path);
}

// ---------------------------------------------------------------------------
// Biased-MNIST

using Rgb = std::array<std::uint8_t, 3>;

/// Ten fully saturated hues 36 degrees apart.
inline std::vector<Rgb> default_palette() {
  std::vector<Rgb> out;
  for (int i = 0; i < 10; ++i) {
    double h = i * 36.0 / 60.0;
    double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(h)) {
      case 0: r = 1; g = x; break;
      case 1: r = x; g = 1; break;
      case 2: g = 1; b = x; break;
      case 3: g = x; b = 1; break;
      case 4: r = x; b = 1; break;
      default: r = 1; b = x; break;
    }
    auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
    out.push_back({q(r), q(g), q(b)});
  }
  return out;
}

struct BiasedMnistSpec {
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  double rho = 0.995;
  double test_rho = 0.1;
  std::vector<Rgb> palette = default_palette();
  std::size_t subset_size = 5000;       // training samples; 0 keeps all
  std::size_t test_subset_size = 0;     // 0 keeps all
  int background_threshold = 64;
  bool tint = false;
  int downsample = 1;                   // average-pool factor (1, 2 or 4)
  std::uint64_t seed = 0;

  void validate() const {
    if (palette.size() != 10) throw std::invalid_argument("biased_mnist: palette needs 10 colors");
    for (std::size_t i = 0; i < palette.size(); ++i) {
      for (std::size_t j = i + 1; j < palette.size(); ++j) {
        if (palette[i] == palette[j]) throw std::invalid_argument("biased_mnist: palette colors must be distinct");
      }
    }
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("biased_mnist: rho must be in (0, 1]");
    if (!(test_rho > 0.0 && test_rho <= 1.0)) throw std::invalid_argument("biased_mnist: test_rho must be in (0, 1]");
    if (background_threshold < 0 || background_threshold > 256) {
      throw std::invalid_argument("biased_mnist: background_threshold must be in [0, 256]");
    }
    if (downsample != 1 && downsample != 2 && downsample != 4) {
      throw std::invalid_argument("biased_mnist: downsample must be 1, 2 or 4");
    }
  }

  std::string describe() const {
    std::ostringstream os;
    os << "biased_mnist rho=" << detail::format_double(rho)
       << " test_rho=" << detail::format_double(test_rho) << " subset_size=" << subset_size
       << " test_subset_size=" << test_subset_size << " background_threshold=" << background_threshold
       << " tint=" << (tint ? 1 : 0) << " downsample=" << downsample << " seed=" << seed;
    return os.str();
  }
};

/// Paints the background of each digit. Color index = label with
/// probability rho, otherwise uniform over the other nine. Features are RGB
/// values in [0, 1], channel-minor.
inline Dataset colorize(const IdxImages& images, const IdxLabels& labels, double rho,
                        const BiasedMnistSpec& spec, std::uint64_t seed, std::size_t limit = 0) {
  spec.validate();
  if (images.count != labels.count) {
    throw IdxError("image count " + std::to_string(images.count) + " does not match label count " +
                   std::to_string(labels.count));
  }
  std::size_t n = images.count;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (limit > 0 && limit < n) {
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(limit);
    std::sort(order.begin(), order.end());
    n = limit;
  }
  std::size_t f = static_cast<std::size_t>(spec.downsample);
  std::size_t out_r = images.rows / f;
  std::size_t out_c = images.cols / f;
  std::size_t d = out_r * out_c * 3;
  Dataset ds;
  ds.n_classes = 10;
  ds.n_bias_values = 10;
  ds.features = Tensor(Shape{n, d});
  ds.labels.resize(n);
  ds.bias_attrs.resize(n);
  ds.aligned.resize(n);
  std::vector<double> rgb(images.rows * images.cols * 3);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t src = order[k];
    int y = labels.labels[src];
    if (y < 0 || y > 9) throw IdxError("label " + std::to_string(y) + " outside 0..9");
    int b = detail::draw_bias(rng, y, 10, rho);
    ds.labels[k] = y;
    ds.bias_attrs[k] = b;
    ds.aligned[k] = b == y ? 1 : 0;
    const Rgb& color = spec.palette[b];
    const std::uint8_t* px = images.pixels.data() + src * images.rows * images.cols;
    for (std::size_t p = 0; p < images.rows * images.cols; ++p) {
      for (int ch = 0; ch < 3; ++ch) {
        double v;
        if (px[p] < spec.background_threshold) {
          v = color[ch];
        } else if (spec.tint) {
          v = px[p] * (0.5 + 0.5 * color[ch] / 255.0);
        } else {
          v = px[p];
        }
        rgb[p * 3 + ch] = v / 255.0;
      }
    }
    double* row = ds.features.data() + k * d;
    double norm = 1.0 / static_cast<double>(f * f);
    for (std::size_t r = 0; r < out_r; ++r) {
      for (std::size_t c = 0; c < out_c; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          double s = 0.0;
          for (std::size_t dr = 0; dr < f; ++dr) {
            for (std::size_t dc = 0; dc < f; ++dc) {
              s += rgb[((r * f + dr) * images.cols + (c * f + dc)) * 3 + ch];
            }
          }
          row[(r * out_c + c) * 3 + ch] = s * norm;
        }
      }
    }
  }
  return ds;
}

/// Reads the IDX files named by the spec and builds both splits.
inline DatasetPair gen_biased_mnist(const BiasedMnistSpec& spec) {
  spec.validate();
  IdxImages tri = parse_idx_images_file(spec.train_images);
  IdxLabels trl = parse_idx_labels_file(spec.train_labels);
  IdxImages tei = parse_idx_images_file(spec.test_images);
  IdxLabels tel = parse_idx_labels_file(spec.test_labels);
  DatasetPair out;
  out.train = colorize(tri, trl, spec.rho, spec, spec.seed * 2654435761ULL + 11, spec.subset_size);
  out.test = colorize(tei, tel, spec.test_rho, spec, spec.seed * 2654435761ULL + 12,
                      spec.test_subset_size);
  return out;
}

// ---------------------------------------------------------------------------
// Bias scores

/// Supplies the [B, B] pairwise bias-similarity matrix for a batch of
/// dataset row indices.
using BiasScoreProvider = std::function<Tensor(const std::vector<std::size_t>& rows)>;

/// Scores from the true attributes: `confidence` for equal attributes and
/// 1 - confidence otherwise. confidence = 1 reproduces discrete groups.
inline BiasScoreProvider oracle_bias_scores(const Dataset& ds, double confidence = 1.0) {
  if (!(confidence >= 0.5 && confidence <= 1.0)) {
    throw std::invalid_argument("oracle confidence must be in [0.5, 1]");
  }
  const std::vector<int>* attrs = &ds.bias_attrs;
  return [attrs, confidence](const std::vector<std::size_t>& rows) {
    std::size_t b = rows.size();
    Tensor s(Shape{b, b});
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        bool same = (*attrs)[rows[i]] == (*attrs)[rows[j]];
        s.at(i, j) = same ? confidence : 1.0 - confidence;
      }
    }
    return s;
  };
}

// ---------------------------------------------------------------------------
// Serialization
//
// Layout: one text header line
//   epsfair-dataset 1 rows=<n> cols=<d> classes=<c> bias_values=<k>\n
// followed by n records of d little-endian doubles, int32 label, int32 bias
// attribute and one aligned byte.

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "epsfair-dataset 1 rows=" << ds.size() << " cols=" << ds.dim() << " classes=" << ds.n_classes
      << " bias_values=" << ds.n_bias_values << "\n";
  std::size_t d = ds.dim();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.write(reinterpret_cast<const char*>(ds.features.data() + i * d),
              static_cast<std::streamsize>(d * sizeof(double)));
    std::int32_t y = ds.labels[i];
    std::int32_t b = ds.bias_attrs[i];
    out.write(reinterpret_cast<const char*>(&y), sizeof y);
    out.write(reinterpret_cast<const char*>(&b), sizeof b);
    out.put(ds.aligned[i]);
  }
  if (!out) throw IoError("write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  hs >> magic >> version;
  if (magic != "epsfair-dataset" || version != 1) throw IoError(path + ": not an epsfair dataset");
  std::size_t rows = 0, cols = 0;
  Dataset ds;
  std::string tok;
  while (hs >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    std::string key = tok.substr(0, eq);
    std::size_t val = std::stoul(tok.substr(eq + 1));
    if (key == "rows") rows = val;
    if (key == "cols") cols = val;
    if (key == "classes") ds.n_classes = static_cast<int>(val);
    if (key == "bias_values") ds.n_bias_values = static_cast<int>(val);
  }
  ds.features = Tensor(Shape{rows, cols});
  ds.labels.resize(rows);
  ds.bias_attrs.resize(rows);
  ds.aligned.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    in.read(reinterpret_cast<char*>(ds.features.data() + i * cols),
            static_cast<std::streamsize>(cols * sizeof(double)));
    std::int32_t y = 0, b = 0;
    in.read(reinterpret_cast<char*>(&y), sizeof y);
    in.read(reinterpret_cast<char*>(&b), sizeof b);
    ds.labels[i] = y;
    ds.bias_attrs[i] = b;
    ds.aligned[i] = static_cast<char>(in.get());
  }
  if (!in) throw IoError(path + ": truncated dataset");
  ds.validate();
  return ds;
}

/// Text manifest: spec echo plus per-split counts.
inline void write_manifest(const DatasetPair& data, const std::string& spec_echo,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "spec=" << spec_echo << "\n";
  auto split = [&](const char* name, const Dataset& ds) {
    out << name << ".rows=" << ds.size() << "\n";
    out << name << ".cols=" << ds.dim() << "\n";
    out << name << ".aligned=" << ds.aligned_count() << "\n";
    out << name << ".conflicting=" << ds.conflicting_count() << "\n";
  };
  split("train", data.train);
  split("test", data.test);
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace epsfair
