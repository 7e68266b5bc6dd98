#pragma once

// MLP encoder onto the unit hypersphere: affine + relu for each hidden
// layer, a final affine map to d, then row-wise L2 normalization.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epsfair/datagen.hpp"
#include "epsfair/geometry.hpp"
#include "epsfair/ops.hpp"

namespace epsfair {

struct EncoderSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden = {256, 256};
  std::size_t embedding_dim = 64;

  void validate() const {
    if (input_dim == 0) throw std::invalid_argument("encoder: input_dim must be > 0");
    if (embedding_dim < 2) throw std::invalid_argument("encoder: embedding_dim must be >= 2");
    for (std::size_t h : hidden) {
      if (h == 0) throw std::invalid_argument("encoder: hidden widths must be > 0");
    }
  }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(embedding_dim);
    return w;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "mlp";
    for (std::size_t w : widths()) os << ' ' << w;
    return os.str();
  }
};

/// Bound parameters of one forward pass.
struct EncoderVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

class Encoder {
 public:
  Encoder() = default;

  /// Weights U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), biases zero.
  Encoder(const EncoderSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec.validate();
    std::mt19937_64 rng(seed);
    auto w = spec.widths();
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      double bound = std::sqrt(6.0 / static_cast<double>(w[l]));
      std::uniform_real_distribution<double> u(-bound, bound);
      Tensor wt(Shape{w[l], w[l + 1]});
      for (std::size_t i = 0; i < wt.size(); ++i) wt[i] = u(rng);
      params_.push_back(std::move(wt));
      params_.push_back(Tensor(Shape{w[l + 1]}, 0.0));
    }
  }

  const EncoderSpec& spec() const { return spec_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::size_t layers() const { return params_.size() / 2; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& p : params_) n += p.size();
    return n;
  }

  EncoderVars bind(Graph& g) const {
    EncoderVars v;
    for (std::size_t l = 0; l < layers(); ++l) {
      v.weights.push_back(g.parameter(params_[2 * l]));
      v.biases.push_back(g.parameter(params_[2 * l + 1]));
    }
    return v;
  }

  /// Unit-norm embeddings [B, d] of inputs [B, input_dim].
  Var forward(const EncoderVars& v, Var x) const {
    Var h = x;
    for (std::size_t l = 0; l < layers(); ++l) {
      h = add_row(matmul(h, v.weights[l]), v.biases[l]);
      if (l + 1 < layers()) h = relu(h);
    }
    return normalize_embeddings(h);
  }

  /// Gradients of `v` in parameter order (after backward).
  std::vector<Tensor> grads(const Graph& g, const EncoderVars& v) const {
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < layers(); ++l) {
      out.push_back(g.grad(v.weights[l]));
      out.push_back(g.grad(v.biases[l]));
    }
    return out;
  }

  /// Inference without a graph. Rows whose pre-normalization output is zero
  /// are left at zero.
  Tensor embed(const Tensor& x) const {
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    if (x.rank() != 2 || x.cols() != spec_.input_dim) {
      throw ShapeError("embed: expected [N, " + std::to_string(spec_.input_dim) + "], got " +
                       shape_str(x.shape()));
    }
    Mat h = Eigen::Map<const Mat>(x.data(), static_cast<Eigen::Index>(x.rows()),
                                  static_cast<Eigen::Index>(x.cols()));
    for (std::size_t l = 0; l < layers(); ++l) {
      const Tensor& w = params_[2 * l];
      const Tensor& b = params_[2 * l + 1];
      Eigen::Map<const Mat> W(w.data(), static_cast<Eigen::Index>(w.rows()),
                              static_cast<Eigen::Index>(w.cols()));
      Eigen::Map<const Eigen::RowVectorXd> bv(b.data(), static_cast<Eigen::Index>(b.size()));
      Mat next = h * W;
      next.rowwise() += bv;
      if (l + 1 < layers()) next = next.cwiseMax(0.0);
      h = std::move(next);
    }
    Tensor out(Shape{x.rows(), spec_.embedding_dim});
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
      double n = h.row(r).norm();
      for (Eigen::Index c = 0; c < h.cols(); ++c) {
        out.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = n > 0.0 ? h(r, c) / n : 0.0;
      }
    }
    return out;
  }

  /// Flat binary dump: a text header line, then the parameters as
  /// little-endian doubles in layer order (W then b).
  void save(const std::string& path, const std::string& spec_echo) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "epsfair-model 1 params=" << parameter_count() << " arch=" << spec_.describe() << " "
        << spec_echo << "\n";
    for (const Tensor& p : params_) {
      out.write(reinterpret_cast<const char*>(p.data()),
                static_cast<std::streamsize>(p.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed for " + path);
  }

  void load_values(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string header;
    std::getline(in, header);
    if (header.rfind("epsfair-model 1 params=" + std::to_string(parameter_count()) + " ", 0) != 0) {
      throw IoError(path + ": model header does not match this encoder");
    }
    for (Tensor& p : params_) {
      in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
    }
    if (!in) throw IoError(path + ": truncated model file");
  }

 private:
  EncoderSpec spec_;
  std::vector<Tensor> params_;
};

}  // namespace epsfair
