#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "epsfair/tensor.hpp"

namespace epsfair {

enum class OptimAlgorithm { kSgdMomentum, kAdam };

inline std::string_view to_string(OptimAlgorithm a) {
  return a == OptimAlgorithm::kAdam ? "adam" : "sgd_momentum";
}

inline OptimAlgorithm parse_optim_algorithm(std::string_view s) {
  if (s == "adam") return OptimAlgorithm::kAdam;
  if (s == "sgd_momentum") return OptimAlgorithm::kSgdMomentum;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

struct OptimSpec {
  OptimAlgorithm algorithm = OptimAlgorithm::kAdam;
  double lr = 0.001;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  bool step_decay = true;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("optim: lr must be > 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("optim: weight_decay must be >= 0");
    if (batch_size < 4) throw std::invalid_argument("optim: batch_size must be >= 4");
    if (epochs == 0) throw std::invalid_argument("optim: epochs must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("optim: betas must be in [0, 1)");
    }
  }

  /// Learning rate for 0-based `epoch`: x0.1 at epochs/3 and again at
  /// 2*epochs/3.
  double lr_at(std::size_t epoch) const {
    if (!step_decay) return lr;
    double r = lr;
    if (epoch >= epochs / 3 && epochs >= 3) r *= 0.1;
    if (epoch >= 2 * epochs / 3 && epochs >= 3) r *= 0.1;
    return r;
  }
};

/// Adam (L2 weight decay added to the gradient) or SGD with momentum.
class Optimizer {
 public:
  Optimizer(const OptimSpec& spec, const std::vector<Tensor>& params) : spec_(spec) {
    spec.validate();
    for (const Tensor& p : params) {
      m_.emplace_back(p.shape(), 0.0);
      v_.emplace_back(p.shape(), 0.0);
    }
  }

  std::size_t steps() const { return t_; }

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw ShapeError("optimizer: parameter count changed");
    }
    ++t_;
    double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = params[k];
      const Tensor& g = grads[k];
      if (g.shape() != p.shape()) throw ShapeError("optimizer: gradient shape mismatch");
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        double gi = g[i] + spec_.weight_decay * p[i];
        if (spec_.algorithm == OptimAlgorithm::kAdam) {
          m[i] = spec_.beta1 * m[i] + (1.0 - spec_.beta1) * gi;
          v[i] = spec_.beta2 * v[i] + (1.0 - spec_.beta2) * gi * gi;
          double mh = m[i] / bc1;
          double vh = v[i] / bc2;
          p[i] -= lr * mh / (std::sqrt(vh) + spec_.adam_eps);
        } else {
          m[i] = spec_.momentum * m[i] + gi;
          p[i] -= lr * m[i];
        }
      }
    }
  }

 private:
  OptimSpec spec_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

}  // namespace epsfair
