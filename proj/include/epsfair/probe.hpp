#pragma once

// Linear evaluation: multinomial logistic regression with a bias term,
// trained by full-batch gradient descent on frozen features.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "epsfair/datagen.hpp"
#include "epsfair/log.hpp"

namespace epsfair {

struct ProbeSpec {
  std::size_t max_epochs = 1000;
  double grad_tol = 1e-5;
};

struct ProbeResult {
  double acc_overall = 0.0;
  double acc_aligned = 0.0;
  double acc_conflicting = 0.0;
  double acc_train = 0.0;
  std::size_t test_aligned = 0;
  std::size_t test_conflicting = 0;
  std::size_t epochs_run = 0;
  double final_grad_norm = 0.0;
  bool degenerate = false;
};

class LinearProbe {
 public:
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  LinearProbe(std::size_t dim, int classes) : w_(Mat::Zero(static_cast<Eigen::Index>(dim) + 1, classes)) {}

  /// Gradient descent with step 1/L, L = 0.5 * lambda_max(X^T X) / n for
  /// the bias-augmented design X.
  void fit(const Tensor& x, const std::vector<int>& labels, const ProbeSpec& spec) {
    Mat xa = augmented(x);
    auto n = static_cast<double>(xa.rows());
    Mat y = Mat::Zero(xa.rows(), w_.cols());
    for (Eigen::Index i = 0; i < xa.rows(); ++i) y(i, labels[static_cast<std::size_t>(i)]) = 1.0;
    double lipschitz = 0.5 * top_eigenvalue(xa) / n;
    double step = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;
    epochs_run_ = 0;
    grad_norm_ = 0.0;
    for (std::size_t e = 0; e < spec.max_epochs; ++e) {
      Mat p = softmax(xa * w_);
      Mat grad = xa.transpose() * (p - y) / n;
      grad_norm_ = grad.norm();
      epochs_run_ = e + 1;
      if (grad_norm_ < spec.grad_tol) break;
      w_ -= step * grad;
    }
  }

  std::vector<int> predict(const Tensor& x) const {
    Mat s = augmented(x) * w_;
    std::vector<int> out(static_cast<std::size_t>(s.rows()));
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      Eigen::Index arg = 0;
      s.row(i).maxCoeff(&arg);
      out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
  }

  std::size_t epochs_run() const { return epochs_run_; }
  double grad_norm() const { return grad_norm_; }

 private:
  static Mat augmented(const Tensor& x) {
    Mat xa(static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(x.cols()) + 1);
    xa.leftCols(static_cast<Eigen::Index>(x.cols())) =
        Eigen::Map<const Mat>(x.data(), static_cast<Eigen::Index>(x.rows()),
                              static_cast<Eigen::Index>(x.cols()));
    xa.col(xa.cols() - 1).setOnes();
    return xa;
  }

  static Mat softmax(Mat s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    return s;
  }

  static double top_eigenvalue(const Mat& x) {
    Eigen::MatrixXd gram = x.transpose() * x;
    Eigen::VectorXd v = Eigen::VectorXd::Ones(gram.rows()).normalized();
    double lambda = 0.0;
    for (int it = 0; it < 100; ++it) {
      Eigen::VectorXd next = gram * v;
      double norm = next.norm();
      if (norm == 0.0) return 0.0;
      next /= norm;
      if (std::abs(norm - lambda) <= 1e-10 * norm) {
        lambda = norm;
        break;
      }
      lambda = norm;
      v = next;
    }
    // small safety margin against power-iteration underestimation
    return lambda * 1.01;
  }

  Mat w_;
  std::size_t epochs_run_ = 0;
  double grad_norm_ = 0.0;
};

inline bool all_rows_identical(const Tensor& x) {
  for (std::size_t r = 1; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (x.at(r, c) != x.at(0, c)) return false;
    }
  }
  return true;
}

/// Fits on (train_x, train labels) and reports test accuracies split by the
/// test samples' aligned flags.
inline ProbeResult linear_probe(const Tensor& train_x, const Dataset& train, const Tensor& test_x,
                                const Dataset& test, const ProbeSpec& spec = {}) {
  if (train_x.rows() != train.size() || test_x.rows() != test.size()) {
    throw ShapeError("linear_probe: feature rows do not match datasets");
  }
  ProbeResult res;
  res.degenerate = all_rows_identical(train_x);
  if (res.degenerate) logging::warn("linear probe: all training embeddings are identical");
  LinearProbe probe(train_x.cols(), std::max(train.n_classes, test.n_classes));
  probe.fit(train_x, train.labels, spec);
  res.epochs_run = probe.epochs_run();
  res.final_grad_norm = probe.grad_norm();
  std::vector<int> tr = probe.predict(train_x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) hit += tr[i] == train.labels[i];
  res.acc_train = static_cast<double>(hit) / static_cast<double>(tr.size());
  std::vector<int> te = probe.predict(test_x);
  std::size_t hit_a = 0, hit_c = 0;
  for (std::size_t i = 0; i < te.size(); ++i) {
    bool ok = te[i] == test.labels[i];
    if (test.aligned[i]) {
      ++res.test_aligned;
      hit_a += ok;
    } else {
      ++res.test_conflicting;
      hit_c += ok;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  res.acc_aligned = ratio(hit_a, res.test_aligned);
  res.acc_conflicting = ratio(hit_c, res.test_conflicting);
  res.acc_overall = ratio(hit_a + hit_c, te.size());
  return res;
}

}  // namespace epsfair
