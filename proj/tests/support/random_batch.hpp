#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "epsfair/geometry.hpp"

namespace testutil {

inline epsfair::Tensor random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                     double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  epsfair::Tensor t(epsfair::Shape{rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

inline epsfair::Tensor random_unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  epsfair::Tensor t = random_matrix(rng, rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += t.at(r, c) * t.at(r, c);
    s = std::sqrt(s);
    for (std::size_t c = 0; c < cols; ++c) t.at(r, c) /= s;
  }
  return t;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo,
                                         double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

/// Labels cycling over `classes` so every anchor has positives and
/// negatives once b >= 2 * classes.
inline std::vector<int> cyclic_labels(std::size_t b, int classes) {
  std::vector<int> l(b);
  for (std::size_t i = 0; i < b; ++i) l[i] = static_cast<int>(i % classes);
  return l;
}

inline std::vector<int> random_ints(std::mt19937_64& rng, std::size_t n, int k) {
  std::uniform_int_distribution<int> u(0, k - 1);
  std::vector<int> v(n);
  for (int& x : v) x = u(rng);
  return v;
}

inline epsfair::EmbeddingBatch random_batch(std::mt19937_64& rng, std::size_t b, std::size_t d,
                                            int classes, int bias_values) {
  epsfair::EmbeddingBatch batch;
  batch.embeddings = random_unit_rows(rng, b, d);
  batch.labels = cyclic_labels(b, classes);
  batch.bias_attrs = random_ints(rng, b, bias_values);
  return batch;
}

inline epsfair::Tensor random_scores(std::mt19937_64& rng, std::size_t b) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  epsfair::Tensor s(epsfair::Shape{b, b});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i; j < b; ++j) s.at(i, j) = s.at(j, i) = (i == j ? 1.0 : u(rng));
  }
  return s;
}

}  // namespace testutil
