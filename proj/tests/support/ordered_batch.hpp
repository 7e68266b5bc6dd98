#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "epsfair/geometry.hpp"

namespace testutil {

/// Four-cluster layout: class direction weight 1, bias direction weight 0.4,
/// small jitter. For every anchor
/// d(+,aligned) < d(+,conflicting) < d(-,aligned) < d(-,conflicting).
inline epsfair::EmbeddingBatch ordered_batch(std::mt19937_64& rng, std::size_t per_cell,
                                             double jitter) {
  using epsfair::Shape;
  using epsfair::Tensor;
  epsfair::EmbeddingBatch batch;
  std::size_t n = 4 * per_cell;
  std::size_t d = 6;
  batch.embeddings = Tensor(Shape{n, d}, 0.0);
  batch.labels.resize(n);
  batch.bias_attrs = std::vector<int>(n);
  std::normal_distribution<double> noise(0.0, jitter);
  for (std::size_t i = 0; i < n; ++i) {
    int c = static_cast<int>(i % 2);
    int b = static_cast<int>((i / 2) % 2);
    batch.labels[i] = c;
    (*batch.bias_attrs)[i] = b;
    batch.embeddings.at(i, 0) = 1.0;
    batch.embeddings.at(i, 1) = c == 0 ? 1.0 : -1.0;
    batch.embeddings.at(i, 2) = b == 0 ? 0.4 : -0.4;
    for (std::size_t k = 3; k < d; ++k) batch.embeddings.at(i, k) = noise(rng);
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += batch.embeddings.at(i, k) * batch.embeddings.at(i, k);
    for (std::size_t k = 0; k < d; ++k) batch.embeddings.at(i, k) /= std::sqrt(s);
  }
  return batch;
}

}  // namespace testutil
