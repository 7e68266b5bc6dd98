#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "epsfair/ops.hpp"

namespace epsfair {

class DegenerateBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unit-norm embeddings of one batch plus the per-sample supervision.
///
/// Exactly one of `bias_attrs` (discrete attribute per sample) and
/// `bias_scores` (pairwise scores in [0, 1], continuous mode) is set.
struct EmbeddingBatch {
  Tensor embeddings;  // [B, d]
  std::vector<int> labels;
  std::optional<std::vector<int>> bias_attrs;
  std::optional<Tensor> bias_scores;  // [B, B]
  double temperature = 0.1;

  std::size_t size() const { return labels.size(); }

  void validate(double norm_tol = 1e-9) const {
    if (embeddings.rank() != 2) throw ShapeError("embeddings must be a matrix");
    std::size_t b = embeddings.rows();
    if (labels.size() != b) throw ShapeError("labels do not match batch size");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (bias_attrs.has_value() == bias_scores.has_value()) {
      throw std::invalid_argument("exactly one of bias_attrs / bias_scores must be set");
    }
    if (bias_attrs && bias_attrs->size() != b) throw ShapeError("bias_attrs do not match batch size");
    if (bias_scores && bias_scores->shape() != Shape{b, b}) {
      throw ShapeError("bias_scores must be [B, B]");
    }
    for (std::size_t r = 0; r < b; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < embeddings.cols(); ++c) s += embeddings.at(r, c) * embeddings.at(r, c);
      if (std::abs(std::sqrt(s) - 1.0) > norm_tol) {
        throw std::invalid_argument("embedding row " + std::to_string(r) + " is not unit norm");
      }
    }
  }
};

/// Index sets of one anchor. The anchor itself is never included.
struct AnchorGroups {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  // Split by bias attribute relative to the anchor; empty in continuous mode.
  std::vector<std::size_t> pos_aligned;
  std::vector<std::size_t> pos_conflicting;
  std::vector<std::size_t> neg_aligned;
  std::vector<std::size_t> neg_conflicting;
};

struct BatchPartition {
  std::vector<AnchorGroups> anchors;
  std::vector<std::size_t> degenerate;  // anchors with neither positives nor negatives
  bool discrete_bias = false;

  std::size_t size() const { return anchors.size(); }

  static BatchPartition build(const std::vector<int>& labels,
                              const std::optional<std::vector<int>>& bias_attrs) {
    std::size_t b = labels.size();
    if (b < 2) throw DegenerateBatchError("a batch needs at least two samples");
    if (bias_attrs && bias_attrs->size() != b) throw ShapeError("bias_attrs do not match labels");
    BatchPartition part;
    part.discrete_bias = bias_attrs.has_value();
    part.anchors.resize(b);
    for (std::size_t a = 0; a < b; ++a) {
      AnchorGroups& grp = part.anchors[a];
      for (std::size_t i = 0; i < b; ++i) {
        if (i == a) continue;
        bool pos = labels[i] == labels[a];
        (pos ? grp.positives : grp.negatives).push_back(i);
        if (bias_attrs) {
          bool aligned = (*bias_attrs)[i] == (*bias_attrs)[a];
          if (pos) {
            (aligned ? grp.pos_aligned : grp.pos_conflicting).push_back(i);
          } else {
            (aligned ? grp.neg_aligned : grp.neg_conflicting).push_back(i);
          }
        }
      }
      if (grp.positives.empty() && grp.negatives.empty()) part.degenerate.push_back(a);
    }
    return part;
  }
};

/// Temperature-scaled similarities, squared distances and per-anchor index
/// sets of a batch. sims[a][i] = <z_a, z_i> / tau; dists are temperature
/// free.
struct SimilarityView {
  Tensor sims;
  Tensor dists;
  BatchPartition partition;
  double temperature = 0.1;
  std::optional<Tensor> bias_scores;

  std::size_t size() const { return partition.size(); }
};

inline SimilarityView build_similarity_view(const EmbeddingBatch& batch) {
  batch.validate();
  SimilarityView view;
  view.partition = BatchPartition::build(batch.labels, batch.bias_attrs);
  view.temperature = batch.temperature;
  view.bias_scores = batch.bias_scores;
  const Tensor& z = batch.embeddings;
  std::size_t b = z.rows();
  std::size_t d = z.cols();
  view.sims = Tensor(Shape{b, b});
  view.dists = Tensor(Shape{b, b});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i; j < b; ++j) {
      double dot = 0.0;
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        dot += z.at(i, k) * z.at(j, k);
        double diff = z.at(i, k) - z.at(j, k);
        sq += diff * diff;
      }
      view.sims.at(i, j) = view.sims.at(j, i) = dot / batch.temperature;
      view.dists.at(i, j) = view.dists.at(j, i) = sq;
    }
  }
  return view;
}

/// Differentiable row normalization onto the unit sphere.
inline Var normalize_embeddings(Var raw) { return l2_normalize_rows(raw); }

/// Graph-side counterpart of SimilarityView: sims and dists are nodes, the
/// index sets are borrowed from a partition that must outlive the view.
struct GraphView {
  Var sims;
  Var dists;
  const BatchPartition* partition = nullptr;
  double temperature = 0.1;
  const Tensor* bias_scores = nullptr;

  std::size_t size() const { return partition->size(); }
  const AnchorGroups& anchor(std::size_t a) const { return partition->anchors[a]; }
};

/// Builds sims = Z Z^T / tau and pairwise squared distances from unit-norm
/// embeddings held in the graph.
inline GraphView graph_view(Var unit_embeddings, const BatchPartition& partition,
                            double temperature, const Tensor* bias_scores = nullptr) {
  detail::require_rank(unit_embeddings, 2, "graph_view");
  if (unit_embeddings.shape()[0] != partition.size()) {
    throw ShapeError("graph_view: embedding rows do not match partition size");
  }
  GraphView v;
  v.sims = scale(matmul(unit_embeddings, transpose(unit_embeddings)), 1.0 / temperature);
  v.dists = pairwise_sq_dists(unit_embeddings);
  v.partition = &partition;
  v.temperature = temperature;
  v.bias_scores = bias_scores;
  return v;
}

/// Wraps a numeric view as graph constants.
inline GraphView constant_view(Graph& g, const SimilarityView& view) {
  GraphView v;
  v.sims = g.constant(view.sims);
  v.dists = g.constant(view.dists);
  v.partition = &view.partition;
  v.temperature = view.temperature;
  v.bias_scores = view.bias_scores ? &*view.bias_scores : nullptr;
  return v;
}

}  // namespace epsfair
