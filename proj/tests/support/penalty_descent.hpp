#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "epsfair/fairkl.hpp"
#include "epsfair/optim.hpp"

namespace testutil {

struct DescentResult {
  std::size_t steps = 0;
  double initial_gap = 0.0;
  double final_gap = 0.0;
  double final_penalty = 0.0;
};

/// Largest |aligned mean - conflicting mean| over anchors and both sides.
inline double max_group_mean_gap(const epsfair::EmbeddingBatch& batch) {
  epsfair::SimilarityView view = epsfair::build_similarity_view(batch);
  double gap = 0.0;
  for (std::size_t a = 0; a < view.size(); ++a) {
    epsfair::GroupMoments m = epsfair::group_moments(view, a);
    if (m.pos_aligned && m.pos_conflicting) {
      gap = std::max(gap, std::abs(m.pos_aligned->mean - m.pos_conflicting->mean));
    }
    if (m.neg_aligned && m.neg_conflicting) {
      gap = std::max(gap, std::abs(m.neg_aligned->mean - m.neg_conflicting->mean));
    }
  }
  return gap;
}

/// Minimizes the penalty over free embedding coordinates (rows are
/// re-normalized in the graph) with Adam until every group-mean gap is
/// below `tol` or `max_steps` is spent.
inline DescentResult penalty_descent(const epsfair::EmbeddingBatch& start,
                                     const epsfair::RegularizerConfig& cfg, double lr,
                                     std::size_t max_steps, double tol) {
  using namespace epsfair;
  BatchPartition part = BatchPartition::build(start.labels, start.bias_attrs);
  OptimSpec spec;
  spec.weight_decay = 0.0;
  spec.step_decay = false;
  spec.lr = lr;
  std::vector<Tensor> params{start.embeddings};
  Optimizer opt(spec, params);
  EmbeddingBatch cur = start;
  DescentResult res;
  res.initial_gap = max_group_mean_gap(start);
  for (std::size_t step = 0;; ++step) {
    Graph g;
    Var x = g.parameter(params[0]);
    Var z = normalize_embeddings(x);
    Var pen = fairkl_penalty(graph_view(z, part, start.temperature), cfg).value;
    cur.embeddings = z.value();
    res.steps = step;
    res.final_penalty = pen.item();
    res.final_gap = max_group_mean_gap(cur);
    if (res.final_gap < tol || step == max_steps) break;
    g.backward(pen);
    std::vector<Tensor> grads{g.grad(x)};
    opt.step(params, grads, lr);
  }
  return res;
}

}  // namespace testutil
