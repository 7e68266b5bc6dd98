#pragma once

// Margin-based contrastive losses.
//
// Every loss is a function of temperature-scaled similarities only. For one
// anchor with positive similarities p (size P) and negative similarities n
// (size N):
//
//   eps-InfoNCE        -log( e^{p} / (e^{p - eps} + sum_j e^{n_j}) )
//   eps-SupInfoNCE (c) sum_i of the above with p = p_i
//   eps-SupCon         -(1/P) sum_i log( e^{p_i} / (sum_t e^{p_t - eps} + sum_j e^{n_j}) )
//   L_sup_in           -log( sum_i e^{p_i} / (sum_t e^{p_t} + sum_j e^{n_j}) )
//
// Variants a, b and d are the other multiple-positive extensions. Batch
// losses average the per-anchor values over anchors that have at least one
// positive and one negative; other anchors are skipped and counted.
//
// The max_form namespace holds the smooth-max (LogSumExp) reading of each
// margin constraint set, evaluated directly from the constraint list. It is
// the independent route the identity oracles compare against.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "epsfair/geometry.hpp"
#include "epsfair/log.hpp"
#include "epsfair/ops.hpp"

namespace epsfair {

enum class LossVariant {
  kEpsInfoNce,
  kEpsSupInfoNceA,
  kEpsSupInfoNceB,
  kEpsSupInfoNceC,
  kEpsSupInfoNceD,
  kEpsSupCon,
  kLSupIn,
};

inline std::string_view to_string(LossVariant v) {
  switch (v) {
    case LossVariant::kEpsInfoNce: return "eps_infonce";
    case LossVariant::kEpsSupInfoNceA: return "eps_supinfonce_a";
    case LossVariant::kEpsSupInfoNceB: return "eps_supinfonce_b";
    case LossVariant::kEpsSupInfoNceC: return "eps_supinfonce_c";
    case LossVariant::kEpsSupInfoNceD: return "eps_supinfonce_d";
    case LossVariant::kEpsSupCon: return "eps_supcon";
    case LossVariant::kLSupIn: return "l_sup_in";
  }
  return "?";
}

inline LossVariant parse_loss_variant(std::string_view s) {
  for (auto v : {LossVariant::kEpsInfoNce, LossVariant::kEpsSupInfoNceA,
                 LossVariant::kEpsSupInfoNceB, LossVariant::kEpsSupInfoNceC,
                 LossVariant::kEpsSupInfoNceD, LossVariant::kEpsSupCon, LossVariant::kLSupIn}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown loss variant '" + std::string(s) + "'");
}

/// Which multiple-positive extension of eps-InfoNCE to use.
enum class SupInfoNceForm { kA, kB, kC, kD };

struct LossConfig {
  LossVariant variant = LossVariant::kEpsSupInfoNceC;
  double epsilon = 0.0;
  double temperature = 0.1;

  /// On the unit sphere similarities span at most 2/tau, so larger margins
  /// can never be met.
  bool margin_exceeds_bound() const { return epsilon > 2.0 / temperature; }

  void validate() const {
    if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
    if (margin_exceeds_bound()) {
      logging::warn("epsilon " + std::to_string(epsilon) + " exceeds the 2/tau bound " +
                std::to_string(2.0 / temperature));
    }
  }
};

struct LossOutput {
  Var value;
  std::size_t skipped_anchors = 0;
  std::size_t used_anchors = 0;
};

// ---------------------------------------------------------------------------
// Scalar helpers

/// Stable log(sum exp(x)) with an optional extra term folded into the sum.
inline double log_sum_exp(std::span<const double> x,
                          double extra = -std::numeric_limits<double>::infinity()) {
  double mx = extra;
  for (double v : x) mx = std::max(mx, v);
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  double s = std::exp(extra - mx);
  for (double v : x) s += std::exp(v - mx);
  return mx + std::log(s);
}

inline double log_add_exp(double a, double b) {
  double mx = std::max(a, b);
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

/// Single-positive eps-InfoNCE on plain numbers.
inline double eps_infonce(double s_pos, std::span<const double> s_negs, double epsilon) {
  if (s_negs.empty()) throw std::invalid_argument("eps_infonce needs at least one negative");
  return log_add_exp(s_pos - epsilon, log_sum_exp(s_negs)) - s_pos;
}

/// The InfoNCE and InfoL1O log-ratio estimates for one positive.
struct EstimatorPair {
  double infonce = 0.0;  // log e^{s+} / (e^{s+} + sum e^{s-})
  double infol1o = 0.0;  // log e^{s+} / sum e^{s-}
};

inline EstimatorPair estimator_ordering_check(double s_pos, std::span<const double> s_negs) {
  if (s_negs.empty()) throw std::invalid_argument("estimator_ordering_check needs negatives");
  double lse_neg = log_sum_exp(s_negs);
  return {s_pos - log_add_exp(s_pos, lse_neg), s_pos - lse_neg};
}

// ---------------------------------------------------------------------------
// Per-anchor graph kernels. `pos` is [P], `neg` is [N].

namespace anchor {

inline Var zeros(Graph& g, std::size_t n) { return g.constant(Tensor(Shape{n}, 0.0)); }

/// Vector of eps-InfoNCE terms, one per positive.
inline Var infonce_terms(Var pos, Var neg, double epsilon) {
  std::size_t p = pos.shape()[0];
  Var lse_neg = logsumexp(neg);
  Var shifted = reshape(pos - epsilon, Shape{p, 1});
  return logsumexp_rows(shifted, lse_neg) - pos;
}

/// log sum_i exp(sum_{t != i} p_t), computed as sum(p) + lse(-p).
inline Var leave_one_out_lse(Var pos, Var pos_sum) { return pos_sum + logsumexp(-pos); }

inline Var supinfonce_a(Var pos, Var neg, double epsilon) {
  Var ps = sum(pos);
  Var rest = logsumexp(neg) + leave_one_out_lse(pos, ps);
  Var num_term = reshape(ps - epsilon, Shape{1});
  return logsumexp_rows(num_term, rest) - ps;
}

inline Var supinfonce_b(Var pos, Var neg, double epsilon) {
  std::size_t n = neg.shape()[0];
  Var ps = sum(pos);
  Var loo = leave_one_out_lse(pos, ps);
  Var per_neg = reshape(neg + loo, Shape{n, 1});
  Var denom = logsumexp_rows(per_neg, ps - epsilon);
  return sum(denom) - scale(ps, static_cast<double>(n));
}

inline Var supinfonce_c(Var pos, Var neg, double epsilon) {
  return sum(infonce_terms(pos, neg, epsilon));
}

inline Var supinfonce_d(Var pos, Var neg, double epsilon) {
  Graph& g = pos.graph();
  std::size_t p = pos.shape()[0];
  std::size_t n = neg.shape()[0];
  // [P, N] grids holding n_j and p_i - eps for every (i, j) pair.
  Var neg_grid = reshape(outer_diff(neg, zeros(g, p)), Shape{p * n, 1});
  Var pos_grid = reshape(outer_diff(zeros(g, n), -(pos - epsilon)), Shape{p * n});
  Var denom = logsumexp_rows(neg_grid, pos_grid);
  return sum(denom) - scale(sum(pos), static_cast<double>(n));
}

inline Var supcon(Var pos, Var neg, double epsilon) {
  Var denom = logsumexp(concat(pos - epsilon, neg));
  return denom - mean(pos);
}

inline Var sup_in(Var pos, Var neg) { return logsumexp(concat(pos, neg)) - logsumexp(pos); }

/// eps-InfoNCE averaged over the anchor's positives.
inline Var infonce_mean(Var pos, Var neg, double epsilon) {
  return mean(infonce_terms(pos, neg, epsilon));
}

inline Var evaluate(LossVariant variant, Var pos, Var neg, double epsilon) {
  switch (variant) {
    case LossVariant::kEpsInfoNce: return infonce_mean(pos, neg, epsilon);
    case LossVariant::kEpsSupInfoNceA: return supinfonce_a(pos, neg, epsilon);
    case LossVariant::kEpsSupInfoNceB: return supinfonce_b(pos, neg, epsilon);
    case LossVariant::kEpsSupInfoNceC: return supinfonce_c(pos, neg, epsilon);
    case LossVariant::kEpsSupInfoNceD: return supinfonce_d(pos, neg, epsilon);
    case LossVariant::kEpsSupCon: return supcon(pos, neg, epsilon);
    case LossVariant::kLSupIn: return sup_in(pos, neg);
  }
  throw std::logic_error("unhandled loss variant");
}

}  // namespace anchor

/// Differentiable single-positive eps-InfoNCE; s_pos is a scalar node and
/// s_negs a vector node.
inline Var eps_infonce(Var s_pos, Var s_negs, double epsilon) {
  return sum(anchor::infonce_terms(reshape(s_pos, Shape{1}), s_negs, epsilon));
}

// ---------------------------------------------------------------------------
// Batch losses

/// Mean over usable anchors of the selected per-anchor loss.
inline LossOutput contrastive_loss(const GraphView& view, LossVariant variant, double epsilon) {
  std::vector<Var> per_anchor;
  per_anchor.reserve(view.size());
  LossOutput out;
  for (std::size_t a = 0; a < view.size(); ++a) {
    const AnchorGroups& grp = view.anchor(a);
    if (grp.positives.empty() || grp.negatives.empty()) {
      ++out.skipped_anchors;
      continue;
    }
    Var pos = gather_entries(view.sims, a, grp.positives);
    Var neg = gather_entries(view.sims, a, grp.negatives);
    per_anchor.push_back(anchor::evaluate(variant, pos, neg, epsilon));
  }
  if (per_anchor.empty()) {
    throw DegenerateBatchError("every anchor lacks a positive or a negative");
  }
  if (out.skipped_anchors > 0) {
    logging::debug("skipped " + std::to_string(out.skipped_anchors) + " anchors");
  }
  out.used_anchors = per_anchor.size();
  out.value = mean(stack(per_anchor));
  return out;
}

inline LossOutput contrastive_loss(const GraphView& view, const LossConfig& cfg) {
  return contrastive_loss(view, cfg.variant, cfg.epsilon);
}

inline LossVariant variant_of(SupInfoNceForm form) {
  switch (form) {
    case SupInfoNceForm::kA: return LossVariant::kEpsSupInfoNceA;
    case SupInfoNceForm::kB: return LossVariant::kEpsSupInfoNceB;
    case SupInfoNceForm::kC: return LossVariant::kEpsSupInfoNceC;
    case SupInfoNceForm::kD: return LossVariant::kEpsSupInfoNceD;
  }
  return LossVariant::kEpsSupInfoNceC;
}

inline LossOutput eps_supinfonce(const GraphView& view, double epsilon,
                                 SupInfoNceForm form = SupInfoNceForm::kC) {
  return contrastive_loss(view, variant_of(form), epsilon);
}

inline LossOutput eps_supcon(const GraphView& view, double epsilon) {
  return contrastive_loss(view, LossVariant::kEpsSupCon, epsilon);
}

inline LossOutput l_sup_in(const GraphView& view) {
  return contrastive_loss(view, LossVariant::kLSupIn, 0.0);
}

/// Numeric evaluation on a precomputed view.
inline double contrastive_loss_value(const SimilarityView& view, LossVariant variant,
                                     double epsilon) {
  Graph g;
  GraphView gv = constant_view(g, view);
  return contrastive_loss(gv, variant, epsilon).value.item();
}

inline double eps_supinfonce(const SimilarityView& view, double epsilon,
                             SupInfoNceForm form = SupInfoNceForm::kC) {
  return contrastive_loss_value(view, variant_of(form), epsilon);
}

inline double eps_supcon(const SimilarityView& view, double epsilon) {
  return contrastive_loss_value(view, LossVariant::kEpsSupCon, epsilon);
}

inline double l_sup_in(const SimilarityView& view) {
  return contrastive_loss_value(view, LossVariant::kLSupIn, 0.0);
}

// ---------------------------------------------------------------------------
// Smooth-max forms of the constraint sets, evaluated from explicit lists.

namespace max_form {

/// LSE over {-eps} U {n_j - p}.
inline double eps_infonce(double pos, std::span<const double> neg, double epsilon) {
  std::vector<double> terms{-epsilon};
  for (double n : neg) terms.push_back(n - pos);
  return log_sum_exp(terms);
}

/// Variant a: one LSE over {-eps} U {n_j - p_i : all i, j}.
inline double supinfonce_a(std::span<const double> pos, std::span<const double> neg,
                           double epsilon) {
  std::vector<double> terms{-epsilon};
  for (double p : pos) {
    for (double n : neg) terms.push_back(n - p);
  }
  return log_sum_exp(terms);
}

/// Variant b: sum over j of LSE over {-eps} U {n_j - p_i : all i}.
inline double supinfonce_b(std::span<const double> pos, std::span<const double> neg,
                           double epsilon) {
  double total = 0.0;
  for (double n : neg) {
    std::vector<double> terms{-epsilon};
    for (double p : pos) terms.push_back(n - p);
    total += log_sum_exp(terms);
  }
  return total;
}

/// Variant c: sum over i of LSE over {-eps} U {n_j - p_i : all j}.
inline double supinfonce_c(std::span<const double> pos, std::span<const double> neg,
                           double epsilon) {
  double total = 0.0;
  for (double p : pos) total += eps_infonce(p, neg, epsilon);
  return total;
}

/// Variant d: sum over (i, j) of LSE over {-eps, n_j - p_i}.
inline double supinfonce_d(std::span<const double> pos, std::span<const double> neg,
                           double epsilon) {
  double total = 0.0;
  for (double p : pos) {
    for (double n : neg) {
      double pair[] = {-epsilon, n - p};
      total += log_sum_exp(pair);
    }
  }
  return total;
}

/// (1/P) sum_i LSE over {0} U {n_j - p_i + eps} U {p_t - p_i : t != i}.
/// Equals eps + eps-SupCon.
inline double supcon(std::span<const double> pos, std::span<const double> neg, double epsilon) {
  double total = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    std::vector<double> terms{0.0};
    for (double n : neg) terms.push_back(n - pos[i] + epsilon);
    for (std::size_t t = 0; t < pos.size(); ++t) {
      if (t != i) terms.push_back(pos[t] - pos[i]);
    }
    total += log_sum_exp(terms);
  }
  return total / static_cast<double>(pos.size());
}

/// LSE over {0, LSE(n) - LSE(p)}: the smoothed max(0, max n - max p).
inline double sup_in(std::span<const double> pos, std::span<const double> neg) {
  double pair[] = {0.0, log_sum_exp(neg) - log_sum_exp(pos)};
  return log_sum_exp(pair);
}

}  // namespace max_form

}  // namespace epsfair
