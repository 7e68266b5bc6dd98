#pragma once

// FairKL: per-anchor constraints that make the distance distribution of
// bias-aligned samples match that of bias-conflicting samples, separately
// for positives and negatives.
//
// For an anchor a, its positives split into aligned (same bias attribute as
// a) and conflicting groups; likewise its negatives. Each group's squared
// distances to a are summarized by mean and unbiased variance. Penalty kinds:
//
//   mean_only   (mu_{+,b} - mu_{+,b'})^2 + (mu_{-,b} - mu_{-,b'})^2
//   kl          KL(N_{+,b} || N_{+,b'}) + KL(N_{-,b} || N_{-,b'})
//   jeffreys    the kl kind plus both reversed divergences
//   end_linear  (mu_{+,b'} - mu_{+,b}) + (mu_{-,b'} - mu_{-,b})
//
// The batch penalty is the mean over anchors that contribute at least one
// term.

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "epsfair/geometry.hpp"
#include "epsfair/log.hpp"
#include "epsfair/losses.hpp"
#include "epsfair/ops.hpp"

namespace epsfair {

enum class RegularizerKind { kMeanOnly, kKl, kJeffreys, kEndLinear };
enum class DegeneracyFallback { kSkipAnchor, kMeanOnly };
enum class BiasMode { kDiscrete, kContinuous };

inline std::string_view to_string(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::kMeanOnly: return "mean_only";
    case RegularizerKind::kKl: return "kl";
    case RegularizerKind::kJeffreys: return "jeffreys";
    case RegularizerKind::kEndLinear: return "end_linear";
  }
  return "?";
}

inline std::string_view to_string(DegeneracyFallback f) {
  return f == DegeneracyFallback::kSkipAnchor ? "skip_anchor" : "mean_only";
}

inline std::string_view to_string(BiasMode m) {
  return m == BiasMode::kDiscrete ? "discrete" : "continuous";
}

inline RegularizerKind parse_regularizer_kind(std::string_view s) {
  for (auto k : {RegularizerKind::kMeanOnly, RegularizerKind::kKl, RegularizerKind::kJeffreys,
                 RegularizerKind::kEndLinear}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown regularizer kind '" + std::string(s) + "'");
}

inline DegeneracyFallback parse_fallback(std::string_view s) {
  if (s == "skip_anchor") return DegeneracyFallback::kSkipAnchor;
  if (s == "mean_only") return DegeneracyFallback::kMeanOnly;
  throw std::invalid_argument("unknown fallback '" + std::string(s) + "'");
}

inline BiasMode parse_bias_mode(std::string_view s) {
  if (s == "discrete") return BiasMode::kDiscrete;
  if (s == "continuous") return BiasMode::kContinuous;
  throw std::invalid_argument("unknown bias mode '" + std::string(s) + "'");
}

struct RegularizerConfig {
  RegularizerKind kind = RegularizerKind::kKl;
  double variance_floor = 1e-6;
  DegeneracyFallback fallback = DegeneracyFallback::kMeanOnly;
  BiasMode bias_mode = BiasMode::kDiscrete;

  void validate() const {
    if (!(variance_floor > 0.0)) throw std::invalid_argument("variance_floor must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Moments

/// Mean and (when defined) unbiased variance of one group's squared
/// distances. `count` is the member count, or the effective sample size in
/// continuous mode.
struct Moment {
  double mean = 0.0;
  std::optional<double> variance;
  double count = 0.0;
};

/// Moments of an anchor's four groups; a group with no members is absent.
struct GroupMoments {
  std::optional<Moment> pos_aligned;
  std::optional<Moment> pos_conflicting;
  std::optional<Moment> neg_aligned;
  std::optional<Moment> neg_conflicting;
};

namespace detail {

inline std::optional<Moment> plain_moment(const Tensor& dists, std::size_t a,
                                          const std::vector<std::size_t>& idx) {
  if (idx.empty()) return std::nullopt;
  Moment m;
  m.count = static_cast<double>(idx.size());
  double s = 0.0;
  for (std::size_t i : idx) s += dists.at(a, i);
  m.mean = s / m.count;
  if (idx.size() >= 2) {
    double ss = 0.0;
    for (std::size_t i : idx) {
      double dv = dists.at(a, i) - m.mean;
      ss += dv * dv;
    }
    m.variance = ss / (m.count - 1.0);
  }
  return m;
}

/// Weighted moment with the mean normalized by the group's member count
/// `norm` and a reliability-weighted unbiased variance.
inline std::optional<Moment> weighted_moment(const Tensor& dists, std::size_t a,
                                             const std::vector<std::size_t>& idx,
                                             const std::vector<double>& w) {
  if (idx.empty()) return std::nullopt;
  double v1 = 0.0;
  double v2 = 0.0;
  double wd = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    v1 += w[k];
    v2 += w[k] * w[k];
    wd += w[k] * dists.at(a, idx[k]);
  }
  if (!(v1 > 0.0)) return std::nullopt;
  Moment m;
  m.mean = wd / static_cast<double>(idx.size());
  m.count = v1 * v1 / v2;
  double denom = v1 - v2 / v1;
  if (denom > 1e-12) {
    double centre = wd / v1;
    double ss = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      double dv = dists.at(a, idx[k]) - centre;
      ss += w[k] * dv * dv;
    }
    m.variance = ss / denom;
  }
  return m;
}

inline void check_scores(const Tensor& scores, std::size_t b) {
  if (scores.shape() != Shape{b, b}) throw ShapeError("bias scores must be [B, B]");
  for (double v : scores.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("bias score " + std::to_string(v) + " outside [0, 1]");
    }
  }
}

}  // namespace detail

/// Discrete-mode moments of anchor `a`.
inline GroupMoments group_moments(const SimilarityView& view, std::size_t a) {
  if (!view.partition.discrete_bias) {
    throw std::invalid_argument("group_moments needs discrete bias attributes");
  }
  const AnchorGroups& grp = view.partition.anchors.at(a);
  return {detail::plain_moment(view.dists, a, grp.pos_aligned),
          detail::plain_moment(view.dists, a, grp.pos_conflicting),
          detail::plain_moment(view.dists, a, grp.neg_aligned),
          detail::plain_moment(view.dists, a, grp.neg_conflicting)};
}

/// Continuous-mode moments of anchor `a`. Aligned weights are
/// scores[a][i], conflicting weights 1 - scores[a][i]; means are divided by
/// the anchor's positive (resp. negative) count.
inline GroupMoments weighted_moments(const SimilarityView& view, const Tensor& scores,
                                     std::size_t a) {
  detail::check_scores(scores, view.size());
  const AnchorGroups& grp = view.partition.anchors.at(a);
  auto weights = [&](const std::vector<std::size_t>& idx, bool aligned) {
    std::vector<double> w(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      double s = scores.at(a, idx[k]);
      w[k] = aligned ? s : 1.0 - s;
    }
    return w;
  };
  return {detail::weighted_moment(view.dists, a, grp.positives, weights(grp.positives, true)),
          detail::weighted_moment(view.dists, a, grp.positives, weights(grp.positives, false)),
          detail::weighted_moment(view.dists, a, grp.negatives, weights(grp.negatives, true)),
          detail::weighted_moment(view.dists, a, grp.negatives, weights(grp.negatives, false))};
}

// ---------------------------------------------------------------------------
// Gaussian KL

/// KL(N(mu_p, var_p) || N(mu_q, var_q)); both variances are raised to
/// `variance_floor` first.
inline double gaussian_kl(double mu_p, double var_p, double mu_q, double var_q,
                          double variance_floor = 1e-6) {
  var_p = std::max(var_p, variance_floor);
  var_q = std::max(var_q, variance_floor);
  double dm = mu_p - mu_q;
  return 0.5 * ((var_p + dm * dm) / var_q - std::log(var_p / var_q) - 1.0);
}

inline double jeffreys(double mu_p, double var_p, double mu_q, double var_q,
                       double variance_floor = 1e-6) {
  return gaussian_kl(mu_p, var_p, mu_q, var_q, variance_floor) +
         gaussian_kl(mu_q, var_q, mu_p, var_p, variance_floor);
}

/// Graph version of gaussian_kl on scalar nodes.
inline Var gaussian_kl(Var mu_p, Var var_p, Var mu_q, Var var_q, double variance_floor) {
  Var vp = clamp_min(var_p, variance_floor);
  Var vq = clamp_min(var_q, variance_floor);
  Var dm = mu_p - mu_q;
  return 0.5 * ((vp + dm * dm) / vq - log(vp / vq) - 1.0);
}

// ---------------------------------------------------------------------------
// Penalty

using KlFn = double (*)(double, double, double, double, double);

namespace detail {

/// Per-side term from two moments (numeric route). Returns nullopt when the
/// side cannot be evaluated; sets `skip` when the fallback drops the anchor.
inline std::optional<double> side_term(const std::optional<Moment>& aligned,
                                       const std::optional<Moment>& conflicting,
                                       const RegularizerConfig& cfg, KlFn kl, bool& skip) {
  if (!aligned || !conflicting) return std::nullopt;
  double gap = aligned->mean - conflicting->mean;
  switch (cfg.kind) {
    case RegularizerKind::kMeanOnly: return gap * gap;
    case RegularizerKind::kEndLinear: return conflicting->mean - aligned->mean;
    case RegularizerKind::kKl:
    case RegularizerKind::kJeffreys: {
      if (!aligned->variance || !conflicting->variance) {
        if (cfg.fallback == DegeneracyFallback::kSkipAnchor) {
          skip = true;
          return std::nullopt;
        }
        return gap * gap;
      }
      double fwd = kl(aligned->mean, *aligned->variance, conflicting->mean,
                      *conflicting->variance, cfg.variance_floor);
      if (cfg.kind == RegularizerKind::kKl) return fwd;
      return fwd + kl(conflicting->mean, *conflicting->variance, aligned->mean,
                      *aligned->variance, cfg.variance_floor);
    }
  }
  return std::nullopt;
}

}  // namespace detail

struct PenaltyValue {
  double value = 0.0;
  std::size_t contributing_anchors = 0;
};

/// Numeric FairKL penalty computed from group moments; the independent
/// counterpart of the graph version below.
inline PenaltyValue fairkl_penalty_value(const SimilarityView& view, const RegularizerConfig& cfg,
                                         KlFn kl = &gaussian_kl) {
  cfg.validate();
  bool continuous = cfg.bias_mode == BiasMode::kContinuous;
  if (continuous && !view.bias_scores) {
    throw std::invalid_argument("continuous bias mode needs bias scores");
  }
  PenaltyValue out;
  double total = 0.0;
  for (std::size_t a = 0; a < view.size(); ++a) {
    GroupMoments m = continuous ? weighted_moments(view, *view.bias_scores, a) : group_moments(view, a);
    bool skip = false;
    auto pos = detail::side_term(m.pos_aligned, m.pos_conflicting, cfg, kl, skip);
    auto neg = detail::side_term(m.neg_aligned, m.neg_conflicting, cfg, kl, skip);
    if (skip || (!pos && !neg)) continue;
    total += pos.value_or(0.0) + neg.value_or(0.0);
    ++out.contributing_anchors;
  }
  if (out.contributing_anchors > 0) out.value = total / static_cast<double>(out.contributing_anchors);
  return out;
}

inline double fairkl_penalty(const SimilarityView& view, const RegularizerConfig& cfg) {
  return fairkl_penalty_value(view, cfg).value;
}

struct PenaltyOutput {
  Var value;
  std::size_t contributing_anchors = 0;
};

namespace detail {

struct GraphMoment {
  Var mean;
  std::optional<Var> variance;
};

inline std::optional<GraphMoment> graph_plain_moment(Var dists, std::size_t a,
                                                     const std::vector<std::size_t>& idx) {
  if (idx.empty()) return std::nullopt;
  Var d = gather_entries(dists, a, idx);
  GraphMoment m{mean(d), std::nullopt};
  if (idx.size() >= 2) {
    Var dev = d - m.mean;
    m.variance = scale(sum(dev * dev), 1.0 / (static_cast<double>(idx.size()) - 1.0));
  }
  return m;
}

inline std::optional<GraphMoment> graph_weighted_moment(Var dists, std::size_t a,
                                                        const std::vector<std::size_t>& idx,
                                                        const std::vector<double>& w) {
  if (idx.empty()) return std::nullopt;
  double v1 = 0.0;
  double v2 = 0.0;
  for (double x : w) {
    v1 += x;
    v2 += x * x;
  }
  if (!(v1 > 0.0)) return std::nullopt;
  Graph& g = dists.graph();
  Var d = gather_entries(dists, a, idx);
  Var wv = g.constant(Tensor::vector(w));
  Var wd = sum(d * wv);
  GraphMoment m{scale(wd, 1.0 / static_cast<double>(idx.size())), std::nullopt};
  double denom = v1 - v2 / v1;
  if (denom > 1e-12) {
    Var dev = d - scale(wd, 1.0 / v1);
    m.variance = scale(sum(wv * dev * dev), 1.0 / denom);
  }
  return m;
}

inline std::optional<Var> graph_side_term(const std::optional<GraphMoment>& aligned,
                                          const std::optional<GraphMoment>& conflicting,
                                          const RegularizerConfig& cfg, bool& skip) {
  if (!aligned || !conflicting) return std::nullopt;
  Var gap = aligned->mean - conflicting->mean;
  switch (cfg.kind) {
    case RegularizerKind::kMeanOnly: return gap * gap;
    case RegularizerKind::kEndLinear: return conflicting->mean - aligned->mean;
    case RegularizerKind::kKl:
    case RegularizerKind::kJeffreys: {
      if (!aligned->variance || !conflicting->variance) {
        if (cfg.fallback == DegeneracyFallback::kSkipAnchor) {
          skip = true;
          return std::nullopt;
        }
        return gap * gap;
      }
      Var fwd = gaussian_kl(aligned->mean, *aligned->variance, conflicting->mean,
                            *conflicting->variance, cfg.variance_floor);
      if (cfg.kind == RegularizerKind::kKl) return fwd;
      return fwd + gaussian_kl(conflicting->mean, *conflicting->variance, aligned->mean,
                               *aligned->variance, cfg.variance_floor);
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Differentiable FairKL penalty; gradients reach the embeddings through the
/// distance node of the view.
inline PenaltyOutput fairkl_penalty(const GraphView& view, const RegularizerConfig& cfg) {
  cfg.validate();
  bool continuous = cfg.bias_mode == BiasMode::kContinuous;
  if (continuous) {
    if (!view.bias_scores) throw std::invalid_argument("continuous bias mode needs bias scores");
    detail::check_scores(*view.bias_scores, view.size());
  } else if (!view.partition->discrete_bias) {
    throw std::invalid_argument("discrete bias mode needs bias attributes");
  }
  std::vector<Var> terms;
  for (std::size_t a = 0; a < view.size(); ++a) {
    const AnchorGroups& grp = view.anchor(a);
    std::optional<detail::GraphMoment> pa, pc, na, nc;
    if (continuous) {
      auto weights = [&](const std::vector<std::size_t>& idx, bool aligned) {
        std::vector<double> w(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
          double s = view.bias_scores->at(a, idx[k]);
          w[k] = aligned ? s : 1.0 - s;
        }
        return w;
      };
      pa = detail::graph_weighted_moment(view.dists, a, grp.positives, weights(grp.positives, true));
      pc = detail::graph_weighted_moment(view.dists, a, grp.positives, weights(grp.positives, false));
      na = detail::graph_weighted_moment(view.dists, a, grp.negatives, weights(grp.negatives, true));
      nc = detail::graph_weighted_moment(view.dists, a, grp.negatives, weights(grp.negatives, false));
    } else {
      pa = detail::graph_plain_moment(view.dists, a, grp.pos_aligned);
      pc = detail::graph_plain_moment(view.dists, a, grp.pos_conflicting);
      na = detail::graph_plain_moment(view.dists, a, grp.neg_aligned);
      nc = detail::graph_plain_moment(view.dists, a, grp.neg_conflicting);
    }
    bool skip = false;
    auto pos = detail::graph_side_term(pa, pc, cfg, skip);
    auto neg = detail::graph_side_term(na, nc, cfg, skip);
    if (skip || (!pos && !neg)) continue;
    if (pos && neg) {
      terms.push_back(*pos + *neg);
    } else {
      terms.push_back(pos ? *pos : *neg);
    }
  }
  PenaltyOutput out;
  out.contributing_anchors = terms.size();
  if (terms.empty()) {
    logging::debug("FairKL: every anchor is degenerate, penalty is 0");
    out.value = view.dists.graph().constant(0.0);
    return out;
  }
  out.value = mean(stack(terms));
  return out;
}

// ---------------------------------------------------------------------------
// Combined objective

struct ObjectiveOutput {
  Var value;
  Var loss;
  std::optional<Var> penalty;
  std::size_t skipped_anchors = 0;
  std::size_t penalty_anchors = 0;
};

/// alpha * contrastive loss + lambda * FairKL. With lambda == 0 the penalty
/// is not evaluated.
inline ObjectiveOutput combined_objective(const GraphView& view, const LossConfig& loss_cfg,
                                          const RegularizerConfig& reg_cfg, double alpha,
                                          double lambda) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  ObjectiveOutput out;
  LossOutput loss = contrastive_loss(view, loss_cfg);
  out.loss = loss.value;
  out.skipped_anchors = loss.skipped_anchors;
  out.value = scale(loss.value, alpha);
  if (lambda > 0.0) {
    PenaltyOutput pen = fairkl_penalty(view, reg_cfg);
    out.penalty = pen.value;
    out.penalty_anchors = pen.contributing_anchors;
    out.value = out.value + scale(pen.value, lambda);
  }
  return out;
}

}  // namespace epsfair
