#pragma once

// Brute-force oracles for the loss identities, the Gaussian KL closed form
// and the estimator ordering. Each oracle is seeded and deterministic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epsfair/datagen.hpp"
#include "epsfair/fairkl.hpp"
#include "epsfair/losses.hpp"

namespace epsfair {

struct OracleReport {
  std::string name;
  std::size_t trials = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace oracle_detail {

struct Tracker {
  OracleReport r;

  Tracker(std::string name, double tol) {
    r.name = std::move(name);
    r.tolerance = tol;
  }

  void add(double got, double want) {
    double abs_err = std::abs(got - want);
    if (std::isnan(abs_err)) abs_err = std::numeric_limits<double>::infinity();
    double rel = abs_err / std::max(std::abs(want), 1e-300);
    r.max_abs_err = std::max(r.max_abs_err, abs_err);
    r.max_rel_err = std::max(r.max_rel_err, rel);
    ++r.trials;
  }

  OracleReport finish() {
    r.pass = r.trials > 0 && r.max_abs_err < r.tolerance;
    return r;
  }
};

struct Sample {
  std::vector<double> pos;
  std::vector<double> neg;
  double epsilon = 0.0;
};

inline Sample draw(std::mt19937_64& rng, std::size_t max_pos, std::size_t max_neg,
                   double temperature = 0.1) {
  std::uniform_int_distribution<std::size_t> np(1, max_pos);
  std::uniform_int_distribution<std::size_t> nn(1, max_neg);
  std::uniform_real_distribution<double> s(-1.0 / temperature, 1.0 / temperature);
  std::uniform_real_distribution<double> e(0.0, 2.0);
  Sample out;
  out.pos.resize(np(rng));
  out.neg.resize(nn(rng));
  for (double& v : out.pos) v = s(rng);
  for (double& v : out.neg) v = s(rng);
  out.epsilon = e(rng);
  return out;
}

/// Closed form evaluated through the graph kernels on constant inputs.
inline double closed(const std::function<Var(Var, Var)>& kernel, const Sample& x) {
  Graph g;
  Var pos = g.constant(Tensor::vector(x.pos));
  Var neg = g.constant(Tensor::vector(x.neg));
  return kernel(pos, neg).item();
}

}  // namespace oracle_detail

// ---------------------------------------------------------------------------
// Identities

/// One oracle per smooth-max derivation: the LogSumExp over the explicit
/// constraint list against the closed-form loss.
inline std::vector<OracleReport> identity_suite(std::size_t trials, std::uint64_t seed = 0,
                                                double tol = 1e-9) {
  if (trials < 1) throw std::invalid_argument("identity_suite: trials must be >= 1");
  using oracle_detail::closed;
  using oracle_detail::Tracker;
  std::mt19937_64 rng(seed);
  Tracker infonce("identity_eps_infonce", tol);
  Tracker multi("identity_multiple_positives_b_d", tol);
  Tracker supinfonce("identity_eps_supinfonce", tol);
  Tracker supcon("identity_eps_supcon_offset", tol);
  Tracker sup_in("identity_l_sup_in", tol);
  Tracker variant_a("identity_multiple_positives_a", tol);

  for (std::size_t t = 0; t < trials; ++t) {
    auto x = oracle_detail::draw(rng, 6, 8);
    double e = x.epsilon;

    oracle_detail::Sample single = x;
    single.pos.resize(1);
    infonce.add(closed([e](Var p, Var n) { return sum(anchor::infonce_terms(p, n, e)); }, single),
                max_form::eps_infonce(single.pos[0], single.neg, e));

    double b = closed([e](Var p, Var n) { return anchor::supinfonce_b(p, n, e); }, x);
    double d = closed([e](Var p, Var n) { return anchor::supinfonce_d(p, n, e); }, x);
    multi.add(b, max_form::supinfonce_b(x.pos, x.neg, e));
    multi.add(d, max_form::supinfonce_d(x.pos, x.neg, e));

    supinfonce.add(closed([e](Var p, Var n) { return anchor::supinfonce_c(p, n, e); }, x),
                   max_form::supinfonce_c(x.pos, x.neg, e));

    double sc = closed([e](Var p, Var n) { return anchor::supcon(p, n, e); }, x);
    supcon.add(max_form::supcon(x.pos, x.neg, e) - sc, e);

    sup_in.add(closed([](Var p, Var n) { return anchor::sup_in(p, n); }, x),
               max_form::sup_in(x.pos, x.neg));

    variant_a.add(closed([e](Var p, Var n) { return anchor::supinfonce_a(p, n, e); }, x),
                  max_form::supinfonce_a(x.pos, x.neg, e));
  }
  // multi recorded two comparisons per trial
  OracleReport m = multi.finish();
  m.trials = trials;
  return {infonce.finish(), m, supinfonce.finish(), supcon.finish(), sup_in.finish(),
          variant_a.finish()};
}

// ---------------------------------------------------------------------------
// Gaussian KL

struct McEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
};

/// E_p[log p - log q] from n_samples antithetic draws.
inline McEstimate mc_kl_oracle(double mu_p, double var_p, double mu_q, double var_q,
                               std::size_t n_samples, std::uint64_t seed = 0) {
  if (n_samples < 2) throw std::invalid_argument("mc_kl_oracle: need at least 2 samples");
  if (!(var_p > 0.0 && var_q > 0.0)) throw std::invalid_argument("mc_kl_oracle: variances must be > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  double sd_p = std::sqrt(var_p);
  double log_ratio = -0.5 * std::log(var_p / var_q);
  auto f = [&](double x) {
    double a = x - mu_p;
    double b = x - mu_q;
    return log_ratio - a * a / (2.0 * var_p) + b * b / (2.0 * var_q);
  };
  std::size_t pairs = n_samples / 2;
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    double u = z(rng);
    double v = 0.5 * (f(mu_p + sd_p * u) + f(mu_p - sd_p * u));
    double delta = v - mean;
    mean += delta / static_cast<double>(k + 1);
    m2 += delta * (v - mean);
  }
  double var = pairs > 1 ? m2 / static_cast<double>(pairs - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(pairs))};
}

/// Closed form against Monte Carlo over random parameter draws. The error
/// reported is |closed - mc| in units of the standard error; pass when every
/// draw lies within 3 SE.
inline OracleReport kl_mc_suite(std::size_t draws, std::size_t n_samples, std::uint64_t seed = 0,
                                KlFn kl = &gaussian_kl) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mu(-2.0, 2.0);
  std::uniform_real_distribution<double> var(0.2, 3.0);
  OracleReport r;
  r.name = "gaussian_kl_monte_carlo";
  r.tolerance = 3.0;
  for (std::size_t t = 0; t < draws; ++t) {
    double mp = mu(rng), vp = var(rng), mq = mu(rng), vq = var(rng);
    McEstimate mc = mc_kl_oracle(mp, vp, mq, vq, n_samples, seed + 1 + t);
    double cf = kl(mp, vp, mq, vq, 1e-6);
    double diff = std::abs(cf - mc.estimate);
    double in_se = mc.standard_error > 0.0 ? diff / mc.standard_error : (diff == 0.0 ? 0.0 : INFINITY);
    r.max_abs_err = std::max(r.max_abs_err, in_se);
    r.max_rel_err = std::max(r.max_rel_err, diff / std::max(std::abs(mc.estimate), 1e-300));
    ++r.trials;
  }
  r.pass = r.trials > 0 && r.max_abs_err <= r.tolerance;
  return r;
}

/// KL(p, p) = 0 and Jeffreys symmetry, both required to hold exactly.
inline OracleReport kl_exact_suite(std::size_t draws, std::uint64_t seed = 0,
                                   KlFn kl = &gaussian_kl) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mu(-2.0, 2.0);
  std::uniform_real_distribution<double> var(0.2, 3.0);
  OracleReport r;
  r.name = "gaussian_kl_exact";
  r.tolerance = 0.0;
  bool exact = true;
  for (std::size_t t = 0; t < draws; ++t) {
    double mp = mu(rng), vp = var(rng), mq = mu(rng), vq = var(rng);
    double self = kl(mp, vp, mp, vp, 1e-6);
    double j1 = kl(mp, vp, mq, vq, 1e-6) + kl(mq, vq, mp, vp, 1e-6);
    double j2 = kl(mq, vq, mp, vp, 1e-6) + kl(mp, vp, mq, vq, 1e-6);
    double err = std::max(std::abs(self), std::abs(j1 - j2));
    exact = exact && self == 0.0 && j1 == j2;
    r.max_abs_err = std::max(r.max_abs_err, err);
    r.max_rel_err = std::max(r.max_rel_err, std::abs(j1 - j2) / std::max(std::abs(j1), 1e-300));
    ++r.trials;
  }
  r.pass = r.trials > 0 && exact;
  return r;
}

// ---------------------------------------------------------------------------
// Estimators and smooth max

/// InfoNCE <= InfoL1O on random inputs; the error is the largest violation.
inline OracleReport estimator_ordering_suite(std::size_t trials, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  OracleReport r;
  r.name = "estimator_ordering";
  r.tolerance = 0.0;
  std::size_t violations = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    auto x = oracle_detail::draw(rng, 1, 16);
    EstimatorPair e = estimator_ordering_check(x.pos[0], x.neg);
    double gap = e.infonce - e.infol1o;
    if (gap > 0.0) {
      ++violations;
      r.max_abs_err = std::max(r.max_abs_err, gap);
    }
    ++r.trials;
  }
  r.pass = r.trials > 0 && violations == 0;
  return r;
}

/// eps-InfoNCE is non-increasing in eps over [0, 2/tau].
inline OracleReport margin_monotonicity_suite(std::size_t trials, std::uint64_t seed = 0,
                                              double temperature = 0.1, std::size_t grid = 41) {
  std::mt19937_64 rng(seed);
  OracleReport r;
  r.name = "margin_monotonicity";
  r.tolerance = 0.0;
  std::size_t violations = 0;
  double hi = 2.0 / temperature;
  for (std::size_t t = 0; t < trials; ++t) {
    auto x = oracle_detail::draw(rng, 1, 16, temperature);
    double prev = INFINITY;
    for (std::size_t k = 0; k < grid; ++k) {
      double e = hi * static_cast<double>(k) / static_cast<double>(grid - 1);
      double v = eps_infonce(x.pos[0], x.neg, e);
      if (v > prev) {
        ++violations;
        r.max_abs_err = std::max(r.max_abs_err, v - prev);
      }
      prev = v;
    }
    ++r.trials;
  }
  r.pass = r.trials > 0 && violations == 0;
  return r;
}

struct SmoothMaxGap {
  double exact_max = 0.0;
  double lse = 0.0;
  double gap = 0.0;
};

inline SmoothMaxGap smoothmax_gap(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("smoothmax_gap: empty input");
  SmoothMaxGap out;
  out.exact_max = *std::max_element(x.begin(), x.end());
  out.lse = log_sum_exp(x);
  out.gap = out.lse - out.exact_max;
  return out;
}

/// n identical entries give a gap of exactly log n.
inline OracleReport smoothmax_identical_suite(std::size_t trials, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> n(1, 64);
  std::uniform_real_distribution<double> v(-10.0, 10.0);
  oracle_detail::Tracker tr("smoothmax_identical", 1e-12);
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> x(n(rng), v(rng));
    tr.add(smoothmax_gap(x).gap, std::log(static_cast<double>(x.size())));
  }
  return tr.finish();
}

/// When the maximum leads every other entry by at least 10 the gap stays
/// below 1e-3 (n <= 20). The error reported is the gap itself.
inline OracleReport smoothmax_spread_suite(std::size_t trials, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> n(2, 20);
  std::uniform_real_distribution<double> top(-10.0, 10.0);
  std::uniform_real_distribution<double> below(10.0, 30.0);
  OracleReport r;
  r.name = "smoothmax_spread";
  r.tolerance = 1e-3;
  bool ok = true;
  for (std::size_t t = 0; t < trials; ++t) {
    std::size_t k = n(rng);
    double m = top(rng);
    std::vector<double> x{m};
    for (std::size_t i = 1; i < k; ++i) x.push_back(m - below(rng));
    SmoothMaxGap g = smoothmax_gap(x);
    ok = ok && g.gap >= 0.0 && g.gap <= std::log(static_cast<double>(k));
    r.max_abs_err = std::max(r.max_abs_err, g.gap);
    r.max_rel_err = std::max(r.max_rel_err, g.gap / std::max(std::abs(m), 1e-300));
    ++r.trials;
  }
  r.pass = ok && r.trials > 0 && r.max_abs_err < r.tolerance;
  return r;
}

// ---------------------------------------------------------------------------
// Full suite

struct OracleOptions {
  std::size_t identity_trials = 100;
  std::size_t kl_draws = 50;
  std::size_t kl_samples = 1000000;
  std::size_t ordering_trials = 10000;
  std::size_t monotone_trials = 1000;
  std::size_t smoothmax_trials = 1000;
  std::uint64_t seed = 0;
  KlFn kl = &gaussian_kl;
};

namespace mutation {

/// gaussian_kl with the sign of the log-variance term flipped. Used to show
/// the suite notices a broken closed form.
inline double gaussian_kl_sign_error(double mu_p, double var_p, double mu_q, double var_q,
                                     double variance_floor = 1e-6) {
  var_p = std::max(var_p, variance_floor);
  var_q = std::max(var_q, variance_floor);
  double dm = mu_p - mu_q;
  return 0.5 * ((var_p + dm * dm) / var_q + std::log(var_p / var_q) - 1.0);
}

}  // namespace mutation

inline std::vector<OracleReport> run_oracles(const OracleOptions& opt = {}) {
  std::vector<OracleReport> out = identity_suite(opt.identity_trials, opt.seed);
  out.push_back(kl_mc_suite(opt.kl_draws, opt.kl_samples, opt.seed, opt.kl));
  out.push_back(kl_exact_suite(opt.kl_draws, opt.seed, opt.kl));
  out.push_back(estimator_ordering_suite(opt.ordering_trials, opt.seed));
  out.push_back(margin_monotonicity_suite(opt.monotone_trials, opt.seed));
  out.push_back(smoothmax_identical_suite(opt.smoothmax_trials, opt.seed));
  out.push_back(smoothmax_spread_suite(opt.smoothmax_trials, opt.seed));
  return out;
}

inline bool all_pass(const std::vector<OracleReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const OracleReport& r) { return r.pass; });
}

inline void write_oracle_report(const std::vector<OracleReport>& reports, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "name,trials,max_abs_err,max_rel_err,pass\n";
  for (const OracleReport& r : reports) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6e,%.6e,%d\n", r.name.c_str(), r.trials,
                  r.max_abs_err, r.max_rel_err, r.pass ? 1 : 0);
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace epsfair
