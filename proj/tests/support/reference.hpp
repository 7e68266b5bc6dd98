#pragma once

// Direct, textbook implementations used as test oracles. They work on
// probabilities rather than log-sum-exp so they share no code path with the
// library.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "epsfair/geometry.hpp"

namespace reference {

/// -log( e^{s+} / (e^{s+} + sum_j e^{s-_j}) )
inline double infonce(double s_pos, const std::vector<double>& s_negs) {
  double denom = std::exp(s_pos);
  for (double n : s_negs) denom += std::exp(n);
  return -std::log(std::exp(s_pos) / denom);
}

/// SupCon L_out for anchor a of a labelled embedding matrix:
/// -1/|P(a)| sum_{p in P(a)} log( exp(z_a.z_p/tau) / sum_{k != a} exp(z_a.z_k/tau) )
inline double supcon_out_anchor(const epsfair::Tensor& z, const std::vector<int>& labels,
                                std::size_t a, double tau) {
  std::size_t b = z.rows();
  auto dot = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < z.cols(); ++k) s += z.at(i, k) * z.at(j, k);
    return s / tau;
  };
  double denom = 0.0;
  for (std::size_t k = 0; k < b; ++k) {
    if (k != a) denom += std::exp(dot(a, k));
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < b; ++p) {
    if (p == a || labels[p] != labels[a]) continue;
    total += std::log(std::exp(dot(a, p)) / denom);
    ++count;
  }
  return -total / static_cast<double>(count);
}

/// Mean of supcon_out_anchor over anchors with a positive and a negative.
inline double supcon_out(const epsfair::Tensor& z, const std::vector<int>& labels, double tau) {
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t a = 0; a < labels.size(); ++a) {
    bool has_pos = false;
    bool has_neg = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (i == a) continue;
      (labels[i] == labels[a] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    total += supcon_out_anchor(z, labels, a, tau);
    ++used;
  }
  return total / static_cast<double>(used);
}

/// Batch InfoNCE straight from the embeddings: mean over anchors with a
/// positive and a negative of the mean over positives of infonce().
inline double infonce_batch(const epsfair::Tensor& z, const std::vector<int>& labels, double tau) {
  std::size_t b = z.rows();
  auto dot = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < z.cols(); ++k) s += z.at(i, k) * z.at(j, k);
    return s / tau;
  };
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t a = 0; a < b; ++a) {
    std::vector<double> negs;
    std::vector<double> poss;
    for (std::size_t i = 0; i < b; ++i) {
      if (i == a) continue;
      (labels[i] == labels[a] ? poss : negs).push_back(dot(a, i));
    }
    if (poss.empty() || negs.empty()) continue;
    double per = 0.0;
    for (double p : poss) per += infonce(p, negs);
    total += per / static_cast<double>(poss.size());
    ++used;
  }
  return total / static_cast<double>(used);
}

inline double sq_dist(const epsfair::Tensor& z, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < z.cols(); ++k) {
    double d = z.at(i, k) - z.at(j, k);
    s += d * d;
  }
  return s;
}

struct BruteMoment {
  bool present = false;
  double mean = 0.0;
  bool has_variance = false;
  double variance = 0.0;
};

/// Two-pass mean and (n-1) variance of ||z_a - z_i||^2 over the members.
inline BruteMoment moment(const epsfair::Tensor& z, std::size_t a,
                          const std::vector<std::size_t>& members) {
  BruteMoment m;
  if (members.empty()) return m;
  m.present = true;
  std::vector<double> d;
  for (std::size_t i : members) d.push_back(sq_dist(z, a, i));
  for (double v : d) m.mean += v;
  m.mean /= static_cast<double>(d.size());
  if (d.size() >= 2) {
    m.has_variance = true;
    for (double v : d) m.variance += (v - m.mean) * (v - m.mean);
    m.variance /= static_cast<double>(d.size() - 1);
  }
  return m;
}

/// Members of a group recomputed from raw labels and attributes.
inline std::vector<std::size_t> members(const std::vector<int>& labels,
                                        const std::vector<int>& bias, std::size_t a,
                                        bool positive, bool aligned) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i == a) continue;
    if ((labels[i] == labels[a]) != positive) continue;
    if ((bias[i] == bias[a]) != aligned) continue;
    out.push_back(i);
  }
  return out;
}

}  // namespace reference
