#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epsfair/autodiff.hpp"

namespace epsfair {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.shape()[0]),
                     static_cast<Eigen::Index>(t.shape()[1]));
}

inline MatMap as_matrix(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.shape()[0]),
                static_cast<Eigen::Index>(t.shape()[1]));
}

inline void require_same_graph(const Var& a, const Var& b) {
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument("operands belong to different graphs");
  }
}

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(v.shape()));
  }
}

inline void require_index(std::size_t i, std::size_t bound, const char* op) {
  if (i >= bound) {
    throw ShapeError(std::string(op) + ": index " + std::to_string(i) +
                     " out of range " + std::to_string(bound));
  }
}

inline bool needs(const Graph& g, std::size_t index) { return g.requires_grad(index); }

inline void accumulate(Graph& g, std::size_t index, const Tensor& delta) {
  if (!g.requires_grad(index)) return;
  Tensor& buf = g.grad_buffer(index);
  for (std::size_t i = 0; i < delta.size(); ++i) buf[i] += delta[i];
}

inline bool is_scalar_value(const Tensor& t) { return t.is_scalar(); }

// Elementwise binary op; either side may be a scalar (shape []) and is then
// broadcast.
template <typename Fwd, typename DA, typename DB>
Var binary(OpTag tag, Var a, Var b, Fwd fwd, DA da, DB db) {
  require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  bool a_sc = av.is_scalar();
  bool b_sc = bv.is_scalar();
  if (av.shape() != bv.shape() && !a_sc && !b_sc) {
    throw ShapeError(std::string(op_name(tag)) + ": shape mismatch " +
                     shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor out(a_sc ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = fwd(av[a_sc ? 0 : i], bv[b_sc ? 0 : i]);
  }
  std::size_t ia = a.index();
  std::size_t ib = b.index();
  return a.graph().record(
      tag, {ia, ib}, std::move(out),
      [ia, ib, a_sc, b_sc, da, db](Graph& g, std::size_t, const Tensor& og) {
        const Tensor& x = g.value(ia);
        const Tensor& y = g.value(ib);
        if (needs(g, ia)) {
          Tensor ga(x.shape(), 0.0);
          for (std::size_t i = 0; i < og.size(); ++i) {
            ga[a_sc ? 0 : i] += og[i] * da(x[a_sc ? 0 : i], y[b_sc ? 0 : i]);
          }
          accumulate(g, ia, ga);
        }
        if (needs(g, ib)) {
          Tensor gb(y.shape(), 0.0);
          for (std::size_t i = 0; i < og.size(); ++i) {
            gb[b_sc ? 0 : i] += og[i] * db(x[a_sc ? 0 : i], y[b_sc ? 0 : i]);
          }
          accumulate(g, ib, gb);
        }
      });
}

// Elementwise unary op; `deriv(x, y)` receives input and output values.
template <typename Fwd, typename Deriv>
Var unary(OpTag tag, Var a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  std::size_t ia = a.index();
  return a.graph().record(tag, {ia}, std::move(out),
                          [ia, deriv](Graph& g, std::size_t self, const Tensor& og) {
                            const Tensor& x = g.value(ia);
                            const Tensor& y = g.value(self);
                            Tensor gx(x.shape());
                            for (std::size_t i = 0; i < og.size(); ++i) {
                              gx[i] = og[i] * deriv(x[i], y[i]);
                            }
                            accumulate(g, ia, gx);
                          });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::require_same_graph(a, b);
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  Tensor out(Shape{av.rows(), bv.cols()});
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  std::size_t ia = a.index();
  std::size_t ib = b.index();
  return a.graph().record(OpTag::kMatMul, {ia, ib}, std::move(out),
                          [ia, ib](Graph& g, std::size_t, const Tensor& og) {
                            auto G = detail::as_matrix(og);
                            if (detail::needs(g, ia)) {
                              Tensor& ga = g.grad_buffer(ia);
                              detail::as_matrix(ga).noalias() +=
                                  G * detail::as_matrix(g.value(ib)).transpose();
                            }
                            if (detail::needs(g, ib)) {
                              Tensor& gb = g.grad_buffer(ib);
                              detail::as_matrix(gb).noalias() +=
                                  detail::as_matrix(g.value(ia)).transpose() * G;
                            }
                          });
}

inline Var transpose(Var a) {
  detail::require_rank(a, 2, "transpose");
  const Tensor& av = a.value();
  Tensor out(Shape{av.cols(), av.rows()});
  detail::as_matrix(out) = detail::as_matrix(av).transpose();
  std::size_t ia = a.index();
  return a.graph().record(OpTag::kTranspose, {ia}, std::move(out),
                          [ia](Graph& g, std::size_t, const Tensor& og) {
                            Tensor& ga = g.grad_buffer(ia);
                            detail::as_matrix(ga) += detail::as_matrix(og).transpose();
                          });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Var a, Var b) {
  return detail::binary(
      OpTag::kAdd, a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      OpTag::kSub, a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      OpTag::kMul, a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Var div(Var a, Var b) {
  for (double v : b.value().values()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return detail::binary(
      OpTag::kDiv, a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

/// m[r, c] + v[c] broadcast over rows.
inline Var add_row(Var m, Var v) {
  detail::require_same_graph(m, v);
  detail::require_rank(m, 2, "add_row");
  detail::require_rank(v, 1, "add_row");
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  if (mv.cols() != vv.size()) {
    throw ShapeError("add_row: " + shape_str(mv.shape()) + " + " + shape_str(vv.shape()));
  }
  Tensor out = mv;
  for (std::size_t r = 0; r < mv.rows(); ++r) {
    for (std::size_t c = 0; c < mv.cols(); ++c) out.at(r, c) += vv[c];
  }
  std::size_t im = m.index();
  std::size_t iv = v.index();
  return m.graph().record(OpTag::kAddRow, {im, iv}, std::move(out),
                          [im, iv](Graph& g, std::size_t, const Tensor& og) {
                            detail::accumulate(g, im, og);
                            if (detail::needs(g, iv)) {
                              Tensor& gv = g.grad_buffer(iv);
                              std::size_t rows = og.shape()[0];
                              std::size_t cols = og.shape()[1];
                              for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t c = 0; c < cols; ++c) gv[c] += og.at(r, c);
                              }
                            }
                          });
}

inline Var scale(Var a, double k) {
  return detail::unary(
      OpTag::kScale, a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

inline Var add_const(Var a, double k) {
  return detail::unary(
      OpTag::kAddConst, a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

inline Var exp(Var a) {
  return detail::unary(
      OpTag::kExp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!(av[i] > 0.0)) {
      throw DomainError("log of non-positive value " + std::to_string(av[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return detail::unary(
      OpTag::kLog, a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

/// Subgradient at exactly 0 is 0.
inline Var relu(Var a) {
  return detail::unary(
      OpTag::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var a) {
  return detail::unary(
      OpTag::kTanh, a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

/// max(a, floor); gradient passes only where a > floor.
inline Var clamp_min(Var a, double floor) {
  return detail::unary(
      OpTag::kClampMin, a, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator+(Var a, double k) { return add_const(a, k); }
inline Var operator+(double k, Var a) { return add_const(a, k); }
inline Var operator-(Var a, double k) { return add_const(a, -k); }
inline Var operator-(double k, Var a) { return add_const(scale(a, -1.0), k); }
inline Var operator*(Var a, double k) { return scale(a, k); }
inline Var operator*(double k, Var a) { return scale(a, k); }
inline Var operator/(Var a, double k) {
  if (k == 0.0) throw DomainError("division by zero");
  return scale(a, 1.0 / k);
}
inline Var operator/(double k, Var a) { return div(a.graph().constant(k), a); }
inline Var operator-(Var a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  std::size_t ia = a.index();
  return a.graph().record(OpTag::kSum, {ia}, Tensor::scalar(s),
                          [ia](Graph& g, std::size_t, const Tensor& og) {
                            Tensor& ga = g.grad_buffer(ia);
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += og[0];
                          });
}

inline Var mean(Var a) {
  const Tensor& av = a.value();
  if (av.size() == 0) throw ShapeError("mean of empty tensor");
  double n = static_cast<double>(av.size());
  double s = 0.0;
  for (double v : av.values()) s += v;
  std::size_t ia = a.index();
  return a.graph().record(OpTag::kMean, {ia}, Tensor::scalar(s / n),
                          [ia, n](Graph& g, std::size_t, const Tensor& og) {
                            Tensor& ga = g.grad_buffer(ia);
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += og[0] / n;
                          });
}

namespace detail {
inline Var row_reduce(OpTag tag, Var m, bool average) {
  require_rank(m, 2, op_name(tag));
  const Tensor& mv = m.value();
  std::size_t rows = mv.rows();
  std::size_t cols = mv.cols();
  if (average && cols == 0) throw ShapeError("row_mean over zero columns");
  double k = average ? 1.0 / static_cast<double>(cols) : 1.0;
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += mv.at(r, c);
    out[r] = s * k;
  }
  std::size_t im = m.index();
  return m.graph().record(tag, {im}, std::move(out),
                          [im, k, rows, cols](Graph& g, std::size_t, const Tensor& og) {
                            Tensor& gm = g.grad_buffer(im);
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < cols; ++c) gm.at(r, c) += og[r] * k;
                            }
                          });
}
}  // namespace detail

inline Var row_sum(Var m) { return detail::row_reduce(OpTag::kRowSum, m, false); }
inline Var row_mean(Var m) { return detail::row_reduce(OpTag::kRowMean, m, true); }

/// Row-wise log(sum_k exp(m[r, k]) + exp(extra_r)) with max subtraction.
///
/// `m` is a matrix [R, K] (result [R]) or a vector [K] (result scalar).
/// `extra`, when present, is a scalar broadcast to every row or a vector [R];
/// it is folded into the same shifted sum. K may be 0 only when `extra` is
/// given.
inline Var logsumexp_rows(Var m, std::optional<Var> extra = std::nullopt) {
  const Tensor& mv = m.value();
  bool vector_input = mv.rank() == 1;
  if (mv.rank() != 1 && mv.rank() != 2) {
    throw ShapeError("logsumexp_rows: expected vector or matrix, got " + shape_str(mv.shape()));
  }
  std::size_t rows = vector_input ? 1 : mv.shape()[0];
  std::size_t cols = vector_input ? mv.shape()[0] : mv.shape()[1];
  bool extra_scalar = false;
  if (extra) {
    detail::require_same_graph(m, *extra);
    const Tensor& ev = extra->value();
    extra_scalar = ev.is_scalar();
    if (!extra_scalar && !(ev.rank() == 1 && ev.size() == rows && !vector_input)) {
      throw ShapeError("logsumexp_rows: extra term shape " + shape_str(ev.shape()) +
                       " does not match " + std::to_string(rows) + " rows");
    }
  }
  if (cols == 0 && !extra) throw ShapeError("logsumexp_rows over an empty row");

  auto extra_at = [&](std::size_t r) {
    return extra_scalar ? extra->value()[0] : extra->value()[r];
  };
  Tensor out(vector_input ? Shape{} : Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = mv.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
    if (extra) mx = std::max(mx, extra_at(r));
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    if (extra) s += std::exp(extra_at(r) - mx);
    out[r] = mx + std::log(s);
  }

  std::vector<std::size_t> parents{m.index()};
  if (extra) parents.push_back(extra->index());
  std::size_t im = m.index();
  std::optional<std::size_t> ie;
  if (extra) ie = extra->index();
  return m.graph().record(
      OpTag::kLogSumExpRows, std::move(parents), std::move(out),
      [im, ie, rows, cols, extra_scalar](Graph& g, std::size_t self, const Tensor& og) {
        const Tensor& y = g.value(self);
        const Tensor& x = g.value(im);
        if (detail::needs(g, im)) {
          Tensor& gm = g.grad_buffer(im);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              std::size_t k = r * cols + c;
              gm[k] += og[r] * std::exp(x[k] - y[r]);
            }
          }
        }
        if (ie && detail::needs(g, *ie)) {
          const Tensor& e = g.value(*ie);
          Tensor& ge = g.grad_buffer(*ie);
          for (std::size_t r = 0; r < rows; ++r) {
            double ev = extra_scalar ? e[0] : e[r];
            ge[extra_scalar ? 0 : r] += og[r] * std::exp(ev - y[r]);
          }
        }
      });
}

inline Var logsumexp(Var v) { return logsumexp_rows(v); }

// ---------------------------------------------------------------------------
// Geometry

/// Divides each row by its L2 norm. A zero row raises DomainError naming the
/// row.
inline Var l2_normalize_rows(Var m) {
  detail::require_rank(m, 2, "l2_normalize_rows");
  const Tensor& mv = m.value();
  std::size_t rows = mv.rows();
  std::size_t cols = mv.cols();
  Tensor out(mv.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += mv.at(r, c) * mv.at(r, c);
    double n = std::sqrt(s);
    if (!(n > 0.0)) throw DomainError("cannot normalize zero-norm row " + std::to_string(r));
    norms[r] = n;
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = mv.at(r, c) / n;
  }
  std::size_t im = m.index();
  return m.graph().record(
      OpTag::kL2NormalizeRows, {im}, std::move(out),
      [im, rows, cols, norms = std::move(norms)](Graph& g, std::size_t self, const Tensor& og) {
        const Tensor& y = g.value(self);
        Tensor& gm = g.grad_buffer(im);
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += y.at(r, c) * og.at(r, c);
          for (std::size_t c = 0; c < cols; ++c) {
            gm.at(r, c) += (og.at(r, c) - y.at(r, c) * dot) / norms[r];
          }
        }
      });
}

/// D[i, j] = ||x_i - x_j||^2 for the rows of a [B, d] matrix.
inline Var pairwise_sq_dists(Var m) {
  detail::require_rank(m, 2, "pairwise_sq_dists");
  const Tensor& mv = m.value();
  std::size_t b = mv.rows();
  std::size_t d = mv.cols();
  Tensor out(Shape{b, b}, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = mv.at(i, k) - mv.at(j, k);
        s += diff * diff;
      }
      out.at(i, j) = s;
      out.at(j, i) = s;
    }
  }
  std::size_t im = m.index();
  return m.graph().record(OpTag::kPairwiseSqDists, {im}, std::move(out),
                          [im](Graph& g, std::size_t, const Tensor& og) {
                            auto X = detail::as_matrix(g.value(im));
                            detail::RowMat G = detail::as_matrix(og);
                            G += detail::as_matrix(og).transpose().eval();
                            Eigen::VectorXd rs = G.rowwise().sum();
                            Tensor& gm = g.grad_buffer(im);
                            detail::as_matrix(gm) +=
                                2.0 * (rs.asDiagonal() * X - G * X);
                          });
}

/// ||m[i] - m[j]||^2 as a scalar.
inline Var sq_dist_rows(Var m, std::size_t i, std::size_t j) {
  detail::require_rank(m, 2, "sq_dist_rows");
  const Tensor& mv = m.value();
  detail::require_index(i, mv.rows(), "sq_dist_rows");
  detail::require_index(j, mv.rows(), "sq_dist_rows");
  std::size_t d = mv.cols();
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double diff = mv.at(i, k) - mv.at(j, k);
    s += diff * diff;
  }
  std::size_t im = m.index();
  return m.graph().record(OpTag::kSqDistRows, {im}, Tensor::scalar(s),
                          [im, i, j, d](Graph& g, std::size_t, const Tensor& og) {
                            const Tensor& x = g.value(im);
                            Tensor& gm = g.grad_buffer(im);
                            for (std::size_t k = 0; k < d; ++k) {
                              double diff = 2.0 * og[0] * (x.at(i, k) - x.at(j, k));
                              gm.at(i, k) += diff;
                              gm.at(j, k) -= diff;
                            }
                          });
}

// ---------------------------------------------------------------------------
// Gathers and restructuring

/// Entries v[idx[k]] of a vector.
inline Var gather(Var v, std::vector<std::size_t> idx) {
  detail::require_rank(v, 1, "gather");
  const Tensor& vv = v.value();
  Tensor out(Shape{idx.size()});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    detail::require_index(idx[k], vv.size(), "gather");
    out[k] = vv[idx[k]];
  }
  std::size_t iv = v.index();
  return v.graph().record(OpTag::kGather, {iv}, std::move(out),
                          [iv, idx = std::move(idx)](Graph& g, std::size_t, const Tensor& og) {
                            Tensor& gv = g.grad_buffer(iv);
                            for (std::size_t k = 0; k < idx.size(); ++k) gv[idx[k]] += og[k];
                          });
}

/// Entries m[row, cols[k]] of a matrix.
inline Var gather_entries(Var m, std::size_t row, std::vector<std::size_t> cols) {
  detail::require_rank(m, 2, "gather_entries");
  const Tensor& mv = m.value();
  detail::require_index(row, mv.rows(), "gather_entries");
  Tensor out(Shape{cols.size()});
  for (std::size_t k = 0; k < cols.size(); ++k) {
    detail::require_index(cols[k], mv.cols(), "gather_entries");
    out[k] = mv.at(row, cols[k]);
  }
  std::size_t im = m.index();
  return m.graph().record(
      OpTag::kGatherEntries, {im}, std::move(out),
      [im, row, cols = std::move(cols)](Graph& g, std::size_t, const Tensor& og) {
        Tensor& gm = g.grad_buffer(im);
        for (std::size_t k = 0; k < cols.size(); ++k) gm.at(row, cols[k]) += og[k];
      });
}

inline Var gather_row(Var m, std::size_t row) {
  detail::require_rank(m, 2, "gather_row");
  const Tensor& mv = m.value();
  detail::require_index(row, mv.rows(), "gather_row");
  std::size_t cols = mv.cols();
  Tensor out(Shape{cols});
  std::copy_n(mv.data() + row * cols, cols, out.data());
  std::size_t im = m.index();
  return m.graph().record(OpTag::kGatherRow, {im}, std::move(out),
                          [im, row, cols](Graph& g, std::size_t, const Tensor& og) {
                            Tensor& gm = g.grad_buffer(im);
                            for (std::size_t c = 0; c < cols; ++c) gm.at(row, c) += og[c];
                          });
}

inline Var gather_rows(Var m, std::vector<std::size_t> rows) {
  detail::require_rank(m, 2, "gather_rows");
  const Tensor& mv = m.value();
  std::size_t cols = mv.cols();
  Tensor out(Shape{rows.size(), cols});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    detail::require_index(rows[k], mv.rows(), "gather_rows");
    std::copy_n(mv.data() + rows[k] * cols, cols, out.data() + k * cols);
  }
  std::size_t im = m.index();
  return m.graph().record(
      OpTag::kGatherRows, {im}, std::move(out),
      [im, cols, rows = std::move(rows)](Graph& g, std::size_t, const Tensor& og) {
        Tensor& gm = g.grad_buffer(im);
        for (std::size_t k = 0; k < rows.size(); ++k) {
          for (std::size_t c = 0; c < cols; ++c) gm.at(rows[k], c) += og.at(k, c);
        }
      });
}

/// Concatenation of two vectors.
inline Var concat(Var a, Var b) {
  detail::require_same_graph(a, b);
  detail::require_rank(a, 1, "concat");
  detail::require_rank(b, 1, "concat");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::size_t na = av.size();
  std::vector<double> v(av.values());
  v.insert(v.end(), bv.values().begin(), bv.values().end());
  std::size_t ia = a.index();
  std::size_t ib = b.index();
  return a.graph().record(OpTag::kConcat, {ia, ib}, Tensor::vector(std::move(v)),
                          [ia, ib, na](Graph& g, std::size_t, const Tensor& og) {
                            if (detail::needs(g, ia)) {
                              Tensor& ga = g.grad_buffer(ia);
                              for (std::size_t k = 0; k < na; ++k) ga[k] += og[k];
                            }
                            if (detail::needs(g, ib)) {
                              Tensor& gb = g.grad_buffer(ib);
                              for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += og[na + k];
                            }
                          });
}

/// Packs scalar nodes into a vector.
inline Var stack(std::span<const Var> scalars) {
  if (scalars.empty()) throw ShapeError("stack of zero scalars");
  Graph& graph = scalars.front().graph();
  std::vector<std::size_t> parents;
  std::vector<double> v;
  parents.reserve(scalars.size());
  v.reserve(scalars.size());
  for (const Var& s : scalars) {
    detail::require_same_graph(scalars.front(), s);
    if (!s.value().is_scalar()) throw ShapeError("stack expects scalars, got " + shape_str(s.shape()));
    parents.push_back(s.index());
    v.push_back(s.value()[0]);
  }
  return graph.record(OpTag::kStack, parents, Tensor::vector(std::move(v)),
                      [parents](Graph& g, std::size_t, const Tensor& og) {
                        for (std::size_t k = 0; k < parents.size(); ++k) {
                          if (detail::needs(g, parents[k])) g.grad_buffer(parents[k])[0] += og[k];
                        }
                      });
}

inline Var stack(const std::vector<Var>& scalars) {
  return stack(std::span<const Var>(scalars.data(), scalars.size()));
}

/// out[i, j] = u[j] - v[i] for vectors u [N], v [P]; result [P, N].
inline Var outer_diff(Var u, Var v) {
  detail::require_same_graph(u, v);
  detail::require_rank(u, 1, "outer_diff");
  detail::require_rank(v, 1, "outer_diff");
  const Tensor& uv = u.value();
  const Tensor& vv = v.value();
  std::size_t n = uv.size();
  std::size_t p = vv.size();
  Tensor out(Shape{p, n});
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = uv[j] - vv[i];
  }
  std::size_t iu = u.index();
  std::size_t iv = v.index();
  return u.graph().record(OpTag::kOuterDiff, {iu, iv}, std::move(out),
                          [iu, iv, n, p](Graph& g, std::size_t, const Tensor& og) {
                            if (detail::needs(g, iu)) {
                              Tensor& gu = g.grad_buffer(iu);
                              for (std::size_t i = 0; i < p; ++i) {
                                for (std::size_t j = 0; j < n; ++j) gu[j] += og.at(i, j);
                              }
                            }
                            if (detail::needs(g, iv)) {
                              Tensor& gv = g.grad_buffer(iv);
                              for (std::size_t i = 0; i < p; ++i) {
                                for (std::size_t j = 0; j < n; ++j) gv[i] -= og.at(i, j);
                              }
                            }
                          });
}

inline Var reshape(Var a, Shape shape) {
  const Tensor& av = a.value();
  if (shape_numel(shape) != av.size()) {
    throw ShapeError("reshape: " + shape_str(av.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), av.values());
  std::size_t ia = a.index();
  return a.graph().record(OpTag::kReshape, {ia}, std::move(out),
                          [ia](Graph& g, std::size_t, const Tensor& og) {
                            Tensor& ga = g.grad_buffer(ia);
                            for (std::size_t k = 0; k < og.size(); ++k) ga[k] += og[k];
                          });
}

}  // namespace epsfair
