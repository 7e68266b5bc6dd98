#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "epsfair/grad_check.hpp"
#include "epsfair/ops.hpp"
#include "support/random_batch.hpp"

using namespace epsfair;

namespace {

double softmax_at(const std::vector<double>& x, std::size_t i) {
  double s = 0.0;
  for (double v : x) s += std::exp(v);
  return std::exp(x[i]) / s;
}

}  // namespace

TEST(Tensor, RejectsSizeMismatch) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Ops, LogSumExpOfEqualEntries) {
  Graph g;
  Var x = g.constant(Tensor::vector({0, 0, 0}));
  EXPECT_NEAR(logsumexp(x).item(), std::log(3.0), 1e-15);
}

TEST(Ops, LogSumExpDoesNotOverflow) {
  Graph g;
  Var x = g.constant(Tensor::vector({1000, 1000}));
  EXPECT_DOUBLE_EQ(logsumexp(x).item(), 1000.0 + std::log(2.0));
}

TEST(Ops, LogSumExpExtraTermIsFoldedIn) {
  Graph g;
  Var x = g.constant(Tensor::vector({1.0, 2.0}));
  Var e = g.constant(3.0);
  double expect = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(logsumexp_rows(x, e).item(), expect, 1e-14);
  Var m = g.constant(Tensor::matrix({{1.0, 2.0}, {0.0, -1.0}}));
  Var ev = g.constant(Tensor::vector({3.0, 0.5}));
  Var r = logsumexp_rows(m, ev);
  EXPECT_NEAR(r.value()[0], expect, 1e-14);
  EXPECT_NEAR(r.value()[1], std::log(1.0 + std::exp(-1.0) + std::exp(0.5)), 1e-14);
}

TEST(Ops, LogSumExpBounds) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 200; ++t) {
    std::size_t n = 1 + rng() % 12;
    auto v = testutil::random_vector(rng, n, -50.0, 50.0);
    Graph g;
    double l = logsumexp(g.constant(Tensor::vector(v))).item();
    double mx = *std::max_element(v.begin(), v.end());
    EXPECT_GE(l, mx);
    EXPECT_LE(l, mx + std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(Ops, NormalizeThreeFour) {
  Graph g;
  Var y = l2_normalize_rows(g.constant(Tensor::matrix({{3.0, 4.0}})));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.6);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.8);
}

TEST(Ops, NormalizeZeroRowNamesRow) {
  Graph g;
  Var m = g.constant(Tensor::matrix({{1.0, 0.0}, {0.0, 0.0}}));
  try {
    l2_normalize_rows(m);
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(Ops, LogOfNonPositiveThrows) {
  Graph g;
  EXPECT_THROW(log(g.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  EXPECT_THROW(log(g.constant(-2.0)), DomainError);
}

TEST(Ops, ShapeMismatchThrows) {
  Graph g;
  Var a = g.constant(Tensor::vector({1, 2}));
  Var b = g.constant(Tensor::vector({1, 2, 3}));
  EXPECT_THROW(a + b, ShapeError);
  Var m = g.constant(Tensor(Shape{2, 3}, 1.0));
  EXPECT_THROW(matmul(m, m), ShapeError);
}

TEST(Ops, ReluGradientAtZeroIsZero) {
  Graph g;
  Var x = g.parameter(Tensor::vector({-1.0, 0.0, 2.0}));
  g.backward(sum(relu(x)));
  Tensor gx = g.grad(x);
  EXPECT_EQ(gx[0], 0.0);
  EXPECT_EQ(gx[1], 0.0);
  EXPECT_EQ(gx[2], 1.0);
}

TEST(Backward, NonScalarRootThrows) {
  Graph g;
  Var x = g.parameter(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(g.backward(x * 2.0), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Graph g;
  Var x = g.parameter(Tensor(Shape{3, 2}, 0.7));
  g.backward(sum(x));
  EXPECT_EQ(g.grad(x), Tensor(Shape{3, 2}, 1.0));
}

TEST(Backward, LogSumExpGivesSoftmax) {
  std::vector<double> v{0.3, -1.2, 2.5, 0.0};
  Graph g;
  Var x = g.parameter(Tensor::vector(v));
  g.backward(logsumexp(x));
  Tensor gx = g.grad(x);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(gx[i], softmax_at(v, i), 1e-15);
}

TEST(Backward, RootGradientIsOne) {
  Graph g;
  Var x = g.parameter(Tensor::vector({1.0, 2.0}));
  Var y = sum(x * x);
  g.backward(y);
  EXPECT_EQ(g.grad(y).item(), 1.0);
}

TEST(Backward, FanOutAccumulatesAndVisitsOnce) {
  Graph g;
  Var x = g.parameter(Tensor::vector({1.5, -2.0}));
  Var y = x * x;           // reused three times below
  Var z = sum(y + y * y);  // y: 2 uses, y*y: 1
  g.backward(z);
  Tensor gx = g.grad(x);
  // d/dx (x^2 + x^4) = 2x + 4x^3
  EXPECT_DOUBLE_EQ(gx[0], 2 * 1.5 + 4 * 1.5 * 1.5 * 1.5);
  EXPECT_DOUBLE_EQ(gx[1], 2 * -2.0 + 4 * -8.0);
  // x*x, y*y, y + y*y, sum
  EXPECT_EQ(g.last_backward_visits(), 4u);
}

TEST(Backward, UnreachedNodesHaveZeroGradient) {
  Graph g;
  Var x = g.parameter(Tensor::vector({1.0}));
  Var w = g.parameter(Tensor::vector({2.0, 3.0}));
  g.backward(sum(x));
  EXPECT_EQ(g.grad(w), Tensor(Shape{2}, 0.0));
}

TEST(Backward, NonFiniteForwardThrows) {
  Graph g;
  Var x = g.parameter(Tensor::vector({800.0}));
  EXPECT_THROW(exp(x), NonFiniteError);
}

TEST(Backward, ForwardIsBitReproducible) {
  std::mt19937_64 rng(3);
  Tensor a = testutil::random_matrix(rng, 6, 5);
  auto run = [&] {
    Graph g;
    Var x = g.parameter(a);
    Var y = logsumexp_rows(matmul(x, transpose(x)));
    Var z = sum(tanh(y));
    g.backward(z);
    return std::make_pair(z.item(), g.grad(x));
  };
  auto r1 = run();
  auto r2 = run();
  EXPECT_EQ(r1.first, r2.first);
  EXPECT_EQ(r1.second, r2.second);
}

TEST(GradCheck, SumOfSquaresIsTight) {
  std::mt19937_64 rng(11);
  Tensor x = testutil::random_matrix(rng, 4, 3);
  double err = grad_check([](Graph&, Var v) { return sum(v * v); }, x);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, ThrowsOnNonFinitePerturbation) {
  Tensor x = Tensor::vector({1e-7});
  EXPECT_THROW(grad_check([](Graph&, Var v) { return sum(log(v)); }, x, 1e-6), std::exception);
}

// One case per registered op, each checked on 20 random inputs.
struct OpCase {
  const char* name;
  std::size_t rows;
  std::size_t cols;
  ScalarFn fn;
};

class OpGradients : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  const OpCase& c = GetParam();
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = testutil::random_matrix(rng, c.rows, c.cols);
    double err = grad_check(c.fn, x);
    EXPECT_LT(err, 1e-4) << c.name << " trial " << trial;
  }
}

namespace {

Tensor fixed(std::size_t r, std::size_t c, double seed) {
  Tensor t(Shape{r, c});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::sin(seed + 1.3 * static_cast<double>(i));
  return t;
}

std::vector<OpCase> op_cases() {
  return {
      {"matmul", 3, 4,
       [](Graph& g, Var x) { return sum(tanh(matmul(x, g.constant(fixed(4, 2, 0.5))))); }},
      {"matmul_self", 3, 4, [](Graph&, Var x) { return sum(matmul(x, transpose(x))); }},
      {"add_sub", 2, 3,
       [](Graph& g, Var x) { return sum(tanh((x + g.constant(fixed(2, 3, 1))) - x * 0.3)); }},
      {"mul", 2, 3, [](Graph& g, Var x) { return sum(x * x * g.constant(fixed(2, 3, 2))); }},
      {"div", 2, 3,
       [](Graph& g, Var x) { return sum(x / add_const(g.constant(fixed(2, 3, 2)), 3.0)); }},
      {"div_denominator", 2, 3, [](Graph&, Var x) { return sum(1.0 / add_const(x * x, 1.0)); }},
      {"scale", 2, 2, [](Graph&, Var x) { return sum(tanh(scale(x, -2.5))); }},
      {"add_row", 3, 2,
       [](Graph& g, Var x) {
         return sum(tanh(add_row(x, g.constant(Tensor::vector({0.3, -0.2})))));
       }},
      {"add_row_bias", 1, 4,
       [](Graph& g, Var x) {
         return sum(tanh(add_row(g.constant(fixed(3, 4, 0.1)), reshape(x, Shape{4}))));
       }},
      {"exp", 2, 3, [](Graph&, Var x) { return sum(exp(x)); }},
      {"log", 2, 3, [](Graph&, Var x) { return sum(log(add_const(x * x, 0.5))); }},
      {"relu", 3, 3, [](Graph&, Var x) { return sum(relu(x) * x); }},
      {"tanh", 3, 3, [](Graph&, Var x) { return sum(tanh(x)); }},
      {"clamp_min", 3, 3, [](Graph&, Var x) { return sum(clamp_min(x, 0.05) * x); }},
      {"mean", 3, 3, [](Graph&, Var x) { return mean(x * x); }},
      {"row_sum", 3, 4, [](Graph&, Var x) { return sum(tanh(row_sum(x))); }},
      {"row_mean", 3, 4, [](Graph&, Var x) { return sum(tanh(row_mean(x))); }},
      {"logsumexp_rows", 3, 4, [](Graph&, Var x) { return sum(logsumexp_rows(x)); }},
      {"logsumexp_extra", 3, 4,
       [](Graph&, Var x) { return sum(logsumexp_rows(x, row_mean(x) * 2.0)); }},
      {"logsumexp_scalar_extra", 1, 5,
       [](Graph&, Var x) {
         Var v = reshape(x, Shape{5});
         return logsumexp_rows(v, sum(v));
       }},
      {"l2_normalize", 4, 3,
       [](Graph& g, Var x) { return sum(l2_normalize_rows(x) * g.constant(fixed(4, 3, 3))); }},
      {"pairwise_sq_dists", 4, 3,
       [](Graph& g, Var x) { return sum(pairwise_sq_dists(x) * g.constant(fixed(4, 4, 4))); }},
      {"sq_dist_rows", 4, 3, [](Graph&, Var x) { return sq_dist_rows(x, 0, 2); }},
      {"gather", 1, 6,
       [](Graph&, Var x) { return sum(tanh(gather(reshape(x, Shape{6}), {0, 3, 3, 5}))); }},
      {"gather_entries", 4, 4, [](Graph&, Var x) { return sum(exp(gather_entries(x, 2, {0, 1, 3}))); }},
      {"gather_row", 3, 4, [](Graph&, Var x) { return sum(exp(gather_row(x, 1))); }},
      {"gather_rows", 4, 2, [](Graph&, Var x) { return sum(tanh(gather_rows(x, {3, 0, 3}))); }},
      {"concat", 1, 4,
       [](Graph&, Var x) {
         Var v = reshape(x, Shape{4});
         return logsumexp(concat(v, v * 2.0));
       }},
      {"stack", 2, 3,
       [](Graph&, Var x) {
         std::vector<Var> parts{sum(x), mean(x * x), logsumexp(reshape(x, Shape{6}))};
         return sum(tanh(stack(parts)));
       }},
      {"outer_diff", 1, 5,
       [](Graph&, Var x) {
         Var v = reshape(x, Shape{5});
         Var u = gather(v, {0, 1});
         Var w = gather(v, {2, 3, 4});
         return sum(tanh(outer_diff(u, w)));
       }},
      {"reshape_transpose", 2, 3,
       [](Graph&, Var x) { return sum(tanh(transpose(reshape(x, Shape{3, 2})) * 1.5)); }},
  };
}

}  // namespace

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradients, ::testing::ValuesIn(op_cases()),
                         [](const ::testing::TestParamInfo<OpCase>& info) {
                           return std::string(info.param.name);
                         });
