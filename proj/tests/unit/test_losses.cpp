#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "epsfair/grad_check.hpp"
#include "epsfair/losses.hpp"
#include "support/random_batch.hpp"
#include "support/reference.hpp"

using namespace epsfair;

namespace {

constexpr LossVariant kAllVariants[] = {
    LossVariant::kEpsInfoNce,     LossVariant::kEpsSupInfoNceA, LossVariant::kEpsSupInfoNceB,
    LossVariant::kEpsSupInfoNceC, LossVariant::kEpsSupInfoNceD, LossVariant::kEpsSupCon,
    LossVariant::kLSupIn};

// Evaluates one anchor's loss from explicit similarity lists through the
// graph kernels.
double anchor_loss(LossVariant v, const std::vector<double>& pos, const std::vector<double>& neg,
                   double eps) {
  Graph g;
  return anchor::evaluate(v, g.constant(Tensor::vector(pos)), g.constant(Tensor::vector(neg)), eps)
      .item();
}

double max_form_of(LossVariant v, const std::vector<double>& pos, const std::vector<double>& neg,
                   double eps) {
  switch (v) {
    case LossVariant::kEpsSupInfoNceA: return max_form::supinfonce_a(pos, neg, eps);
    case LossVariant::kEpsSupInfoNceB: return max_form::supinfonce_b(pos, neg, eps);
    case LossVariant::kEpsSupInfoNceC: return max_form::supinfonce_c(pos, neg, eps);
    case LossVariant::kEpsSupInfoNceD: return max_form::supinfonce_d(pos, neg, eps);
    case LossVariant::kEpsSupCon: return max_form::supcon(pos, neg, eps) - eps;
    case LossVariant::kLSupIn: return max_form::sup_in(pos, neg);
    case LossVariant::kEpsInfoNce: {
      double s = 0.0;
      for (double p : pos) s += max_form::eps_infonce(p, neg, eps);
      return s / static_cast<double>(pos.size());
    }
  }
  return 0.0;
}

}  // namespace

TEST(EpsInfoNce, UniformSimilaritiesGiveLogNPlusOne) {
  std::vector<double> neg(7, 2.5);
  EXPECT_NEAR(eps_infonce(2.5, neg, 0.0), std::log(8.0), 1e-14);
}

TEST(EpsInfoNce, PerfectSeparationTendsToZero) {
  std::vector<double> neg{-1e4, -2e4};
  EXPECT_NEAR(eps_infonce(10.0, neg, 0.0), 0.0, 1e-12);
}

TEST(EpsInfoNce, MatchesMaxForm) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 100; ++t) {
    auto neg = testutil::random_vector(rng, 1 + rng() % 10, -10, 10);
    double pos = testutil::random_vector(rng, 1, -10, 10)[0];
    double eps = testutil::random_vector(rng, 1, 0, 5)[0];
    double direct = std::log(std::exp(-eps) + [&] {
      double s = 0.0;
      for (double n : neg) s += std::exp(n - pos);
      return s;
    }());
    EXPECT_NEAR(eps_infonce(pos, neg, eps), direct, 1e-9);
    EXPECT_NEAR(eps_infonce(pos, neg, eps), max_form::eps_infonce(pos, neg, eps), 1e-9);
  }
}

TEST(EpsInfoNce, GraphAndScalarAgree) {
  Graph g;
  std::vector<double> neg{0.3, -1.0, 4.0};
  Var v = eps_infonce(g.constant(1.5), g.constant(Tensor::vector(neg)), 0.7);
  EXPECT_NEAR(v.item(), eps_infonce(1.5, neg, 0.7), 1e-14);
}

TEST(EpsInfoNce, RequiresNegatives) {
  EXPECT_THROW(eps_infonce(1.0, std::vector<double>{}, 0.0), std::invalid_argument);
}

TEST(SupInfoNce, SinglePositiveCollapse) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 20; ++t) {
    auto neg = testutil::random_vector(rng, 5, -8, 8);
    auto pos = testutil::random_vector(rng, 1, -8, 8);
    double eps = 0.5 * t;
    double expect = eps_infonce(pos[0], neg, eps);
    EXPECT_NEAR(anchor_loss(LossVariant::kEpsSupInfoNceA, pos, neg, eps), expect, 1e-10);
    EXPECT_NEAR(anchor_loss(LossVariant::kEpsSupInfoNceC, pos, neg, eps), expect, 1e-10);
    // b and d keep one term per negative, so with P = 1 they agree with each
    // other and reach eps-InfoNCE only when N = 1 as well.
    double per_neg = 0.0;
    for (double n : neg) per_neg += eps_infonce(pos[0], std::vector<double>{n}, eps);
    EXPECT_NEAR(anchor_loss(LossVariant::kEpsSupInfoNceB, pos, neg, eps), per_neg, 1e-10);
    EXPECT_NEAR(anchor_loss(LossVariant::kEpsSupInfoNceD, pos, neg, eps), per_neg, 1e-10);
    std::vector<double> one_neg{neg[0]};
    for (auto v : {LossVariant::kEpsSupInfoNceA, LossVariant::kEpsSupInfoNceB,
                   LossVariant::kEpsSupInfoNceC, LossVariant::kEpsSupInfoNceD}) {
      EXPECT_NEAR(anchor_loss(v, pos, one_neg, eps), eps_infonce(pos[0], one_neg, eps), 1e-10);
    }
  }
}

TEST(SupInfoNce, VariantCAtZeroMarginIsPerPositiveInfoNce) {
  std::vector<double> pos{3.0, 1.0, -0.5};
  std::vector<double> neg{0.2, 2.0, -4.0, 1.1};
  double expect = 0.0;
  for (double p : pos) expect += reference::infonce(p, neg);
  EXPECT_NEAR(anchor_loss(LossVariant::kEpsSupInfoNceC, pos, neg, 0.0), expect, 1e-12);
}

TEST(SupInfoNce, EveryVariantMatchesItsMaxForm) {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 100; ++t) {
    auto pos = testutil::random_vector(rng, 1 + rng() % 6, -10, 10);
    auto neg = testutil::random_vector(rng, 1 + rng() % 8, -10, 10);
    double eps = testutil::random_vector(rng, 1, 0, 20)[0];
    for (LossVariant v : kAllVariants) {
      EXPECT_NEAR(anchor_loss(v, pos, neg, eps), max_form_of(v, pos, neg, eps), 1e-9)
          << to_string(v) << " trial " << t;
    }
  }
}

TEST(SupCon, ZeroMarginMatchesSupConOut) {
  std::mt19937_64 rng(24);
  for (int t = 0; t < 50; ++t) {
    EmbeddingBatch batch = testutil::random_batch(rng, 12, 6, 3, 2);
    SimilarityView view = build_similarity_view(batch);
    EXPECT_NEAR(eps_supcon(view, 0.0), reference::supcon_out(batch.embeddings, batch.labels, 0.1),
                1e-12);
  }
}

TEST(SupCon, MaxFormExceedsLossByEpsilon) {
  std::mt19937_64 rng(25);
  for (int t = 0; t < 100; ++t) {
    auto pos = testutil::random_vector(rng, 1 + rng() % 6, -10, 10);
    auto neg = testutil::random_vector(rng, 1 + rng() % 6, -10, 10);
    double eps = testutil::random_vector(rng, 1, 0, 20)[0];
    double loss = anchor_loss(LossVariant::kEpsSupCon, pos, neg, eps);
    EXPECT_NEAR(max_form::supcon(pos, neg, eps) - loss, eps, 1e-9);
  }
}

TEST(SupCon, DenominatorSupersetWithEqualPositives) {
  std::vector<double> neg{1.0, -2.0, 0.5};
  for (std::size_t p : {1u, 2u, 5u}) {
    std::vector<double> pos(p, 3.0);
    double supcon = anchor_loss(LossVariant::kEpsSupCon, pos, neg, 0.4);
    double per_positive = anchor_loss(LossVariant::kEpsInfoNce, pos, neg, 0.4);
    EXPECT_GE(supcon, per_positive - 1e-12);
    if (p == 1) {
      EXPECT_GE(supcon, anchor_loss(LossVariant::kEpsSupInfoNceC, pos, neg, 0.4) - 1e-12);
    }
  }
}

TEST(SupIn, SeparationLimit) {
  std::vector<double> pos{1.0, 2.0};
  std::vector<double> neg{-1e4, -1e4};
  EXPECT_NEAR(anchor_loss(LossVariant::kLSupIn, pos, neg, 0.0), 0.0, 1e-12);
}

TEST(SupIn, OneDominantPositiveSuffices) {
  // one positive far above every negative, the rest well below them
  std::vector<double> pos{10.0, -8.0, -9.0, -7.5};
  std::vector<double> neg{-2.0, -1.0, -3.0, 0.0};
  double sup_in = anchor_loss(LossVariant::kLSupIn, pos, neg, 0.0);
  double supinfo = anchor_loss(LossVariant::kEpsSupInfoNceC, pos, neg, 0.0);
  EXPECT_LT(sup_in, 1e-3);
  EXPECT_GT(supinfo, 10.0);
}

TEST(EstimatorOrdering, KnownValues) {
  EstimatorPair e = estimator_ordering_check(0.0, std::vector<double>{0.0});
  EXPECT_NEAR(e.infonce, -std::log(2.0), 1e-15);
  EXPECT_NEAR(e.infol1o, 0.0, 1e-15);
}

TEST(EstimatorOrdering, NeverViolated) {
  std::mt19937_64 rng(26);
  for (int t = 0; t < 1000; ++t) {
    auto neg = testutil::random_vector(rng, 1 + rng() % 10, -10, 10);
    double pos = testutil::random_vector(rng, 1, -10, 10)[0];
    EstimatorPair e = estimator_ordering_check(pos, neg);
    EXPECT_LE(e.infonce, e.infol1o);
  }
}

TEST(EstimatorOrdering, MarginSweepInterpolates) {
  std::vector<double> neg{0.5, -1.0, 2.0};
  double pos = 1.2;
  EstimatorPair e = estimator_ordering_check(pos, neg);
  double prev = eps_infonce(pos, neg, 0.0);
  EXPECT_NEAR(prev, -e.infonce, 1e-14);
  for (int k = 1; k <= 200; ++k) {
    double cur = eps_infonce(pos, neg, 20.0 * k / 200.0);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
  EXPECT_NEAR(eps_infonce(pos, neg, 1e3), -e.infol1o, 1e-12);
}

TEST(Invariance, PermutationOfPositivesAndNegatives) {
  std::mt19937_64 rng(27);
  auto pos = testutil::random_vector(rng, 4, -5, 5);
  auto neg = testutil::random_vector(rng, 6, -5, 5);
  for (LossVariant v : kAllVariants) {
    double base = anchor_loss(v, pos, neg, 0.3);
    auto p2 = pos;
    auto n2 = neg;
    std::reverse(p2.begin(), p2.end());
    std::rotate(n2.begin(), n2.begin() + 2, n2.end());
    EXPECT_NEAR(anchor_loss(v, p2, n2, 0.3), base, 1e-12) << to_string(v);
  }
}

TEST(Invariance, TranslationOfAllSimilarities) {
  std::mt19937_64 rng(28);
  auto pos = testutil::random_vector(rng, 3, -5, 5);
  auto neg = testutil::random_vector(rng, 5, -5, 5);
  for (double c : {-7.0, 0.25, 13.0}) {
    auto p2 = pos;
    auto n2 = neg;
    for (double& x : p2) x += c;
    for (double& x : n2) x += c;
    for (LossVariant v : kAllVariants) {
      EXPECT_NEAR(anchor_loss(v, p2, n2, 0.3), anchor_loss(v, pos, neg, 0.3), 1e-12)
          << to_string(v) << " shift " << c;
    }
  }
}

TEST(BatchLoss, SkipsAnchorsWithoutNegativesOrPositives) {
  EmbeddingBatch batch;
  batch.embeddings = Tensor::matrix({{1, 0}, {0, 1}, {0.6, 0.8}, {-1, 0}});
  batch.labels = {0, 0, 1, 2};
  batch.bias_attrs = std::vector<int>{0, 0, 0, 0};
  SimilarityView view = build_similarity_view(batch);
  Graph g;
  LossOutput out = contrastive_loss(constant_view(g, view), LossVariant::kEpsSupInfoNceC, 0.0);
  EXPECT_EQ(out.used_anchors, 2u);
  EXPECT_EQ(out.skipped_anchors, 2u);
  double expect = 0.5 * (eps_infonce(view.sims.at(0, 1), std::vector<double>{view.sims.at(0, 2), view.sims.at(0, 3)}, 0.0) +
                         eps_infonce(view.sims.at(1, 0), std::vector<double>{view.sims.at(1, 2), view.sims.at(1, 3)}, 0.0));
  EXPECT_NEAR(out.value.item(), expect, 1e-12);
}

TEST(BatchLoss, AllAnchorsSkippedThrows) {
  EmbeddingBatch batch;
  batch.embeddings = Tensor::matrix({{1, 0}, {0, 1}, {-1, 0}});
  batch.labels = {0, 1, 2};
  batch.bias_attrs = std::vector<int>{0, 1, 0};
  SimilarityView view = build_similarity_view(batch);
  EXPECT_THROW(eps_supinfonce(view, 0.0), DegenerateBatchError);
}

TEST(LossConfig, DefaultsAndBound) {
  LossConfig cfg;
  EXPECT_EQ(cfg.variant, LossVariant::kEpsSupInfoNceC);
  cfg.epsilon = 25.0;
  EXPECT_TRUE(cfg.margin_exceeds_bound());
  EXPECT_NO_THROW(cfg.validate());
  cfg.epsilon = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  for (LossVariant v : kAllVariants) EXPECT_EQ(parse_loss_variant(to_string(v)), v);
  EXPECT_THROW(parse_loss_variant("supcon"), std::invalid_argument);
}

class LossGradients : public ::testing::TestWithParam<LossVariant> {};

TEST_P(LossGradients, MatchFiniteDifferencesThroughEmbeddings) {
  LossVariant v = GetParam();
  std::mt19937_64 rng(29);
  for (int t = 0; t < 20; ++t) {
    Tensor raw = testutil::random_matrix(rng, 8, 4);
    BatchPartition part = BatchPartition::build(testutil::cyclic_labels(8, 3), std::nullopt);
    double eps = 0.25 * (t % 5);
    ScalarFn f = [&](Graph&, Var x) {
      GraphView gv = graph_view(normalize_embeddings(x), part, 0.1);
      return contrastive_loss(gv, v, eps).value;
    };
    EXPECT_LT(grad_check(f, raw), 1e-4) << to_string(v) << " trial " << t;
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, LossGradients, ::testing::ValuesIn(kAllVariants),
                         [](const ::testing::TestParamInfo<LossVariant>& info) {
                           return std::string(to_string(info.param));
                         });
