#include <gtest/gtest.h>

#include <cmath>

#include "rfr/kca.hpp"
#include "rfr/oracle.hpp"
#include "test_util.hpp"

using namespace rfr;
using rfr::testing::max_abs_diff;
using rfr::testing::random_mask;
using rfr::testing::random_tensor;

namespace {

const std::optional<AttentionState<double>> kNoState;

Var<double> scalar(double v) { return Var<double>(Tensor<double>(Shape{1, 1, 1, 1}, v)); }

double logit(double p) { return std::log(p / (1 - p)); }

}  // namespace

TEST(CosineScoresTest, SelfAndOrthogonalPairs) {
  // Two locations: (1,0) and (0,1), plus a third identical to the first.
  const double v[] = {1, 0, 1, 0, 1, 0};
  const Tensor<double> f(Shape{1, 2, 1, 3}, std::span<const double>(v));
  const auto s = cosine_scores(Var<double>(f)).value();
  ASSERT_EQ(s.shape(), (Shape{1, 3, 1, 3}));
  EXPECT_NEAR(s.at(0, 0, 0, 0), 1.0, 1e-6);
  EXPECT_NEAR(s.at(0, 2, 0, 0), 1.0, 1e-6);
  EXPECT_NEAR(s.at(0, 1, 0, 0), 0.0, 1e-12);
}

TEST(CosineScoresTest, ZeroVectorsStayFinite) {
  const Tensor<double> f(Shape{1, 4, 2, 2});
  const auto s = cosine_scores(Var<double>(f)).value();
  EXPECT_TRUE(all_finite(s));
}

TEST(SmoothSoftmaxTest, DegenerateWindowKeepsSimilarities) {
  const double v[] = {1, 0.5, 0, 0.25};
  const Tensor<double> sim(Shape{1, 2, 1, 2}, std::span<const double>(v));
  const auto scores = smooth_and_softmax(Var<double>(sim), 1).value();
  // Query 0 sees raw similarities (1, 0) across the two keys.
  EXPECT_NEAR(scores.at(0, 0, 0, 0), 0.7311, 1e-4);
  EXPECT_NEAR(scores.at(0, 1, 0, 0), 0.2689, 1e-4);
  const auto plain = softmax_channels(Var<double>(sim)).value();
  EXPECT_TRUE(bit_equal(scores, plain));
}

TEST(SmoothSoftmaxTest, BorderMeanUsesInBoundsCount) {
  Tensor<double> sim(Shape{1, 1, 1, 3});
  sim.at(0, 0, 0, 0) = 3;
  sim.at(0, 0, 0, 1) = 6;
  const auto smoothed = box_mean(Var<double>(sim), 3).value();
  EXPECT_DOUBLE_EQ(smoothed[0], 4.5);
  EXPECT_DOUBLE_EQ(smoothed[1], 3.0);
  EXPECT_DOUBLE_EQ(smoothed[2], 3.0);
}

TEST(BlendScoresTest, RecurrenceZeroReturnsCurrentScores) {
  Rng rng(1);
  const Var<double> cur(random_tensor(Shape{1, 4, 2, 2}, rng, 0, 1));
  const auto out = blend_scores(cur, kNoState, 0, scalar(3.0));
  EXPECT_TRUE(bit_equal(out.value(), cur.value()));
}

TEST(BlendScoresTest, GateArithmetic) {
  const Var<double> cur(Tensor<double>(Shape{1, 1, 1, 1}, 0.6));
  AttentionState<double> st;
  st.prev_score = Var<double>(Tensor<double>(Shape{1, 1, 1, 1}, 0.4));
  st.prev_valid = Tensor<double>(Shape{1, 1, 1, 1}, 1.0);
  const auto out = blend_scores(cur, std::optional<AttentionState<double>>(st), 1, scalar(logit(0.25)));
  EXPECT_NEAR(out.value()[0], 0.45, 1e-6);

  st.prev_valid = Tensor<double>(Shape{1, 1, 1, 1}, 0.0);
  const auto fresh = blend_scores(cur, std::optional<AttentionState<double>>(st), 1, scalar(logit(0.25)));
  EXPECT_EQ(fresh.value()[0], 0.6);
}

TEST(BlendScoresTest, SaturatedGateReproducesCurrentScores) {
  Rng rng(2);
  const Var<double> cur(random_tensor(Shape{1, 4, 2, 2}, rng, 0, 1));
  AttentionState<double> st;
  st.prev_score = Var<double>(random_tensor(Shape{1, 4, 2, 2}, rng, 0, 1));
  st.prev_valid = Tensor<double>(Shape{1, 1, 2, 2}, 1.0);
  const auto out = blend_scores(cur, std::optional<AttentionState<double>>(st), 2, scalar(40));
  EXPECT_LE(max_abs_diff(out.value(), cur.value()), 1e-6);
}

TEST(BlendScoresTest, MissingStateIsAContractError) {
  const Var<double> cur(Tensor<double>(Shape{1, 4, 2, 2}, 0.25));
  EXPECT_THROW(blend_scores(cur, kNoState, 1, scalar(0)), ContractError);
}

TEST(ReconstructTest, OneHotScoreCopiesTheKeyFeature) {
  Rng rng(3);
  const auto f = random_tensor(Shape{1, 3, 2, 2}, rng);
  Tensor<double> score(Shape{1, 4, 2, 2});
  // Query (0,0) attends to key 3 = location (1,1); other queries to themselves.
  score.at(0, 3, 0, 0) = 1;
  score.at(0, 1, 0, 1) = 1;
  score.at(0, 2, 1, 0) = 1;
  score.at(0, 3, 1, 1) = 1;
  const auto r = reconstruct(Var<double>(f), Var<double>(score)).value();
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(r.at(0, c, 0, 0), f.at(0, c, 1, 1));
    EXPECT_DOUBLE_EQ(r.at(0, c, 0, 1), f.at(0, c, 0, 1));
  }
}

TEST(ReconstructTest, UniformScoreGivesSpatialMean) {
  Rng rng(4);
  const auto f = random_tensor(Shape{1, 2, 3, 3}, rng);
  const Tensor<double> score(Shape{1, 9, 3, 3}, 1.0 / 9);
  const auto r = reconstruct(Var<double>(f), Var<double>(score)).value();
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < 9; ++i) mean += f[c * 9 + i] / 9;
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(r[c * 9 + i], mean, 1e-12);
  }
}

TEST(AttentionOracleTest, ScoresAndReconstructionMatchAcrossRecurrences) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = std::size_t(rng.integer(2, 4));
    const std::size_t w = std::size_t(rng.integer(2, 4));
    const auto f0 = random_tensor(Shape{1, 3, h, w}, rng);
    const auto f1 = random_tensor(Shape{1, 3, h, w}, rng);
    const auto valid = random_mask(Shape{1, 1, h, w}, rng, 0.5);
    const double lambda = rng.uniform(-2, 2);

    const auto s0 = smooth_and_softmax(cosine_scores(Var<double>(f0)), 3);
    const auto ref0 = oracle::naive_attention(f0, std::nullopt, 3);
    EXPECT_LE(max_abs_diff(s0.value(), ref0.score), 1e-12);
    EXPECT_LE(max_abs_diff(reconstruct(Var<double>(f0), s0).value(), ref0.reconstructed), 1e-12);

    AttentionState<double> st{s0, valid, 0};
    const auto s1 = blend_scores(smooth_and_softmax(cosine_scores(Var<double>(f1)), 3),
                                 std::optional<AttentionState<double>>(st), 1, scalar(lambda));
    const auto ref1 = oracle::naive_attention(f1, oracle::AttentionInput{ref0.score, valid, lambda}, 3);
    EXPECT_LE(max_abs_diff(s1.value(), ref1.score), 1e-12);
    EXPECT_LE(max_abs_diff(reconstruct(Var<double>(f1), s1).value(), ref1.reconstructed), 1e-12);
  }
}

TEST(AttentionPropertyTest, PermutingLocationsPermutesReconstruction) {
  Rng rng(6);
  const auto f = random_tensor(Shape{1, 3, 1, 5}, rng);
  // Reverse the five locations of a 1x5 map; with s=1 the smoothing is local
  // to each query so the permutation commutes with the whole pipeline.
  Tensor<double> g(f.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t x = 0; x < 5; ++x) g.at(0, c, 0, x) = f.at(0, c, 0, 4 - x);
  auto run = [](const Tensor<double>& t) {
    const auto s = smooth_and_softmax(cosine_scores(Var<double>(t)), 1);
    return reconstruct(Var<double>(t), s).value();
  };
  const auto rf = run(f);
  const auto rg = run(g);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t x = 0; x < 5; ++x) EXPECT_NEAR(rg.at(0, c, 0, x), rf.at(0, c, 0, 4 - x), 1e-12);
}

TEST(KcaForwardTest, StateCarriesScoresAndValidity) {
  ParamStore<double> store;
  register_kca(store, "k", 4, 7);
  EXPECT_EQ(store.entry("k.lambda").value[0], 0.0);
  EXPECT_EQ(kca_fuse_spec("k", 4).param_count() + 1, store.scalar_count());
  Rng rng(8);
  const auto f = random_tensor(Shape{1, 4, 3, 3}, rng);
  const auto v = random_mask(Shape{1, 1, 3, 3}, rng, 0.5);
  const Context<double> ctx{&store, nullptr, BnMode::kEval, {}};
  const auto out = kca_forward(ctx, "k", Var<double>(f), v, kNoState, 0, KcaConfig{});
  EXPECT_EQ(out.features.shape(), f.shape());
  EXPECT_TRUE(bit_equal(out.state.prev_valid, v));
  EXPECT_EQ(out.state.prev_score.shape(), (Shape{1, 9, 3, 3}));
  EXPECT_THROW(kca_forward(ctx, "k", Var<double>(f), v, kNoState, 1, KcaConfig{}), ContractError);
}
