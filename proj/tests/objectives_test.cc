#include <gtest/gtest.h>

#include <cmath>

#include "seqdm/errors.h"
#include "seqdm/objectives.h"
#include "seqdm/oracle.h"
#include "seqdm/verify.h"

namespace seqdm {
namespace {

TokenSeq seq(std::vector<int> ids) { return TokenSeq{std::move(ids), true}; }

class TinyDmTest : public ::testing::Test {
 protected:
  void SetUp() override { dm_ = make_tiny_dm(3); }
  std::unique_ptr<TinyDm> dm_;
};

TEST_F(TinyDmTest, MarginalOfOneSampleIsTheModelProbability) {
  const std::vector<Source> xs = {seq({3})};
  const auto m = estimate_marginal(dm_->model, dm_->params.beta, seq({4}), xs);
  EXPECT_EQ(m.log_value, dm_->model.log_prob(dm_->params.beta, xs[0], seq({4})));
  EXPECT_FALSE(m.floored);
}

TEST_F(TinyDmTest, MarginalOfIdenticalSamples) {
  const double lp = dm_->model.log_prob(dm_->params.beta, seq({3, 4}), seq({4, 3}));
  for (int n : {2, 5, 50}) {
    const std::vector<Source> xs(n, seq({3, 4}));
    const auto m = estimate_marginal(dm_->model, dm_->params.beta, seq({4, 3}), xs);
    EXPECT_NEAR(m.log_value, lp, 1e-14) << n;
  }
}

TEST(Marginal, EmptyAndFloor) {
  EXPECT_THROW(marginal_from_log_probs({}), UsageError);
  const std::vector<double> tiny = {-100.0, -200.0};
  const auto m = marginal_from_log_probs(tiny);
  EXPECT_TRUE(m.floored);
  EXPECT_EQ(m.log_value, kMarginalLogFloor);
  EXPECT_NEAR(m.value, 1e-30, 1e-44);
}

TEST_F(TinyDmTest, MarginalConvergesToEnumeration) {
  const DmOracle oracle(dm_->models(), dm_->pair, dm_->space);
  RngStream rng(8);
  constexpr int kN = 2000;
  std::vector<Source> xs;
  double mean = 0.0, sq = 0.0;
  for (int j = 0; j < kN; ++j) {
    xs.push_back(dm_->source.sample(dm_->params.theta, dm_->pair.source, rng).value);
    const double p = std::exp(dm_->model.log_prob(dm_->params.beta, xs.back(), dm_->pair.target));
    mean += p / kN;
    sq += p * p / kN;
  }
  const double se = std::sqrt((sq - mean * mean) / (kN - 1));
  const auto est = estimate_marginal(dm_->model, dm_->params.beta, dm_->pair.target, xs);
  EXPECT_NEAR(est.value, mean, 1e-15);
  const auto exact = oracle.marginal(dm_->params.theta, dm_->params.beta, dm_->pair.target);
  EXPECT_EQ(exact.residual, 0.0);
  EXPECT_LE(std::abs(est.value - exact.value), 3.0 * se);
}

TEST_F(TinyDmTest, SamplesAreDeterministicPerIndex) {
  const DmModels models = dm_->models();
  const auto a = draw_samples(models, dm_->params, dm_->pair, 5, RngStream(4));
  const auto b = draw_samples(models, dm_->params, dm_->pair, 8, RngStream(4));
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(a.xs[k], b.xs[k]);
    EXPECT_EQ(a.ys[k], b.ys[k]);
  }
}

TEST_F(TinyDmTest, MatchNeedsTwoSamples) {
  EXPECT_THROW(match_grads(dm_->models(), dm_->params, dm_->pair, {.n = 1}, RngStream(1)),
               UsageError);
}

TEST_F(TinyDmTest, ThreadCountDoesNotChangeEstimates) {
  const auto a = match_grads(dm_->models(), dm_->params, dm_->pair, {.n = 12, .threads = 1}, RngStream(5));
  const auto b = match_grads(dm_->models(), dm_->params, dm_->pair, {.n = 12, .threads = 3}, RngStream(5));
  EXPECT_EQ(a.grads_gamma, b.grads_gamma);
  EXPECT_EQ(a.grads_theta, b.grads_theta);
  EXPECT_EQ(a.grads_beta, b.grads_beta);
  EXPECT_EQ(a.kl_estimate, b.kl_estimate);
}

TEST_F(TinyDmTest, DeduplicationMatchesNaiveSums) {
  // Estimator assembled by hand, one term per sample index.
  const DmModels models = dm_->models();
  const DmSamples s = draw_samples(models, dm_->params, dm_->pair, 10, RngStream(9));
  const auto r = match_grads_from(models, dm_->params, dm_->pair, s, {.n = 10});
  const int n = 10;
  std::vector<double> lt(n), lg(n), lphat(n);
  std::vector<std::vector<double>> l(n, std::vector<double>(n));
  for (int j = 0; j < n; ++j) lt[j] = dm_->source.log_prob(dm_->params.theta, dm_->pair.source, s.xs[j]);
  for (int i = 0; i < n; ++i) {
    lg[i] = dm_->target.log_prob(dm_->params.gamma, Source(dm_->pair.target), Source(s.ys[i]));
    for (int j = 0; j < n; ++j) l[i][j] = dm_->model.log_prob(dm_->params.beta, s.xs[j], s.ys[i]);
    lphat[i] = marginal_from_log_probs(l[i]).log_value;
  }
  ParamStore gg = dm_->params.gamma.zeros_like(), gt = dm_->params.theta.zeros_like(),
             gb = dm_->params.beta.zeros_like();
  for (int i = 0; i < n; ++i) {
    gg.axpy((lg[i] - lphat[i]) / n,
            dm_->target.log_prob_grad(dm_->params.gamma, Source(dm_->pair.target), Source(s.ys[i])).grads);
  }
  for (int j = 0; j < n; ++j) {
    double wsum = 0.0;
    for (int i = 0; i < n; ++i) wsum += std::exp(l[i][j] - lphat[i]);
    gt.axpy((-wsum / n + lt[j]) / n,
            dm_->source.log_prob_grad(dm_->params.theta, dm_->pair.source, s.xs[j]).grads);
    for (int i = 0; i < n; ++i) {
      gb.axpy(-std::exp(l[i][j] - lphat[i]) / (n * n),
              dm_->model.log_prob_grad(dm_->params.beta, s.xs[j], s.ys[i]).grads);
    }
  }
  auto max_diff = [](const ParamStore& a, const ParamStore& b) {
    ParamStore d = a;
    d.axpy(-1.0, b);
    double m = 0.0;
    for (const auto& [name, t] : d) {
      for (double v : t.data()) m = std::max(m, std::abs(v));
    }
    return m;
  };
  EXPECT_LE(max_diff(r.grads_gamma, gg), 1e-12);
  EXPECT_LE(max_diff(r.grads_theta, gt), 1e-12);
  EXPECT_LE(max_diff(r.grads_beta, gb), 1e-12);
}

TEST(Degeneration, PointMassesGiveTheMleGradient) {
  auto dm = make_tiny_dm(11);
  const PointMassAugmenter delta;
  const DmModels models{&delta, &delta, &dm->model};
  DmParams params{{}, {}, dm->params.beta};
  const ValueAndGrad mle = mle_loss_grad(dm->model, params.beta, std::span(&dm->pair, 1));
  for (int n : {2, 7, 50}) {
    const auto r = match_grads(models, params, dm->pair, {.n = n}, RngStream(n));
    EXPECT_EQ(r.floor_hits, 0);
    double worst = 0.0;
    for (std::size_t e = 0; e < mle.grads.size(); ++e) {
      const auto a = r.grads_beta.entry(e).second.data();
      const auto b = mle.grads.entry(e).second.data();
      for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
    }
    EXPECT_LE(worst, 1e-12) << n;
    EXPECT_NEAR(r.kl_estimate, -dm->model.log_prob(params.beta, dm->pair.source, dm->pair.target), 1e-12);
    EXPECT_EQ(r.entropy_estimate, 0.0);
  }
}

// The three estimators average to the enumerated gradient, with tighter
// bands as N grows.
TEST(Unbiasedness, MatchGradsAgreeWithOracleAcrossN) {
  auto dm = make_tiny_dm(2);
  const DmOracle oracle(dm->models(), dm->pair, dm->space);
  const ObjectiveGrads exact = oracle.loss_grads(dm->params, 1e-5);
  double prev_se[3] = {INFINITY, INFINITY, INFINITY};
  for (int n : {10, 50, 200}) {
    GradMoments mg, mt, mb;
    for (int d = 0; d < 200; ++d) {
      const auto r = match_grads(dm->models(), dm->params, dm->pair, {.n = n}, RngStream(100 + d));
      mg.add(r.grads_gamma);
      mt.add(r.grads_theta);
      mb.add(r.grads_beta);
    }
    const GradMoments::Coverage c[3] = {mg.coverage(exact.gamma), mt.coverage(exact.theta),
                                        mb.coverage(exact.beta)};
    for (int k = 0; k < 3; ++k) {
      EXPECT_GE(c[k].fraction, 0.95) << "group " << k << " N=" << n;
      EXPECT_LT(c[k].mean_se, prev_se[k]) << "group " << k << " N=" << n;
      prev_se[k] = c[k].mean_se;
    }
  }
}

TEST(Unbiasedness, EntropyAndKlEstimates) {
  auto dm = make_tiny_dm(4);
  const DmOracle oracle(dm->models(), dm->pair, dm->space);
  double h_sum = 0.0, h_sq = 0.0;
  constexpr int kDraws = 300;
  for (int d = 0; d < kDraws; ++d) {
    const auto r = match_grads(dm->models(), dm->params, dm->pair, {.n = 20}, RngStream(d));
    h_sum += r.entropy_estimate;
    h_sq += r.entropy_estimate * r.entropy_estimate;
  }
  const double mean = h_sum / kDraws;
  const double se = std::sqrt((h_sq / kDraws - mean * mean) / (kDraws - 1));
  EXPECT_GE(mean, 0.0);
  EXPECT_LE(std::abs(mean - oracle.entropy(dm->params.theta)), 3.0 * se);
}

TEST(Stationarity, TargetTiedToMarginalHasZeroExpectedGradient) {
  auto dm = make_tiny_dm(6);
  const DmOracle base(dm->models(), dm->pair, dm->space);
  const TabularAugmenter tab(dm->space);
  const DmModels models{&dm->source, &tab, &dm->model};
  DmParams params = dm->params;
  params.gamma = TabularAugmenter::params_from_probs(base.marginals(params.theta, params.beta));
  const DmOracle oracle(models, dm->pair, dm->space);
  EXPECT_LE(std::abs(oracle.kl(params)), 1e-12);
  const ObjectiveGrads exact = oracle.loss_grads(params, 1e-5);
  double norm = 0.0;
  for (const auto& [name, t] : exact.gamma) {
    for (double v : t.data()) norm += v * v;
  }
  EXPECT_LE(std::sqrt(norm), 1e-6);

  GradMoments mg;
  for (int d = 0; d < 200; ++d) {
    mg.add(match_grads(models, params, dm->pair, {.n = 50}, RngStream(300 + d)).grads_gamma);
  }
  EXPECT_GE(mg.coverage(params.gamma.zeros_like()).fraction, 0.95);
}

TEST_F(TinyDmTest, FidelityConstantRewardWithBaselineIsExactlyZero) {
  FidelityOptions fo;
  fo.n = 6;
  fo.source_reward = [](const Source&, const Source&) { return 0.3; };
  fo.target_reward = fo.source_reward;
  const auto r = fidelity_grads(dm_->models(), dm_->params, dm_->pair, fo, RngStream(2));
  EXPECT_EQ(r.grads_gamma, dm_->params.gamma.zeros_like());
  EXPECT_EQ(r.grads_theta, dm_->params.theta.zeros_like());
  EXPECT_EQ(r.mean_reward_src, 0.3);
}

TEST_F(TinyDmTest, FidelityConstantRewardWithoutBaselineHasZeroMean) {
  FidelityOptions fo;
  fo.n = 10;
  fo.baseline = false;
  fo.source_reward = [](const Source&, const Source&) { return 0.3; };
  fo.target_reward = fo.source_reward;
  GradMoments mg, mt;
  for (int d = 0; d < 200; ++d) {
    const auto r = fidelity_grads(dm_->models(), dm_->params, dm_->pair, fo, RngStream(d));
    mg.add(r.grads_gamma);
    mt.add(r.grads_theta);
  }
  EXPECT_GE(mg.coverage(dm_->params.gamma.zeros_like()).fraction, 0.95);
  EXPECT_GE(mt.coverage(dm_->params.theta.zeros_like()).fraction, 0.95);
}

TEST_F(TinyDmTest, FidelityPointMassSeesOnlyThePrototype) {
  const PointMassAugmenter delta;
  const DmModels models{&delta, &delta, &dm_->model};
  const DmParams params{{}, {}, dm_->params.beta};
  FidelityOptions fo;
  fo.n = 4;
  const auto r = fidelity_grads(models, params, dm_->pair, fo, RngStream(1));
  EXPECT_EQ(r.mean_reward_tgt, bleu4(dm_->pair.target, dm_->pair.target));
  EXPECT_TRUE(r.grads_gamma.empty());
}

TEST_F(TinyDmTest, FidelityGradientRaisesExpectedReward) {
  // A descent step on -E[R] must raise the exact expected reward.
  const RewardFn bleu{RewardKind::kBleu4};
  FidelityOptions fo;
  fo.n = 200;
  fo.source_reward = bleu;
  fo.target_reward = bleu;
  const auto r = fidelity_grads(dm_->models(), dm_->params, dm_->pair, fo, RngStream(3));
  auto expected = [&](const ParamStore& gamma) {
    double e = 0.0;
    for (const auto& y : dm_->space.seqs()) {
      if (!dm_->target.in_support(Source(dm_->pair.target), Source(y))) continue;
      e += std::exp(dm_->target.log_prob(gamma, Source(dm_->pair.target), Source(y))) *
           bleu4(y, dm_->pair.target);
    }
    return e;
  };
  EXPECT_GT(expected(sgd_step(dm_->params.gamma, r.grads_gamma, 0.05)), expected(dm_->params.gamma));
}

TEST_F(TinyDmTest, AlternationLeavesTheOtherGroupUntouched) {
  CombinedConfig cfg;
  cfg.n = 4;
  const std::vector<Example> batch = {dm_->pair, {seq({4}), seq({3})}};
  cfg.group = UpdateGroup::kAugmenters;
  const auto a = combined_step(dm_->models(), dm_->params, batch, cfg, RngStream(1));
  EXPECT_EQ(a.params.beta, dm_->params.beta);
  EXPECT_NE(a.params.theta, dm_->params.theta);
  EXPECT_NE(a.params.gamma, dm_->params.gamma);
  cfg.group = UpdateGroup::kSeqModel;
  const auto b = combined_step(dm_->models(), dm_->params, batch, cfg, RngStream(1));
  EXPECT_EQ(b.params.theta, dm_->params.theta);
  EXPECT_EQ(b.params.gamma, dm_->params.gamma);
  EXPECT_NE(b.params.beta, dm_->params.beta);
  EXPECT_EQ(a.diag.kl, b.diag.kl);  // same draws for both branches
}

TEST_F(TinyDmTest, CombinedStepIsThreadIndependent) {
  CombinedConfig cfg;
  cfg.n = 4;
  const std::vector<Example> batch = {dm_->pair, {seq({4}), seq({3})}, {seq({3, 3}), seq({4})}};
  cfg.threads = 1;
  const auto a = combined_step(dm_->models(), dm_->params, batch, cfg, RngStream(1));
  cfg.threads = 3;
  const auto b = combined_step(dm_->models(), dm_->params, batch, cfg, RngStream(1));
  EXPECT_EQ(a.params, b.params);
}

TEST(CombinedStep, AlternatingTrainingReducesTheKlEstimate) {
  // 20 pairs of a length-<=2 copy task over two content tokens.
  auto dm = make_tiny_dm(5, 0.3);
  std::vector<Example> data;
  RngStream rng(12);
  for (int k = 0; k < 20; ++k) {
    TokenSeq s;
    const int len = 1 + static_cast<int>(rng.below(2));
    for (int t = 0; t < len; ++t) s.ids.push_back(3 + static_cast<int>(rng.below(2)));
    data.push_back({s, s});
  }
  CombinedConfig cfg;
  cfg.n = 4;
  cfg.eta = 0.1;
  cfg.clip_norm = 1.0;
  DmParams params = dm->params;
  std::vector<double> kl;
  for (int step = 0; step < 500; ++step) {
    cfg.group = step % 2 == 0 ? UpdateGroup::kAugmenters : UpdateGroup::kSeqModel;
    const std::span<const Example> batch(data.data() + (step / 2 * 4) % 20, 4);
    const auto r = combined_step(dm->models(), params, batch, cfg, RngStream(1000 + step));
    params = r.params;
    kl.push_back(r.diag.kl);
  }
  auto window = [&](std::size_t begin) {
    double s = 0.0;
    for (std::size_t k = begin; k < begin + 50; ++k) s += kl[k];
    return s / 50.0;
  };
  EXPECT_LT(window(kl.size() - 50), window(0));
}

}  // namespace
}  // namespace seqdm
