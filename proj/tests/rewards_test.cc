#include <gtest/gtest.h>

#include <cmath>

#include "seqdm/errors.h"
#include "seqdm/rewards.h"
#include "seqdm/rng.h"

namespace seqdm {
namespace {

TokenSeq seq(std::vector<int> ids) { return TokenSeq{std::move(ids), true}; }

TEST(Bleu4, IdenticalIsOne) {
  const TokenSeq s = seq({3, 4, 5, 6, 3});
  EXPECT_DOUBLE_EQ(bleu4(s, s), 1.0);
}

TEST(Bleu4, EmptyCandidateIsZero) { EXPECT_EQ(bleu4(seq({}), seq({3, 4})), 0.0); }

TEST(Bleu4, EmptyReferenceThrows) { EXPECT_THROW(bleu4(seq({3}), seq({})), UsageError); }

TEST(Bleu4, HandCountedOneSubstitution) {
  // Precisions 3/4, (2+1)/(3+1), (1+1)/(2+1), (0+1)/(1+1); brevity penalty 1.
  EXPECT_NEAR(bleu4(seq({3, 4, 5, 6}), seq({3, 4, 5, 7})), 0.65803700647624623, 1e-15);
}

TEST(Bleu4, BrevityPenaltyOnShortCandidate) {
  // All precisions are 1, so only exp(1 - 4/2) remains.
  EXPECT_NEAR(bleu4(seq({3, 4}), seq({3, 4, 5, 6})), std::exp(-1.0), 1e-15);
}

TEST(Bleu4, DisjointVocabulariesNearZero) {
  for (int len = 4; len <= 8; ++len) {
    std::vector<int> a(len, 3), b(len, 4);
    const double v = bleu4(seq(a), seq(b));
    EXPECT_EQ(v, 0.0) << len;  // unigram precision is unsmoothed
    EXPECT_LT(v, 0.05);
  }
}

TEST(Bleu4, BoundedInUnitInterval) {
  RngStream rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<int> a(rng.below(8)), b(1 + rng.below(7));
    for (int& x : a) x = 3 + static_cast<int>(rng.below(4));
    for (int& x : b) x = 3 + static_cast<int>(rng.below(4));
    const double v = bleu4(seq(a), seq(b));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(EditDistance, Examples) {
  EXPECT_EQ(edit_distance(seq({3, 4, 5}), seq({3, 4, 5})), 0);
  EXPECT_EQ(edit_distance(seq({}), seq({3, 4, 5})), 3);
  EXPECT_EQ(edit_distance(seq({3, 4, 5}), seq({3, 9, 5, 8})), 2);
}

TEST(EditDistance, MetricAxioms) {
  RngStream rng(11);
  auto random_seq = [&] {
    std::vector<int> ids(rng.below(7));
    for (int& x : ids) x = 3 + static_cast<int>(rng.below(4));
    return seq(ids);
  };
  for (int trial = 0; trial < 2000; ++trial) {
    const TokenSeq a = random_seq(), b = random_seq(), c = random_seq();
    const int ab = edit_distance(a, b);
    EXPECT_GE(ab, 0);
    EXPECT_EQ(ab == 0, a == b);
    EXPECT_EQ(ab, edit_distance(b, a));
    EXPECT_LE(edit_distance(a, c), ab + edit_distance(b, c));
  }
}

TEST(DeltaBleu, TelescopesToSentenceBleu) {
  RngStream rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int> a(rng.below(9)), b(1 + rng.below(7));
    for (int& x : a) x = 3 + static_cast<int>(rng.below(4));
    for (int& x : b) x = 3 + static_cast<int>(rng.below(4));
    const auto steps = delta_bleu_steps(seq(a), seq(b));
    ASSERT_EQ(steps.size(), a.size());
    double total = 0.0;
    for (double r : steps) total += r;
    EXPECT_NEAR(total, bleu4(seq(a), seq(b)), 1e-15);
  }
}

TEST(DeltaBleu, SelfReferenceSumsToOne) {
  const TokenSeq s = seq({3, 4, 5, 6, 7});
  double total = 0.0;
  for (double r : delta_bleu_steps(s, s)) total += r;
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(DeltaBleu, SingleToken) {
  const auto steps = delta_bleu_steps(seq({4}), seq({3, 4, 5}));
  ASSERT_EQ(steps.size(), 1u);
  EXPECT_EQ(steps[0], bleu4(seq({4}), seq({3, 4, 5})));
}

TEST(DeltaBleu, UnterminatedThrows) {
  EXPECT_THROW(delta_bleu_steps(TokenSeq{{3}, false}, seq({3})), UsageError);
}

TEST(ContSim, Examples) {
  const VecSeq p(2, {1, 2, 3, 4});
  EXPECT_EQ(cont_sim(p, p), 0.0);
  EXPECT_EQ(cont_sim(VecSeq(2, {2, 2, 3, 4}), p), -0.25);
  const VecSeq d1(2, {1.5, 2, 3, 3.5}), d2(2, {2, 2, 3, 3});
  EXPECT_DOUBLE_EQ(cont_sim(d2, p), 4.0 * cont_sim(d1, p));
  EXPECT_THROW(cont_sim(VecSeq(1, {1, 2}), p), ShapeError);
}

TEST(CorpusBleu, GoldIsPerfect) {
  std::vector<TokenSeq> refs = {seq({3, 4, 5, 6}), seq({5, 6, 7, 8, 9})};
  EXPECT_DOUBLE_EQ(corpus_bleu(refs, refs).bleu, 1.0);
}

TEST(CorpusBleu, HandCountedTwoPairs) {
  // Pooled precisions 7/8, 5/6, 3/4, 1/2; hypothesis length 8, reference 9.
  std::vector<TokenSeq> hyps = {seq({3, 4, 5, 6}), seq({8, 9, 10, 11})};
  std::vector<TokenSeq> refs = {seq({3, 4, 5, 7}), seq({8, 9, 10, 11, 12})};
  const CorpusBleu b = corpus_bleu(hyps, refs);
  EXPECT_NEAR(b.bleu, 0.6381572513051155, 1e-15);
  EXPECT_EQ(b.hyp_length, 8);
  EXPECT_EQ(b.ref_length, 9);
}

TEST(CorpusBleu, NoFourGramMatchIsZero) {
  std::vector<TokenSeq> hyps = {seq({3, 4, 5})}, refs = {seq({3, 4, 5})};
  EXPECT_EQ(corpus_bleu(hyps, refs).bleu, 0.0);
}

TEST(RewardFn, Dispatch) {
  const Source a = seq({3, 4, 5, 6}), b = seq({3, 4, 5, 7});
  EXPECT_EQ((RewardFn{RewardKind::kBleu4})(a, b), bleu4(seq({3, 4, 5, 6}), seq({3, 4, 5, 7})));
  EXPECT_EQ((RewardFn{RewardKind::kNegEdit})(a, b), -1.0);
  EXPECT_NEAR((RewardFn{RewardKind::kDeltaBleu})(a, b), 0.65803700647624623, 1e-15);
  EXPECT_THROW((RewardFn{RewardKind::kContSim})(a, b), UsageError);
  EXPECT_EQ(parse_reward_kind("neg_edit"), RewardKind::kNegEdit);
  EXPECT_THROW(parse_reward_kind("meteor"), UsageError);
}

}  // namespace
}  // namespace seqdm
