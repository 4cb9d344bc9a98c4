#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "seqdm/sequence.h"

namespace seqdm {

// Smoothed sentence BLEU-4 in [0, 1]. Modified n-gram precisions for n = 2..4
// get `smoothing` added to numerator and denominator; unigram precision is
// unsmoothed. Brevity penalty exp(min(0, 1 - |ref| / |cand|)). An empty
// candidate scores 0. Throws UsageError for an empty reference.
double bleu4(const TokenSeq& candidate, const TokenSeq& reference, double smoothing = 1.0);

// Levenshtein distance with unit costs.
int edit_distance(const TokenSeq& a, const TokenSeq& b);

// Per-step rewards bleu4(prefix_t) - bleu4(prefix_{t-1}), one per content
// token of `sampled`. They telescope to bleu4(sampled, reference). Throws
// UsageError for an unterminated sample.
std::vector<double> delta_bleu_steps(const TokenSeq& sampled, const TokenSeq& reference);

// -(1 / (T K)) sum (x - prototype)^2. Throws ShapeError on a shape mismatch.
double cont_sim(const VecSeq& x, const VecSeq& prototype);

struct CorpusBleu {
  double bleu = 0.0;  // in [0, 1]
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 0.0;
  long hyp_length = 0;
  long ref_length = 0;
};

// Unsmoothed corpus-level BLEU-4 with clipped counts pooled over all pairs.
CorpusBleu corpus_bleu(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references);

// Any bounded similarity of a sample to its prototype.
using Similarity = std::function<double(const Source& sample, const Source& prototype)>;

enum class RewardKind { kBleu4, kNegEdit, kDeltaBleu, kContSim };

RewardKind parse_reward_kind(std::string_view name);
const char* reward_kind_name(RewardKind kind);

// Similarity of a sample to its prototype. kDeltaBleu scores the whole
// sequence, which is the sum of its per-step rewards. Token kinds need token
// sequences and kContSim needs vector sequences (UsageError otherwise).
struct RewardFn {
  RewardKind kind = RewardKind::kBleu4;
  double scale = 1.0;
  double smoothing = 1.0;

  double operator()(const Source& sample, const Source& prototype) const;
};

}  // namespace seqdm
