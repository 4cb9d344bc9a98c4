#include "seqdm/rewards.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "seqdm/errors.h"

namespace seqdm {

namespace {

using NgramCounts = std::map<std::vector<int>, int>;

NgramCounts count_ngrams(const std::vector<int>& ids, int n, std::size_t len) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= len; ++i) {
    ++counts[std::vector<int>(ids.begin() + i, ids.begin() + i + n)];
  }
  return counts;
}

// Clipped matches and candidate n-gram total for the first `len` candidate
// tokens.
std::pair<long, long> clipped_matches(const std::vector<int>& cand, std::size_t len,
                                      const std::vector<int>& ref, int n) {
  const NgramCounts c = count_ngrams(cand, n, len);
  const NgramCounts r = count_ngrams(ref, n, ref.size());
  long matches = 0, total = 0;
  for (const auto& [gram, count] : c) {
    total += count;
    auto it = r.find(gram);
    if (it != r.end()) matches += std::min(count, it->second);
  }
  return {matches, total};
}

double bleu_prefix(const std::vector<int>& cand, std::size_t len, const TokenSeq& reference,
                   double smoothing) {
  if (reference.empty()) throw UsageError("bleu4: empty reference");
  if (len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    auto [matches, total] = clipped_matches(cand, len, reference.ids, n);
    const double k = n >= 2 ? smoothing : 0.0;
    const double num = static_cast<double>(matches) + k;
    const double den = static_cast<double>(total) + k;
    if (num <= 0.0 || den <= 0.0) return 0.0;
    log_sum += std::log(num / den);
  }
  const double ratio = static_cast<double>(reference.length()) / static_cast<double>(len);
  const double log_bp = std::min(0.0, 1.0 - ratio);
  return std::exp(log_sum / 4.0 + log_bp);
}

}  // namespace

double bleu4(const TokenSeq& candidate, const TokenSeq& reference, double smoothing) {
  return bleu_prefix(candidate.ids, candidate.ids.size(), reference, smoothing);
}

int edit_distance(const TokenSeq& a, const TokenSeq& b) {
  const std::size_t m = a.ids.size(), n = b.ids.size();
  std::vector<int> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= m; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= n; ++j) {
      const int sub = prev[j - 1] + (a.ids[i - 1] == b.ids[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

std::vector<double> delta_bleu_steps(const TokenSeq& sampled, const TokenSeq& reference) {
  if (!sampled.terminated) throw UsageError("delta_bleu_steps: sample is not EOS-terminated");
  if (reference.empty()) throw UsageError("bleu4: empty reference");
  std::vector<double> steps;
  steps.reserve(sampled.ids.size());
  double prev = 0.0;
  for (std::size_t t = 1; t <= sampled.ids.size(); ++t) {
    const double cur = bleu_prefix(sampled.ids, t, reference, 1.0);
    steps.push_back(cur - prev);
    prev = cur;
  }
  return steps;
}

double cont_sim(const VecSeq& x, const VecSeq& prototype) {
  if (x.dim != prototype.dim || x.data.size() != prototype.data.size()) {
    throw ShapeError("cont_sim: sample and prototype shapes differ");
  }
  if (x.data.empty()) throw ShapeError("cont_sim: empty sequence");
  double ss = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double d = x.data[i] - prototype.data[i];
    ss += d * d;
  }
  return -ss / static_cast<double>(x.data.size());
}

CorpusBleu corpus_bleu(std::span<const TokenSeq> hypotheses, std::span<const TokenSeq> references) {
  if (hypotheses.size() != references.size()) {
    throw UsageError("corpus_bleu: hypothesis and reference counts differ");
  }
  CorpusBleu out;
  long matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    out.hyp_length += hypotheses[i].length();
    out.ref_length += references[i].length();
    for (int n = 1; n <= 4; ++n) {
      auto [m, t] = clipped_matches(hypotheses[i].ids, hypotheses[i].ids.size(),
                                    references[i].ids, n);
      matches[n - 1] += m;
      totals[n - 1] += t;
    }
  }
  double log_sum = 0.0;
  bool zero = out.hyp_length == 0;
  for (int n = 0; n < 4; ++n) {
    out.precisions[n] = totals[n] > 0 ? static_cast<double>(matches[n]) / totals[n] : 0.0;
    if (out.precisions[n] == 0.0) zero = true;
    else log_sum += std::log(out.precisions[n]);
  }
  if (out.hyp_length > 0) {
    const double ratio = static_cast<double>(out.ref_length) / static_cast<double>(out.hyp_length);
    out.brevity_penalty = std::exp(std::min(0.0, 1.0 - ratio));
  }
  out.bleu = zero ? 0.0 : out.brevity_penalty * std::exp(log_sum / 4.0);
  return out;
}

RewardKind parse_reward_kind(std::string_view name) {
  if (name == "bleu4") return RewardKind::kBleu4;
  if (name == "neg_edit") return RewardKind::kNegEdit;
  if (name == "delta_bleu") return RewardKind::kDeltaBleu;
  if (name == "cont_sim") return RewardKind::kContSim;
  throw UsageError("unknown reward kind '" + std::string(name) + "'");
}

const char* reward_kind_name(RewardKind kind) {
  switch (kind) {
    case RewardKind::kBleu4: return "bleu4";
    case RewardKind::kNegEdit: return "neg_edit";
    case RewardKind::kDeltaBleu: return "delta_bleu";
    case RewardKind::kContSim: return "cont_sim";
  }
  return "?";
}

double RewardFn::operator()(const Source& sample, const Source& prototype) const {
  if (kind == RewardKind::kContSim) {
    const auto* x = std::get_if<VecSeq>(&sample);
    const auto* p = std::get_if<VecSeq>(&prototype);
    if (!x || !p) throw UsageError("cont_sim reward needs vector sequences");
    return scale * cont_sim(*x, *p);
  }
  const auto* x = std::get_if<TokenSeq>(&sample);
  const auto* p = std::get_if<TokenSeq>(&prototype);
  if (!x || !p) throw UsageError(std::string(reward_kind_name(kind)) + " reward needs token sequences");
  switch (kind) {
    case RewardKind::kBleu4: return scale * bleu4(*x, *p, smoothing);
    case RewardKind::kNegEdit: return -scale * edit_distance(*x, *p);
    case RewardKind::kDeltaBleu: {
      double total = 0.0;
      for (double r : delta_bleu_steps(*x, *p)) total += r;
      return scale * total;
    }
    case RewardKind::kContSim: break;
  }
  return 0.0;
}

}  // namespace seqdm
