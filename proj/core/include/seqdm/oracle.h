#pragma once

#include <cstddef>
#include <vector>

#include "seqdm/augmenter.h"
#include "seqdm/baselines.h"
#include "seqdm/objectives.h"
#include "seqdm/rewards.h"
#include "seqdm/seqmodel.h"

namespace seqdm {

// Every terminated sequence with 0..max_len content tokens, shortest first,
// then lexicographic.
class EnumSpace {
 public:
  // Throws UsageError when the space would exceed `cap` sequences.
  EnumSpace(int vocab_size, int max_len, std::size_t cap = 100000);

  int vocab_size() const { return vocab_size_; }
  int max_len() const { return max_len_; }
  std::size_t size() const { return seqs_.size(); }
  const TokenSeq& operator[](std::size_t i) const { return seqs_[i]; }
  const std::vector<TokenSeq>& seqs() const { return seqs_; }
  // -1 when absent.
  int index_of(const TokenSeq& s) const;

  // sum_{l=0..max_len} num_content^l.
  static std::size_t count(int num_content, int max_len);

 private:
  int vocab_size_;
  int max_len_;
  std::vector<TokenSeq> seqs_;
};

// Categorical distribution over an EnumSpace with a free logit per sequence,
// independent of the prototype. Parameters: "logits" [space size].
class TabularAugmenter : public Augmenter {
 public:
  explicit TabularAugmenter(const EnumSpace& space) : space_(space) {}

  ParamStore init_params(RngStream& rng) const override;
  Draw sample(const ParamStore& params, const Source& prototype, RngStream& rng) const override;
  Var build_log_prob(Graph& g, const Source& prototype, const Source& x) const override;
  bool in_support(const Source& prototype, const Source& x) const override;

  // Logits log p for a strictly positive distribution over the space.
  static ParamStore params_from_probs(const std::vector<double>& probs);

 private:
  const EnumSpace& space_;
};

struct MarginalResult {
  double value = 0.0;
  // Probability mass the enumeration misses, which bounds the error of
  // `value`. When the model's length cap fits the space this is the source
  // mass outside the space; otherwise it is 1 minus the enumerated total.
  double residual = 0.0;
};

struct ObjectiveGrads {
  ParamStore gamma, theta, beta;
};

// Exact distribution-matching quantities for one pair by summing over an
// EnumSpace on both sides. Sequences outside an augmenter's support get
// probability 0.
class DmOracle {
 public:
  DmOracle(const DmModels& models, const Example& pair, const EnumSpace& space,
           double entropy_weight = 1.0);

  // log p over the space; -inf outside the support.
  std::vector<double> source_log_probs(const ParamStore& theta) const;
  std::vector<double> target_log_probs(const ParamStore& gamma) const;
  std::vector<double> model_log_probs(const ParamStore& beta, const Source& x) const;

  MarginalResult marginal(const ParamStore& theta, const ParamStore& beta, const TokenSeq& y) const;
  // p_{theta,beta}(y|x*) for every y in the space.
  std::vector<double> marginals(const ParamStore& theta, const ParamStore& beta) const;
  // KL(p_gamma || p_{theta,beta}) with the marginal clamped at the estimator's floor.
  double kl(const DmParams& params) const;
  double entropy(const ParamStore& theta) const;
  // -J_match = kl - entropy_weight * entropy.
  double loss(const DmParams& params) const;

  // Central finite differences of loss() per parameter group. Tables that a
  // group does not affect are computed once.
  ObjectiveGrads loss_grads(const DmParams& params, double fd_step) const;

 private:
  struct Tables;
  Tables tables(const DmParams& params, bool with_beta) const;
  std::vector<double> beta_table(const ParamStore& beta, const std::vector<int>& xs,
                                 const std::vector<int>& ys) const;
  double loss_from(const std::vector<double>& log_theta, const std::vector<double>& log_gamma,
                   const std::vector<double>& beta_tab, const std::vector<int>& xs,
                   const std::vector<int>& ys) const;

  DmModels models_;
  Example pair_;
  const EnumSpace& space_;
  double entropy_weight_;
};

// -sum p log p with 0 log 0 = 0.
double exact_entropy(const Augmenter& aug, const ParamStore& params, const Source& prototype,
                     const EnumSpace& space);

// E_{y ~ p_beta(.|x)} R(y, reference) over the space.
double exact_expected_reward(const SeqModel& model, const ParamStore& beta, const Example& pair,
                             const Similarity& reward, const EnumSpace& space);

struct RamlTable {
  std::vector<TokenSeq> seqs;
  std::vector<double> probs;
  std::vector<int> stratum;  // substitutions away from the reference
  std::vector<double> stratum_mass;
};

// Enumerates the substitution ball of radius max_edit around the reference
// and weights each member exp(-m / tau), normalized.
RamlTable exact_raml_distribution(const TokenSeq& reference, const RamlConfig& cfg,
                                  int vocab_size);

struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// n-point Gauss-Hermite rule for the integral of f(u) exp(-u^2) over the reals.
Quadrature gauss_hermite(int n);

// Integral of the T = K = 1 augmenter density over the real line.
double integrate_density_1d(const ContinuousAugmenter& aug, const ParamStore& params,
                            const VecSeq& prototype, int points = 64);

}  // namespace seqdm
