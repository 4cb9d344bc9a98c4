#pragma once

#include <span>
#include <vector>

#include "seqdm/augmenter.h"
#include "seqdm/rewards.h"
#include "seqdm/rng.h"
#include "seqdm/seqmodel.h"
#include "seqdm/tensor.h"

namespace seqdm {

// Marginal estimates are clamped below at this log-probability (1e-30).
inline constexpr double kMarginalLogFloor = -69.077552789821368;

// The three models of distribution matching: source augmenter p_theta(x|x*),
// target augmenter p_gamma(y|y*) and sequence model p_beta(y|x).
struct DmModels {
  const Augmenter* source = nullptr;
  const Augmenter* target = nullptr;
  const SeqModel* model = nullptr;
};

struct DmParams {
  ParamStore theta;
  ParamStore gamma;
  ParamStore beta;
  bool operator==(const DmParams&) const = default;
};

struct MarginalEstimate {
  double log_value = 0.0;  // after clamping
  double value = 0.0;
  bool floored = false;
};

// log p_hat(y|x*) = logsumexp_j log p_beta(y|x_j) - log N, clamped at the floor.
MarginalEstimate marginal_from_log_probs(std::span<const double> log_probs);
MarginalEstimate estimate_marginal(const SeqModel& model, const ParamStore& beta,
                                   const TokenSeq& y, std::span<const Source> xs);

// N draws from each augmenter around one pair.
struct DmSamples {
  std::vector<Source> xs;
  std::vector<TokenSeq> ys;
};

// x_j uses rng.split(0).split(j) and y_i uses rng.split(1).split(i).
DmSamples draw_samples(const DmModels& models, const DmParams& params, const Example& pair,
                       int n, const RngStream& rng);

struct MatchOptions {
  int n = 8;
  double entropy_weight = 1.0;
  bool want_gamma = true;
  bool want_theta = true;
  bool want_beta = true;
  int threads = 1;
};

// All gradients are descent directions for the loss
//   -J_match = KL(p_gamma(.|y*) || p_hat(.|x*)) - entropy_weight * H(p_theta(.|x*)).
struct MatchBatchResult {
  ParamStore grads_gamma;
  ParamStore grads_theta;
  ParamStore grads_beta;
  double kl_estimate = 0.0;
  double entropy_estimate = 0.0;
  double j_match_estimate = 0.0;  // -kl_estimate + entropy_weight * entropy_estimate
  int n = 0;
  int floor_hits = 0;
  double min_weight_ess = 0.0;  // smallest effective sample size of the weights w_i.
};

// Monte Carlo gradients with y_i ~ p_gamma, x_j ~ p_theta and importance
// weights w_ij = p_beta(y_i|x_j) / p_hat(y_i|x*):
//   gamma: (1/N) sum_i (log p_gamma(y_i) - log p_hat(y_i)) d log p_gamma(y_i)
//   theta: (1/N) sum_j (-(1/N) sum_i w_ij + entropy_weight log p_theta(x_j)) d log p_theta(x_j)
//   beta:  -(1/N^2) sum_ij w_ij d log p_beta(y_i|x_j)
// Throws UsageError for N < 2 and NumericalError on a non-finite value.
MatchBatchResult match_grads_from(const DmModels& models, const DmParams& params,
                                  const Example& pair, const DmSamples& samples,
                                  const MatchOptions& options);
MatchBatchResult match_grads(const DmModels& models, const DmParams& params, const Example& pair,
                             const MatchOptions& options, const RngStream& rng);

struct FidelityOptions {
  int n = 8;
  Similarity source_reward = RewardFn{RewardKind::kBleu4};
  Similarity target_reward = RewardFn{RewardKind::kBleu4};
  bool baseline = true;  // subtract the mean reward of the N samples
  bool want_gamma = true;
  bool want_theta = true;
};

// Descent directions for -J_fidelity = -E[R(x, x*)] - E[R(y, y*)]:
//   gamma: -(1/N) sum_i (R(y_i, y*) - b) d log p_gamma(y_i)
//   theta: -(1/N) sum_j (R(x_j, x*) - b) d log p_theta(x_j)
struct FidelityBatchResult {
  ParamStore grads_gamma;
  ParamStore grads_theta;
  double mean_reward_src = 0.0;
  double mean_reward_tgt = 0.0;
};

FidelityBatchResult fidelity_grads_from(const DmModels& models, const DmParams& params,
                                        const Example& pair, const DmSamples& samples,
                                        const FidelityOptions& options);
FidelityBatchResult fidelity_grads(const DmModels& models, const DmParams& params,
                                   const Example& pair, const FidelityOptions& options,
                                   const RngStream& rng);

enum class UpdateGroup { kAugmenters, kSeqModel };

struct CombinedConfig {
  UpdateGroup group = UpdateGroup::kAugmenters;
  int n = 8;
  double eta = 0.1;
  double entropy_weight = 1.0;
  double fidelity_weight = 1.0;
  Similarity source_reward = RewardFn{RewardKind::kBleu4};
  Similarity target_reward = RewardFn{RewardKind::kBleu4};
  bool fidelity_baseline = true;
  double clip_norm = 0.0;  // per group; 0 disables
  int threads = 1;
};

struct StepDiagnostics {
  double j_match = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  double reward_src = 0.0;
  double reward_tgt = 0.0;
  int floor_hits = 0;
};

struct CombinedStepResult {
  DmParams params;
  StepDiagnostics diag;  // batch means
};

// One alternating update on a mini-batch. Pair k samples from rng.split(k);
// match and fidelity share the same draws. Gradients of J_match + J_fidelity
// are averaged over pairs and only the selected group moves.
CombinedStepResult combined_step(const DmModels& models, const DmParams& params,
                                 std::span<const Example> batch, const CombinedConfig& config,
                                 const RngStream& rng);

}  // namespace seqdm
