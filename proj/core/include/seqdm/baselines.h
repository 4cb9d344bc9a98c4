#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "seqdm/rewards.h"
#include "seqdm/rng.h"
#include "seqdm/seqmodel.h"

namespace seqdm {

struct RamlConfig {
  double tau = 0.8;
  int candidates_per_pair = 4;
  int max_edit = -1;  // -1 means ceil(L / 2) for a reference of length L

  // Resolved edit cap for a reference of length L; throws UsageError when
  // the configuration is invalid for it.
  int max_edit_for(int length) const;
};

// Unnormalized stratum weights C(L, m) (V_c - 1)^m exp(-m / tau), m = 0..max_edit.
std::vector<double> raml_stratum_weights(int length, int num_content, double tau, int max_edit);

// Draws m from the stratum weights, then substitutes m distinct uniformly
// chosen positions with uniformly chosen different content tokens.
TokenSeq raml_sample(const TokenSeq& reference, const RamlConfig& cfg, int vocab_size,
                     RngStream& rng);

// eta0 * factor^floor(epoch / every).
double annealed_eta(double eta0, double factor, int every, int epoch);

struct LoopOptions {
  int epochs = 1;
  int start_epoch = 0;  // resume point; the schedule and RNG streams are keyed by epoch
  double eta = 0.1;
  double anneal_factor = 0.8;
  int anneal_every = 3;
  int batch_size = 16;
  double clip_norm = 0.0;
  int threads = 1;
};

struct EpochStats {
  int epoch = 0;
  double eta = 0.0;
  double loss = 0.0;    // mean training loss over the epoch
  double reward = 0.0;  // mean sampled reward (reinforce only)
};

// Scalars a trainer carries across epochs, saved with checkpoints.
struct TrainerState {
  double reward_baseline = 0.0;
  bool baseline_ready = false;

  bool operator==(const TrainerState&) const = default;
};

using EpochCallback = std::function<void(const EpochStats&, const ParamStore& beta)>;

struct TrainResult {
  ParamStore beta;
  std::vector<EpochStats> curve;
  TrainerState state;
  std::vector<std::string> warnings;
};

// Epoch order is a permutation drawn from rng.split(0).split(epoch).
std::vector<std::size_t> epoch_order(std::size_t n, const RngStream& rng, int epoch);

// Mini-batch SGD on the mean negative log-likelihood. An eta of 0 leaves the
// parameters untouched.
TrainResult train_mle(const SeqModel& model, ParamStore beta, std::span<const Example> data,
                      const LoopOptions& options, const RngStream& rng,
                      const EpochCallback& on_epoch = {});

struct ReinforceOptions {
  RewardKind reward = RewardKind::kDeltaBleu;
  double baseline_decay = 0.9;
  bool warm_start = true;  // false records a cold-start warning
};

struct ReinforceSample {
  SampledSeq sample;
  std::vector<double> returns;  // reward-to-go per emission step, EOS step last
  double reward = 0.0;          // sentence-level reward
};

// Samples y ~ p_beta(.|x) and computes rewards-to-go. Delta BLEU pays per
// step; other reward kinds pay the whole reward on the final emission.
ReinforceSample reinforce_sample(const SeqModel& model, const ParamStore& beta,
                                 const Example& pair, RewardKind reward, RngStream& rng);

// Descent direction for -E[R]: -sum_t (G_t - baseline) d log p(y_t | y_<t, x)
// for one sample; value holds the sentence reward.
ValueAndGrad reinforce_grad(const SeqModel& model, const ParamStore& beta, const Example& pair,
                            const ReinforceSample& s, double baseline);

// Policy-gradient fine-tuning with a running-average reward baseline that is
// updated after every mini-batch.
TrainResult train_reinforce(const SeqModel& model, ParamStore beta, std::span<const Example> data,
                            const LoopOptions& options, const ReinforceOptions& rl,
                            const RngStream& rng, TrainerState state = {},
                            const EpochCallback& on_epoch = {});

// Mean -log p_beta(y~|x) over cfg.candidates_per_pair RAML draws per pair.
// Candidates for pair i in epoch e come from rng.split(1).split(e).split(i).
TrainResult train_raml(const SeqModel& model, ParamStore beta, std::span<const Example> data,
                       const LoopOptions& options, const RamlConfig& cfg, const RngStream& rng,
                       const EpochCallback& on_epoch = {});

}  // namespace seqdm
