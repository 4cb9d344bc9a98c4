#include "seqdm/baselines.h"

#include <cmath>
#include <numeric>

#include "seqdm/errors.h"
#include "seqdm/numerics.h"
#include "seqdm/parallel.h"

namespace seqdm {

int RamlConfig::max_edit_for(int length) const {
  if (!(tau > 0.0)) throw UsageError("raml tau must be positive");
  if (candidates_per_pair < 1) throw UsageError("raml candidates_per_pair must be at least 1");
  if (length < 1) throw UsageError("raml_sample: empty reference");
  const int m = max_edit < 0 ? (length + 1) / 2 : max_edit;
  if (m > length) {
    throw UsageError("raml max_edit " + std::to_string(m) + " exceeds reference length " +
                     std::to_string(length));
  }
  return m;
}

std::vector<double> raml_stratum_weights(int length, int num_content, double tau, int max_edit) {
  std::vector<double> w(max_edit + 1);
  for (int m = 0; m <= max_edit; ++m) {
    const double log_choose =
        std::lgamma(length + 1.0) - std::lgamma(m + 1.0) - std::lgamma(length - m + 1.0);
    const double subs = m == 0 ? 1.0 : std::pow(static_cast<double>(num_content - 1), m);
    w[m] = std::exp(log_choose - m / tau) * subs;
  }
  return w;
}

TokenSeq raml_sample(const TokenSeq& reference, const RamlConfig& cfg, int vocab_size,
                     RngStream& rng) {
  const int length = reference.length();
  const int max_edit = cfg.max_edit_for(length);
  const int num_content = vocab_size - kFirstContent;
  if (num_content < 1) throw UsageError("raml_sample: vocabulary has no content tokens");

  // Stratum log-weights, normalized in log space so tiny tau cannot overflow.
  std::vector<double> logw(max_edit + 1);
  for (int m = 0; m <= max_edit; ++m) {
    if (m > 0 && num_content < 2) {
      logw[m] = -std::numeric_limits<double>::infinity();
      continue;
    }
    logw[m] = std::lgamma(length + 1.0) - std::lgamma(m + 1.0) - std::lgamma(length - m + 1.0) +
              m * std::log(std::max(1, num_content - 1)) - m / cfg.tau;
  }
  const int m = rng.categorical(softmax_stable(logw));

  TokenSeq out = reference;
  std::vector<int> positions(length);
  std::iota(positions.begin(), positions.end(), 0);
  for (int k = 0; k < m; ++k) {
    const int pick = k + static_cast<int>(rng.below(static_cast<std::uint64_t>(length - k)));
    std::swap(positions[k], positions[pick]);
    const int pos = positions[k];
    int tok = kFirstContent + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_content - 1)));
    if (tok >= reference.ids[pos]) ++tok;
    out.ids[pos] = tok;
  }
  return out;
}

double annealed_eta(double eta0, double factor, int every, int epoch) {
  if (every <= 0) return eta0;
  return eta0 * std::pow(factor, epoch / every);
}

std::vector<std::size_t> epoch_order(std::size_t n, const RngStream& rng, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream r = rng.split(0).split(static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[r.below(i)]);
  return order;
}

namespace {

void check_loop(std::span<const Example> data, const LoopOptions& options) {
  if (data.empty()) throw UsageError("training needs a non-empty dataset");
  if (options.epochs < 0 || options.start_epoch < 0) throw UsageError("epochs must be non-negative");
  if (options.eta < 0.0) throw UsageError("eta must be non-negative");
  if (options.batch_size < 1) throw UsageError("batch_size must be at least 1");
}

struct BatchOutcome {
  ParamStore grads;
  double loss = 0.0;
  double reward = 0.0;
};

// Shared epoch/batch loop. batch_fn(indices, epoch) returns the mean-loss
// gradient of one mini-batch; after_batch sees each outcome.
template <typename BatchFn, typename AfterBatch>
void run_loop(std::span<const Example> data, const LoopOptions& options, const RngStream& rng,
              TrainResult& result, const EpochCallback& on_epoch, BatchFn&& batch_fn,
              AfterBatch&& after_batch) {
  const std::size_t n = data.size();
  const std::size_t bs = static_cast<std::size_t>(options.batch_size);
  for (int epoch = options.start_epoch; epoch < options.start_epoch + options.epochs; ++epoch) {
    const double eta = annealed_eta(options.eta, options.anneal_factor, options.anneal_every, epoch);
    const auto order = epoch_order(n, rng, epoch);
    EpochStats stats{epoch, eta, 0.0, 0.0};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + std::min(n, start + bs));
      BatchOutcome out = batch_fn(idx, epoch);
      if (!std::isfinite(out.loss)) throw NumericalError("training loss is not finite");
      stats.loss += out.loss;
      stats.reward += out.reward;
      ++batches;
      if (eta > 0.0) {
        clip_grad_norm(out.grads, options.clip_norm);
        result.beta = sgd_step(result.beta, out.grads, eta);
      }
      after_batch(out);
    }
    stats.loss /= static_cast<double>(batches);
    stats.reward /= static_cast<double>(batches);
    result.curve.push_back(stats);
    if (on_epoch) on_epoch(stats, result.beta);
  }
}

}  // namespace

TrainResult train_mle(const SeqModel& model, ParamStore beta, std::span<const Example> data,
                      const LoopOptions& options, const RngStream& rng,
                      const EpochCallback& on_epoch) {
  check_loop(data, options);
  model.check_params(beta);
  TrainResult result{std::move(beta), {}, {}, {}};
  run_loop(data, options, rng, result, on_epoch,
           [&](const std::vector<std::size_t>& idx, int) {
             std::vector<Example> batch;
             for (std::size_t i : idx) batch.push_back(data[i]);
             ValueAndGrad vg = mle_loss_grad(model, result.beta, batch, options.threads);
             return BatchOutcome{std::move(vg.grads), vg.value, 0.0};
           },
           [](const BatchOutcome&) {});
  return result;
}

ReinforceSample reinforce_sample(const SeqModel& model, const ParamStore& beta,
                                 const Example& pair, RewardKind reward, RngStream& rng) {
  ReinforceSample s;
  s.sample = model.sample(beta, pair.source, rng, model.config().max_len);
  if (!s.sample.seq.terminated) throw UsageError("policy sample did not terminate");
  const std::size_t steps = s.sample.seq.ids.size() + 1;
  s.returns.assign(steps, 0.0);
  if (reward == RewardKind::kDeltaBleu) {
    const auto d = delta_bleu_steps(s.sample.seq, pair.target);
    double g = 0.0;
    for (std::size_t t = d.size(); t-- > 0;) {
      g += d[t];
      s.returns[t] = g;
    }
    s.reward = g;
  } else {
    s.reward = RewardFn{reward}(Source(s.sample.seq), Source(pair.target));
    std::fill(s.returns.begin(), s.returns.end(), s.reward);
  }
  return s;
}

ValueAndGrad reinforce_grad(const SeqModel& model, const ParamStore& beta, const Example& pair,
                            const ReinforceSample& s, double baseline) {
  std::vector<double> weights(s.returns.size());
  for (std::size_t t = 0; t < weights.size(); ++t) weights[t] = -(s.returns[t] - baseline);
  ValueAndGrad vg = eval_with_grad(
      [&](Graph& g) { return model.build_weighted_log_prob(g, pair.source, s.sample.seq, weights); },
      beta);
  vg.value = s.reward;
  return vg;
}

TrainResult train_reinforce(const SeqModel& model, ParamStore beta, std::span<const Example> data,
                            const LoopOptions& options, const ReinforceOptions& rl,
                            const RngStream& rng, TrainerState state,
                            const EpochCallback& on_epoch) {
  check_loop(data, options);
  model.check_params(beta);
  TrainResult result{std::move(beta), {}, state, {}};
  if (!rl.warm_start) {
    result.warnings.push_back(
        "policy-gradient training from an untrained model; rewards will be near zero");
  }
  run_loop(data, options, rng, result, on_epoch,
           [&](const std::vector<std::size_t>& idx, int epoch) {
             const double b = result.state.baseline_ready ? result.state.reward_baseline : 0.0;
             std::vector<ValueAndGrad> parts(idx.size());
             parallel_for(idx.size(), options.threads, [&](std::size_t k) {
               RngStream r = rng.split(2).split(static_cast<std::uint64_t>(epoch)).split(idx[k]);
               const ReinforceSample s = reinforce_sample(model, result.beta, data[idx[k]], rl.reward, r);
               parts[k] = reinforce_grad(model, result.beta, data[idx[k]], s, b);
             });
             BatchOutcome out{result.beta.zeros_like(), 0.0, 0.0};
             const double inv = 1.0 / static_cast<double>(idx.size());
             for (const auto& p : parts) {
               out.grads.axpy(inv, p.grads);
               out.reward += inv * p.value;
             }
             out.loss = -out.reward;
             return out;
           },
           [&](const BatchOutcome& out) {
             TrainerState& st = result.state;
             if (!st.baseline_ready) {
               st.reward_baseline = out.reward;
               st.baseline_ready = true;
             } else {
               st.reward_baseline = rl.baseline_decay * st.reward_baseline +
                                    (1.0 - rl.baseline_decay) * out.reward;
             }
           });
  return result;
}

TrainResult train_raml(const SeqModel& model, ParamStore beta, std::span<const Example> data,
                       const LoopOptions& options, const RamlConfig& cfg, const RngStream& rng,
                       const EpochCallback& on_epoch) {
  check_loop(data, options);
  model.check_params(beta);
  TrainResult result{std::move(beta), {}, {}, {}};
  const int vocab = model.config().vocab_size;
  run_loop(data, options, rng, result, on_epoch,
           [&](const std::vector<std::size_t>& idx, int epoch) {
             std::vector<Example> batch;
             for (std::size_t i : idx) {
               RngStream r = rng.split(1).split(static_cast<std::uint64_t>(epoch)).split(i);
               for (int k = 0; k < cfg.candidates_per_pair; ++k) {
                 batch.push_back(Example{data[i].source, raml_sample(data[i].target, cfg, vocab, r)});
               }
             }
             ValueAndGrad vg = mle_loss_grad(model, result.beta, batch, options.threads);
             return BatchOutcome{std::move(vg.grads), vg.value, 0.0};
           },
           [](const BatchOutcome&) {});
  return result;
}

}  // namespace seqdm
