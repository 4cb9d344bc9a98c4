#include "seqdm/objectives.h"

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>

#include "seqdm/errors.h"
#include "seqdm/numerics.h"
#include "seqdm/parallel.h"

namespace seqdm {

MarginalEstimate marginal_from_log_probs(std::span<const double> log_probs) {
  if (log_probs.empty()) throw UsageError("estimate_marginal: no source samples");
  MarginalEstimate m;
  m.log_value = logsumexp(log_probs) - std::log(static_cast<double>(log_probs.size()));
  if (std::isnan(m.log_value)) throw NumericalError("estimate_marginal: NaN log-probability");
  if (m.log_value < kMarginalLogFloor) {
    m.log_value = kMarginalLogFloor;
    m.floored = true;
  }
  m.value = std::exp(m.log_value);
  return m;
}

MarginalEstimate estimate_marginal(const SeqModel& model, const ParamStore& beta,
                                   const TokenSeq& y, std::span<const Source> xs) {
  std::vector<double> lp;
  lp.reserve(xs.size());
  for (const Source& x : xs) lp.push_back(model.log_prob(beta, x, y));
  return marginal_from_log_probs(lp);
}

DmSamples draw_samples(const DmModels& models, const DmParams& params, const Example& pair,
                       int n, const RngStream& rng) {
  if (n < 1) throw UsageError("sample count must be at least 1");
  DmSamples s;
  const RngStream xr = rng.split(0), yr = rng.split(1);
  for (int j = 0; j < n; ++j) {
    RngStream r = xr.split(static_cast<std::uint64_t>(j));
    s.xs.push_back(models.source->sample(params.theta, pair.source, r).value);
  }
  const Source y_star = pair.target;
  for (int i = 0; i < n; ++i) {
    RngStream r = yr.split(static_cast<std::uint64_t>(i));
    Draw d = models.target->sample(params.gamma, y_star, r);
    auto* y = std::get_if<TokenSeq>(&d.value);
    if (!y) throw UsageError("target augmenter must produce token sequences");
    s.ys.push_back(std::move(*y));
  }
  return s;
}

namespace {

template <typename T>
struct Unique {
  std::vector<T> items;
  std::vector<int> index;  // sample -> item
  std::vector<int> count;

  explicit Unique(std::span<const T> samples) {
    std::unordered_map<T, int, SourceHash> seen;
    for (const T& s : samples) {
      auto [it, inserted] = seen.try_emplace(s, static_cast<int>(items.size()));
      if (inserted) {
        items.push_back(s);
        count.push_back(0);
      }
      ++count[it->second];
      index.push_back(it->second);
    }
  }
  std::size_t size() const { return items.size(); }
};

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + " is not finite");
}

// log p(item | prototype) for every distinct sample, keeping the graphs alive
// when score gradients are needed later.
class AugScores {
 public:
  AugScores(const Augmenter& aug, const ParamStore& params, const Source& prototype,
            const std::vector<Source>& items, bool keep_graphs, int threads)
      : params_(params), values_(items.size()), graphs_(items.size()), outs_(items.size()) {
    parallel_for(items.size(), threads, [&](std::size_t k) {
      auto g = std::make_unique<Graph>(&params);
      outs_[k] = aug.build_log_prob(*g, prototype, items[k]);
      values_[k] = g->value(outs_[k]);
      if (keep_graphs) graphs_[k] = std::move(g);
    });
    for (double v : values_) require_finite(v, "augmenter log-probability");
  }

  const std::vector<double>& values() const { return values_; }

  // sum_k coefs[k] * d log p(item_k), reduced in item order.
  ParamStore combine(std::span<const double> coefs, int threads) {
    std::vector<ParamStore> parts(graphs_.size());
    parallel_for(graphs_.size(), threads, [&](std::size_t k) {
      if (coefs[k] == 0.0) return;
      if (!graphs_[k]) throw UsageError("score gradients were not requested");
      graphs_[k]->backward(outs_[k], coefs[k]);
      parts[k] = graphs_[k]->param_grads();
    });
    ParamStore out = params_.zeros_like();
    for (const auto& p : parts) {
      if (!p.empty()) out.axpy(1.0, p);
    }
    return out;
  }

 private:
  const ParamStore& params_;
  std::vector<double> values_;
  std::vector<std::unique_ptr<Graph>> graphs_;
  std::vector<Var> outs_;
};

// log p_beta(y_a | x_b) for distinct y (rows) and distinct x (columns).
class BetaTable {
 public:
  BetaTable(const SeqModel& model, const ParamStore& beta, const std::vector<Source>& xs,
            const std::vector<TokenSeq>& ys, bool keep_graphs, int threads)
      : beta_(beta), rows_(ys.size()), cols_(xs.size()), values_(rows_ * cols_),
        graphs_(cols_), outs_(cols_) {
    parallel_for(cols_, threads, [&](std::size_t b) {
      auto g = std::make_unique<Graph>(&beta);
      outs_[b] = model.build_log_probs(*g, xs[b], ys);
      for (std::size_t a = 0; a < rows_; ++a) values_[a * cols_ + b] = g->value(outs_[b][a]);
      if (keep_graphs) graphs_[b] = std::move(g);
    });
    for (double v : values_) require_finite(v, "sequence-model log-probability");
  }

  double at(std::size_t a, std::size_t b) const { return values_[a * cols_ + b]; }

  // sum_ab coefs[a * cols + b] * d log p_beta(y_a | x_b).
  ParamStore combine(std::span<const double> coefs, int threads) {
    std::vector<ParamStore> parts(cols_);
    parallel_for(cols_, threads, [&](std::size_t b) {
      Graph& g = *graphs_.at(b);
      Var total = g.scalar(0.0);
      bool any = false;
      for (std::size_t a = 0; a < rows_; ++a) {
        const double c = coefs[a * cols_ + b];
        if (c == 0.0) continue;
        total = g.add(total, g.scale(outs_[b][a], c));
        any = true;
      }
      if (!any) return;
      g.backward(total);
      parts[b] = g.param_grads();
    });
    ParamStore out = beta_.zeros_like();
    for (const auto& p : parts) {
      if (!p.empty()) out.axpy(1.0, p);
    }
    return out;
  }

 private:
  const ParamStore& beta_;
  std::size_t rows_, cols_;
  std::vector<double> values_;
  std::vector<std::unique_ptr<Graph>> graphs_;
  std::vector<std::vector<Var>> outs_;
};

std::vector<Source> as_sources(const std::vector<TokenSeq>& ys) {
  return std::vector<Source>(ys.begin(), ys.end());
}

struct GroupWants {
  bool gamma = false, theta = false, beta = false;
};

// Every quantity for one pair: values, and coefficient vectors that the
// match and fidelity terms add into before a single backward pass per graph.
class PairWork {
 public:
  PairWork(const DmModels& models, const DmParams& params, const Example& pair,
           const DmSamples& samples, GroupWants wants, bool need_beta_table, int threads)
      : n_(static_cast<int>(samples.xs.size())),
        ux_(std::span<const Source>(samples.xs)),
        uy_(std::span<const TokenSeq>(samples.ys)),
        theta_(*models.source, params.theta, pair.source, ux_.items, wants.theta, threads),
        gamma_(*models.target, params.gamma, Source(pair.target), as_sources(uy_.items),
               wants.gamma, threads),
        threads_(threads),
        theta_coef_(ux_.size(), 0.0),
        gamma_coef_(uy_.size(), 0.0) {
    if (samples.ys.size() != samples.xs.size()) throw UsageError("sample counts differ");
    if (need_beta_table) {
      beta_.emplace(*models.model, params.beta, ux_.items, uy_.items, wants.beta, threads);
      beta_coef_.assign(uy_.size() * ux_.size(), 0.0);
    }
  }

  // Adds scale * match gradient coefficients and returns the diagnostics.
  MatchBatchResult add_match(double entropy_weight, double scale) {
    const BetaTable& table = *beta_;
    const double inv_n = 1.0 / n_;
    MatchBatchResult r;
    r.n = n_;
    r.min_weight_ess = n_;

    std::vector<double> log_marginal(uy_.size());
    std::vector<double> lp(n_);
    for (std::size_t a = 0; a < uy_.size(); ++a) {
      for (int j = 0; j < n_; ++j) lp[j] = table.at(a, ux_.index[j]);
      const MarginalEstimate m = marginal_from_log_probs(lp);
      log_marginal[a] = m.log_value;
      if (m.floored) r.floor_hits += uy_.count[a];
    }

    // w_ab = p_beta(y_a | x_b) / p_hat(y_a); column sums weighted by y counts.
    std::vector<double> w(uy_.size() * ux_.size());
    std::vector<double> col_sum(ux_.size(), 0.0);
    for (std::size_t a = 0; a < uy_.size(); ++a) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t b = 0; b < ux_.size(); ++b) {
        const double wab = std::exp(table.at(a, b) - log_marginal[a]);
        require_finite(wab, "importance weight");
        w[a * ux_.size() + b] = wab;
        col_sum[b] += uy_.count[a] * wab;
        s1 += ux_.count[b] * wab;
        s2 += ux_.count[b] * wab * wab;
      }
      if (s2 > 0.0) r.min_weight_ess = std::min(r.min_weight_ess, s1 * s1 / s2);
    }

    double kl = 0.0;
    for (std::size_t a = 0; a < uy_.size(); ++a) {
      const double diff = gamma_.values()[a] - log_marginal[a];
      kl += uy_.count[a] * diff;
      gamma_coef_[a] += scale * uy_.count[a] * inv_n * diff;
    }
    double entropy = 0.0;
    for (std::size_t b = 0; b < ux_.size(); ++b) {
      const double lt = theta_.values()[b];
      entropy -= ux_.count[b] * lt;
      theta_coef_[b] += scale * ux_.count[b] * inv_n * (-inv_n * col_sum[b] + entropy_weight * lt);
    }
    for (std::size_t a = 0; a < uy_.size(); ++a) {
      for (std::size_t b = 0; b < ux_.size(); ++b) {
        beta_coef_[a * ux_.size() + b] -=
            scale * inv_n * inv_n * uy_.count[a] * ux_.count[b] * w[a * ux_.size() + b];
      }
    }
    r.kl_estimate = kl * inv_n;
    r.entropy_estimate = entropy * inv_n;
    r.j_match_estimate = -r.kl_estimate + entropy_weight * r.entropy_estimate;
    return r;
  }

  FidelityBatchResult add_fidelity(const Example& pair, const FidelityOptions& options,
                                   double scale) {
    const double inv_n = 1.0 / n_;
    FidelityBatchResult r;
    std::vector<double> rx(ux_.size()), ry(uy_.size());
    for (std::size_t b = 0; b < ux_.size(); ++b) {
      rx[b] = options.source_reward(ux_.items[b], pair.source);
      r.mean_reward_src += ux_.count[b] * rx[b] * inv_n;
    }
    const Source y_star = pair.target;
    for (std::size_t a = 0; a < uy_.size(); ++a) {
      ry[a] = options.target_reward(Source(uy_.items[a]), y_star);
      r.mean_reward_tgt += uy_.count[a] * ry[a] * inv_n;
    }
    const double bx = options.baseline ? r.mean_reward_src : 0.0;
    const double by = options.baseline ? r.mean_reward_tgt : 0.0;
    for (std::size_t b = 0; b < ux_.size(); ++b) {
      theta_coef_[b] -= scale * ux_.count[b] * inv_n * (rx[b] - bx);
    }
    for (std::size_t a = 0; a < uy_.size(); ++a) {
      gamma_coef_[a] -= scale * uy_.count[a] * inv_n * (ry[a] - by);
    }
    return r;
  }

  ParamStore grads_theta() { return theta_.combine(theta_coef_, threads_); }
  ParamStore grads_gamma() { return gamma_.combine(gamma_coef_, threads_); }
  ParamStore grads_beta() { return beta_->combine(beta_coef_, threads_); }

 private:
  int n_;
  Unique<Source> ux_;
  Unique<TokenSeq> uy_;
  AugScores theta_;
  AugScores gamma_;
  std::optional<BetaTable> beta_;
  int threads_;
  std::vector<double> theta_coef_, gamma_coef_, beta_coef_;
};

void check_models(const DmModels& models) {
  if (!models.source || !models.target || !models.model) {
    throw UsageError("distribution matching needs source, target and sequence models");
  }
}

}  // namespace

MatchBatchResult match_grads_from(const DmModels& models, const DmParams& params,
                                  const Example& pair, const DmSamples& samples,
                                  const MatchOptions& options) {
  check_models(models);
  if (samples.xs.size() < 2) throw UsageError("match_grads needs N >= 2");
  PairWork work(models, params, pair, samples,
                {options.want_gamma, options.want_theta, options.want_beta}, true,
                options.threads);
  MatchBatchResult r = work.add_match(options.entropy_weight, 1.0);
  r.grads_gamma = options.want_gamma ? work.grads_gamma() : params.gamma.zeros_like();
  r.grads_theta = options.want_theta ? work.grads_theta() : params.theta.zeros_like();
  r.grads_beta = options.want_beta ? work.grads_beta() : params.beta.zeros_like();
  return r;
}

MatchBatchResult match_grads(const DmModels& models, const DmParams& params, const Example& pair,
                             const MatchOptions& options, const RngStream& rng) {
  check_models(models);
  if (options.n < 2) throw UsageError("match_grads needs N >= 2");
  return match_grads_from(models, params, pair, draw_samples(models, params, pair, options.n, rng),
                          options);
}

FidelityBatchResult fidelity_grads_from(const DmModels& models, const DmParams& params,
                                        const Example& pair, const DmSamples& samples,
                                        const FidelityOptions& options) {
  check_models(models);
  if (samples.xs.empty()) throw UsageError("fidelity_grads needs N >= 1");
  PairWork work(models, params, pair, samples, {options.want_gamma, options.want_theta, false},
                false, 1);
  FidelityBatchResult r = work.add_fidelity(pair, options, 1.0);
  r.grads_gamma = options.want_gamma ? work.grads_gamma() : params.gamma.zeros_like();
  r.grads_theta = options.want_theta ? work.grads_theta() : params.theta.zeros_like();
  return r;
}

FidelityBatchResult fidelity_grads(const DmModels& models, const DmParams& params,
                                   const Example& pair, const FidelityOptions& options,
                                   const RngStream& rng) {
  check_models(models);
  return fidelity_grads_from(models, params, pair,
                             draw_samples(models, params, pair, options.n, rng), options);
}

namespace {

template <typename T>
double mean_reward(const std::vector<T>& samples, const Source& prototype, const Similarity& reward) {
  double total = 0.0;
  for (const T& s : samples) total += reward(Source(s), prototype);
  return total / static_cast<double>(samples.size());
}

}  // namespace

CombinedStepResult combined_step(const DmModels& models, const DmParams& params,
                                 std::span<const Example> batch, const CombinedConfig& config,
                                 const RngStream& rng) {
  check_models(models);
  if (batch.empty()) throw UsageError("combined_step: empty batch");
  if (config.n < 2) throw UsageError("combined_step needs N >= 2");
  const bool aug = config.group == UpdateGroup::kAugmenters;

  struct PairOut {
    ParamStore g_theta, g_gamma, g_beta;
    StepDiagnostics diag;
  };
  std::vector<PairOut> outs(batch.size());
  FidelityOptions fid;
  fid.n = config.n;
  fid.source_reward = config.source_reward;
  fid.target_reward = config.target_reward;
  fid.baseline = config.fidelity_baseline;

  parallel_for(batch.size(), config.threads, [&](std::size_t k) {
    const Example& pair = batch[k];
    const DmSamples samples =
        draw_samples(models, params, pair, config.n, rng.split(static_cast<std::uint64_t>(k)));
    PairWork work(models, params, pair, samples, {aug, aug, !aug}, true, 1);
    const MatchBatchResult m = work.add_match(config.entropy_weight, 1.0);
    PairOut& out = outs[k];
    out.diag.j_match = m.j_match_estimate;
    out.diag.kl = m.kl_estimate;
    out.diag.entropy = m.entropy_estimate;
    out.diag.floor_hits = m.floor_hits;
    if (aug) {
      const FidelityBatchResult f = work.add_fidelity(pair, fid, config.fidelity_weight);
      out.diag.reward_src = f.mean_reward_src;
      out.diag.reward_tgt = f.mean_reward_tgt;
      out.g_theta = work.grads_theta();
      out.g_gamma = work.grads_gamma();
    } else {
      out.g_beta = work.grads_beta();
      out.diag.reward_src = mean_reward(samples.xs, pair.source, config.source_reward);
      out.diag.reward_tgt = mean_reward(samples.ys, Source(pair.target), config.target_reward);
    }
  });

  const double inv = 1.0 / static_cast<double>(batch.size());
  CombinedStepResult result;
  result.params = params;
  ParamStore g_theta = params.theta.zeros_like(), g_gamma = params.gamma.zeros_like(),
             g_beta = params.beta.zeros_like();
  for (const PairOut& o : outs) {
    if (aug) {
      g_theta.axpy(inv, o.g_theta);
      g_gamma.axpy(inv, o.g_gamma);
    } else {
      g_beta.axpy(inv, o.g_beta);
    }
    result.diag.j_match += inv * o.diag.j_match;
    result.diag.kl += inv * o.diag.kl;
    result.diag.entropy += inv * o.diag.entropy;
    result.diag.reward_src += inv * o.diag.reward_src;
    result.diag.reward_tgt += inv * o.diag.reward_tgt;
    result.diag.floor_hits += o.diag.floor_hits;
  }
  if (aug) {
    clip_grad_norm(g_theta, config.clip_norm);
    clip_grad_norm(g_gamma, config.clip_norm);
    result.params.theta = sgd_step(params.theta, g_theta, config.eta);
    result.params.gamma = sgd_step(params.gamma, g_gamma, config.eta);
  } else {
    clip_grad_norm(g_beta, config.clip_norm);
    result.params.beta = sgd_step(params.beta, g_beta, config.eta);
  }
  return result;
}

}  // namespace seqdm
