#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "seqdm/autodiff.h"
#include "seqdm/numerics.h"
#include "seqdm/rng.h"
#include "seqdm/seqmodel.h"
#include "seqdm/sequence.h"
#include "seqdm/tensor.h"

namespace seqdm {

struct Draw {
  Source value;
  double log_prob = 0.0;
};

// A distribution p(x | prototype) over sequences with differentiable
// log-density. Parameters are passed explicitly so one augmenter object can
// serve several parameter sets.
class Augmenter {
 public:
  virtual ~Augmenter() = default;

  virtual ParamStore init_params(RngStream& rng) const = 0;
  // Throws ShapeError unless `params` fits this augmenter.
  virtual void check_params(const ParamStore& params) const;

  virtual Draw sample(const ParamStore& params, const Source& prototype, RngStream& rng) const = 0;
  virtual Var build_log_prob(Graph& g, const Source& prototype, const Source& x) const = 0;
  // False when x has probability zero, so build_log_prob would throw.
  virtual bool in_support(const Source& prototype, const Source& x) const;

  double log_prob(const ParamStore& params, const Source& prototype, const Source& x) const;
  ValueAndGrad log_prob_grad(const ParamStore& params, const Source& prototype,
                             const Source& x) const;
};

struct DiscreteAugConfig {
  int vocab_size = 0;
  int embed = 32;
  int hidden = 64;  // must be even
  int attention = 64;
  int mlp = 64;
  int extra_len = 4;  // samples may exceed the prototype length by this much

  void validate() const;
};

// Prototype-conditioned multinomial sequence generator.
//
// The prototype is encoded bidirectionally; with m the mean encoder state,
//   s_0 = tanh(W_init [fwd_T; bwd_1] + b_init)
//   s_t = gru([embed(x_{t-1}); m], s_{t-1})
//   c_t = attend(s_t, encoder states)
//   lambda_t = W2 tanh(W1 [c_t; s_t] + b1) + b2
//   p(x_t) = softmax(lambda_t) over {EOS} + content tokens.
// EOS is forced once prototype length + extra_len tokens have been emitted.
class DiscreteAugmenter : public Augmenter {
 public:
  explicit DiscreteAugmenter(DiscreteAugConfig config);

  const DiscreteAugConfig& config() const { return config_; }
  int emit_dim() const { return emit_size(config_.vocab_size); }
  int max_len_for(const TokenSeq& prototype) const {
    return prototype.length() + config_.extra_len;
  }

  ParamStore init_params(RngStream& rng) const override;
  Draw sample(const ParamStore& params, const Source& prototype, RngStream& rng) const override;
  Var build_log_prob(Graph& g, const Source& prototype, const Source& x) const override;
  bool in_support(const Source& prototype, const Source& x) const override;

  // Ancestral sample with an extra length budget; unterminated when the
  // budget runs out first.
  SampledSeq sample_tokens(const ParamStore& params, const TokenSeq& prototype, RngStream& rng,
                           int max_len) const;
  // Distribution of the first emitted token.
  std::vector<double> first_step_probs(const ParamStore& params, const TokenSeq& prototype) const;

 private:
  class Stepper;
  DiscreteAugConfig config_;
};

struct ContinuousAugConfig {
  int dim = 0;  // K
  int hidden = 16;
  int mlp = 16;
  double min_scale = 1e-3;

  void validate() const;
};

struct ContinuousDraw {
  VecSeq x;
  VecSeq noise;  // standard normal n_t with x_t = x*_t + lambda_t * n_t
  double log_prob = 0.0;
};

// Diagonal Gaussian around the prototype with a recurrent scale:
//   s_t = gru([x*_{t-1}; d_{t-1}], s_{t-1}), s_0 = 0, inputs zero at t = 1
//   lambda_t = softplus(W2 tanh(W1 s_t + b1) + b2) + min_scale
//   x_t = x*_t + lambda_t * n_t, n_t ~ N(0, I)
// where d_t = x_t - x*_t. The density of x follows from unrolling the same
// recurrence along the observed deviations.
class ContinuousAugmenter : public Augmenter {
 public:
  explicit ContinuousAugmenter(ContinuousAugConfig config);

  const ContinuousAugConfig& config() const { return config_; }

  ParamStore init_params(RngStream& rng) const override;
  Draw sample(const ParamStore& params, const Source& prototype, RngStream& rng) const override;
  Var build_log_prob(Graph& g, const Source& prototype, const Source& x) const override;

  ContinuousDraw sample_with_noise(const ParamStore& params, const VecSeq& prototype,
                                   RngStream& rng) const;
  // Reparameterized sample for a given noise realization.
  ContinuousDraw transform(const ParamStore& params, const VecSeq& prototype,
                           const VecSeq& noise) const;
  // lambda_t for the deviations of `x` from `prototype`, one row per step.
  VecSeq scales(const ParamStore& params, const VecSeq& prototype, const VecSeq& x) const;
  // Gradient of log p(x | prototype); `noise` must be the realization that
  // produced x (checked).
  ParamStore grad_log_prob(const ParamStore& params, const VecSeq& prototype, const VecSeq& x,
                           const VecSeq& noise) const;

 private:
  // Builds lambda_t nodes along the deviation path of x.
  std::vector<Var> build_scales(Graph& g, const VecSeq& prototype, const VecSeq& x) const;
  ContinuousAugConfig config_;
};

// Kronecker delta at the prototype. Has no parameters.
class PointMassAugmenter : public Augmenter {
 public:
  ParamStore init_params(RngStream&) const override { return {}; }
  Draw sample(const ParamStore& params, const Source& prototype, RngStream& rng) const override;
  // 0 at the prototype; throws UsageError elsewhere (log 0 is not representable
  // as a differentiable node).
  Var build_log_prob(Graph& g, const Source& prototype, const Source& x) const override;
  bool in_support(const Source& prototype, const Source& x) const override { return prototype == x; }
};

struct SelfReconstructionOptions {
  int epochs = 0;
  double eta = 0.1;
  int batch_size = 0;  // 0 means the whole set
  double clip_norm = 1.0;  // 0 disables clipping
  int threads = 1;
};

// SGD on the mean of -log p(prototype | prototype) over mini-batches of
// `prototypes`, taken in order. Returns the mean loss per epoch in `epoch_loss`
// when given.
ParamStore pretrain_self_reconstruction(const Augmenter& aug, ParamStore params,
                                        std::span<const Source> prototypes,
                                        const SelfReconstructionOptions& options,
                                        std::vector<double>* epoch_loss = nullptr);

}  // namespace seqdm
