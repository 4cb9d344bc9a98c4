#pragma once

#include <span>
#include <vector>

#include "seqdm/autodiff.h"
#include "seqdm/layers.h"
#include "seqdm/numerics.h"
#include "seqdm/rng.h"
#include "seqdm/sequence.h"
#include "seqdm/tensor.h"

namespace seqdm {

struct Example {
  Source source;
  TokenSeq target;
  bool operator==(const Example&) const = default;
};

struct SeqModelConfig {
  int vocab_size = 0;   // total ids, reserved ones included
  int source_dim = 0;   // > 0 selects vector sources of this width
  int embed = 32;
  int hidden = 64;      // encoder state width; each direction gets half
  int attention = 64;
  int max_len = 50;     // content tokens after which EOS is forced

  void validate() const;
};

struct SampledSeq {
  TokenSeq seq;
  double log_prob = 0.0;
};

// Attention encoder-decoder p(y | x).
//
// Encoder: bidirectional gated recurrent net over source embeddings followed
// by the EOS embedding (token sources), or over a linear projection of each
// vector (vector sources).
// Decoder step t:
//   c_t = attend(r_{t-1}, encoder states)
//   r_t = gru([embed(y_{t-1}); c_t], r_{t-1})
//   P_t = softmax(W_out [r_t; c_t] + b_out) over {EOS} + content tokens
// r_0 = tanh(W_init [fwd_T; bwd_1] + b_init), y_0 = BOS.
class SeqModel {
 public:
  explicit SeqModel(SeqModelConfig config);

  const SeqModelConfig& config() const { return config_; }
  int emit_dim() const { return emit_size(config_.vocab_size); }

  ParamStore init_params(RngStream& rng) const;
  // Throws ShapeError unless `beta` matches this architecture.
  void check_params(const ParamStore& beta) const;

  // Encoder states, one vector of width `hidden` per source position.
  std::vector<std::vector<double>> encode(const ParamStore& beta, const Source& src) const;

  // Chain-rule log-probability, EOS step included. Throws UsageError for an
  // unterminated target.
  double log_prob(const ParamStore& beta, const Source& src, const TokenSeq& target) const;
  ValueAndGrad log_prob_grad(const ParamStore& beta, const Source& src,
                             const TokenSeq& target) const;

  // Builds log p(target | src) on a graph bound to beta.
  Var build_log_prob(Graph& g, const Source& src, const TokenSeq& target) const;
  // log p(target_i | src) for every target, sharing one encoding of src.
  std::vector<Var> build_log_probs(Graph& g, const Source& src,
                                   std::span<const TokenSeq> targets) const;
  // Builds sum_t weights[t] * log P_t(y_t) over the emission steps of
  // `target` (content steps, then the EOS step when terminated).
  Var build_weighted_log_prob(Graph& g, const Source& src, const TokenSeq& target,
                              std::span<const double> weights) const;

  // Next-token distribution over the emission alphabet after `prefix`.
  std::vector<double> next_token_probs(const ParamStore& beta, const Source& src,
                                       const TokenSeq& prefix) const;

  // Ancestral sample. Stops with terminated == false when a content token
  // would exceed `max_len`; log_prob then covers the returned prefix only.
  SampledSeq sample(const ParamStore& beta, const Source& src, RngStream& rng, int max_len) const;

  TokenSeq greedy_decode(const ParamStore& beta, const Source& src) const;
  // Beam search ranking finished hypotheses by log-prob / emitted tokens
  // (EOS counted). Ties go to the lexicographically smaller id sequence.
  TokenSeq beam_decode(const ParamStore& beta, const Source& src, int beam_width) const;

  // Stepwise access used by the decoders above.
  class Decoder {
   public:
    Decoder(const SeqModel& model, Graph& g, const Source& src);

    struct State {
      Var hidden;
      int emitted = 0;
    };
    struct Step {
      State next;
      Var log_probs;  // over the emission alphabet; invalid when EOS is forced
      bool forced_eos = false;
    };

    State initial() const { return initial_; }
    Step step(const State& s, int prev_token);

   private:
    const SeqModel& model_;
    Graph& g_;
    Attention attn_;
    Attention::Memory memory_;
    Gru gru_;
    Var tgt_emb_, out_w_, out_b_;
    State initial_;
  };

 private:
  std::vector<Var> embed_source(Graph& g, const Source& src) const;
  void check_target(const TokenSeq& target) const;
  Var decode_target(Graph& g, Decoder& dec, const TokenSeq& target,
                    std::span<const double> weights) const;
  Encoded encode_graph(Graph& g, const Source& src) const;

  SeqModelConfig config_;
};

// Mean over the batch of -log p(target | source) and its gradient.
ValueAndGrad mle_loss_grad(const SeqModel& model, const ParamStore& beta,
                           std::span<const Example> batch, int threads = 1);

}  // namespace seqdm
