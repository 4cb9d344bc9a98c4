#include "seqdm/seqmodel.h"

#include <algorithm>
#include <cmath>
#include <variant>

#include "seqdm/errors.h"
#include "seqdm/parallel.h"

namespace seqdm {

void SeqModelConfig::validate() const {
  if (vocab_size < kFirstContent + 1) throw UsageError("vocab_size must cover reserved ids plus one content token");
  if (embed <= 0 || attention <= 0) throw UsageError("embed and attention sizes must be positive");
  if (hidden <= 0 || hidden % 2 != 0) throw UsageError("hidden size must be a positive even number");
  if (max_len < 0) throw UsageError("max_len must be non-negative");
  if (source_dim < 0) throw UsageError("source_dim must be non-negative");
}

SeqModel::SeqModel(SeqModelConfig config) : config_(config) { config_.validate(); }

ParamStore SeqModel::init_params(RngStream& rng) const {
  const int v = config_.vocab_size, e = config_.embed, h = config_.hidden, half = h / 2;
  ParamStore p;
  if (config_.source_dim > 0) {
    p.add("src_proj_W", uniform_tensor({e, config_.source_dim}, rng));
    p.add("src_proj_b", uniform_tensor({e}, rng));
  } else {
    p.add("src_emb", uniform_tensor({v, e}, rng));
  }
  Gru::add_params(p, "enc_fwd", e, half, rng);
  Gru::add_params(p, "enc_bwd", e, half, rng);
  p.add("dec_init_W", uniform_tensor({h, h}, rng));
  p.add("dec_init_b", uniform_tensor({h}, rng));
  p.add("tgt_emb", uniform_tensor({v, e}, rng));
  Gru::add_params(p, "dec", e + h, h, rng);
  Attention::add_params(p, "att", h, h, config_.attention, rng);
  p.add("out_W", uniform_tensor({emit_dim(), 2 * h}, rng));
  p.add("out_b", Tensor({emit_dim()}));
  return p;
}

void SeqModel::check_params(const ParamStore& beta) const {
  RngStream rng(0);
  require_shape_compatible(init_params(rng), beta, "sequence model parameters");
}

std::vector<Var> SeqModel::embed_source(Graph& g, const Source& src) const {
  std::vector<Var> inputs;
  if (const auto* toks = std::get_if<TokenSeq>(&src)) {
    if (config_.source_dim > 0) throw ShapeError("model expects vector sources, got tokens");
    validate_tokens(*toks, config_.vocab_size);
    Var emb = g.param("src_emb");
    for (int id : toks->ids) inputs.push_back(g.row(emb, id));
    inputs.push_back(g.row(emb, kEos));
  } else {
    const auto& vecs = std::get<VecSeq>(src);
    if (config_.source_dim == 0) throw ShapeError("model expects token sources, got vectors");
    if (vecs.dim != config_.source_dim) {
      throw ShapeError("source vectors have width " + std::to_string(vecs.dim) + ", model expects " +
                       std::to_string(config_.source_dim));
    }
    Var w = g.param("src_proj_W");
    Var b = g.param("src_proj_b");
    for (int t = 0; t < vecs.length(); ++t) {
      inputs.push_back(g.add(g.matvec(w, g.constant(vecs.row(t), vecs.dim)), b));
    }
  }
  if (inputs.empty()) throw UsageError("vector source must be non-empty");
  return inputs;
}

Encoded SeqModel::encode_graph(Graph& g, const Source& src) const {
  const std::vector<Var> inputs = embed_source(g, src);
  return encode_bidirectional(g, Gru::bind(g, "enc_fwd"), Gru::bind(g, "enc_bwd"), inputs,
                              config_.hidden / 2);
}

std::vector<std::vector<double>> SeqModel::encode(const ParamStore& beta, const Source& src) const {
  Graph g(&beta);
  const Encoded enc = encode_graph(g, src);
  std::vector<std::vector<double>> out;
  for (Var s : enc.states) {
    auto v = g.values(s);
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

SeqModel::Decoder::Decoder(const SeqModel& model, Graph& g, const Source& src)
    : model_(model), g_(g) {
  const Encoded enc = model.encode_graph(g, src);
  attn_ = Attention::bind(g, "att");
  memory_ = attn_.prepare(g, enc.states_matrix);
  gru_ = Gru::bind(g, "dec");
  tgt_emb_ = g.param("tgt_emb");
  out_w_ = g.param("out_W");
  out_b_ = g.param("out_b");
  Var h0 = g.tanh(g.add(g.matvec(g.param("dec_init_W"), enc.summary), g.param("dec_init_b")));
  initial_ = State{h0, 0};
}

SeqModel::Decoder::Step SeqModel::Decoder::step(const State& s, int prev_token) {
  if (s.emitted >= model_.config_.max_len) return Step{s, Var{}, true};
  Var ctx = attn_.attend(g_, memory_, s.hidden);
  Var h = gru_.step(g_, g_.concat(g_.row(tgt_emb_, prev_token), ctx), s.hidden);
  Var logits = g_.add(g_.matvec(out_w_, g_.concat(h, ctx)), out_b_);
  return Step{State{h, s.emitted + 1}, g_.log_softmax(logits), false};
}

void SeqModel::check_target(const TokenSeq& target) const {
  validate_tokens(target, config_.vocab_size);
  if (target.length() > config_.max_len) {
    throw UsageError("target longer than the model's max_len " + std::to_string(config_.max_len));
  }
}

Var SeqModel::decode_target(Graph& g, Decoder& dec, const TokenSeq& target,
                            std::span<const double> weights) const {
  const std::size_t steps = target.ids.size() + (target.terminated ? 1 : 0);
  if (!weights.empty() && weights.size() != steps) {
    throw UsageError("weighted log-prob needs one weight per emission step");
  }
  auto state = dec.initial();
  int prev = kBos;
  Var total = g.scalar(0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    const int tok = t < target.ids.size() ? target.ids[t] : kEos;
    auto st = dec.step(state, prev);
    if (!st.forced_eos) {
      Var lp = g.pick(st.log_probs, emit_index(tok));
      if (!weights.empty()) lp = g.scale(lp, weights[t]);
      total = g.add(total, lp);
    }
    state = st.next;
    prev = tok;
  }
  return total;
}

Var SeqModel::build_weighted_log_prob(Graph& g, const Source& src, const TokenSeq& target,
                                      std::span<const double> weights) const {
  check_target(target);
  Decoder dec(*this, g, src);
  return decode_target(g, dec, target, weights);
}

std::vector<Var> SeqModel::build_log_probs(Graph& g, const Source& src,
                                           std::span<const TokenSeq> targets) const {
  for (const auto& t : targets) {
    if (!t.terminated) throw UsageError("log_prob needs an EOS-terminated target");
    check_target(t);
  }
  Decoder dec(*this, g, src);
  std::vector<Var> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(decode_target(g, dec, t, {}));
  return out;
}

Var SeqModel::build_log_prob(Graph& g, const Source& src, const TokenSeq& target) const {
  if (!target.terminated) throw UsageError("log_prob needs an EOS-terminated target");
  return build_weighted_log_prob(g, src, target, {});
}

double SeqModel::log_prob(const ParamStore& beta, const Source& src, const TokenSeq& target) const {
  Graph g(&beta);
  return g.value(build_log_prob(g, src, target));
}

ValueAndGrad SeqModel::log_prob_grad(const ParamStore& beta, const Source& src,
                                     const TokenSeq& target) const {
  return eval_with_grad([&](Graph& g) { return build_log_prob(g, src, target); }, beta);
}

std::vector<double> SeqModel::next_token_probs(const ParamStore& beta, const Source& src,
                                               const TokenSeq& prefix) const {
  validate_tokens(prefix, config_.vocab_size);
  Graph g(&beta);
  Decoder dec(*this, g, src);
  auto state = dec.initial();
  int prev = kBos;
  for (int tok : prefix.ids) {
    auto st = dec.step(state, prev);
    if (st.forced_eos) throw UsageError("prefix exceeds max_len");
    state = st.next;
    prev = tok;
  }
  auto st = dec.step(state, prev);
  std::vector<double> probs(emit_dim(), 0.0);
  if (st.forced_eos) {
    probs[0] = 1.0;
  } else {
    auto lp = g.values(st.log_probs);
    for (int e = 0; e < emit_dim(); ++e) probs[e] = std::exp(lp[e]);
  }
  return probs;
}

SampledSeq SeqModel::sample(const ParamStore& beta, const Source& src, RngStream& rng,
                            int max_len) const {
  if (max_len < 1) throw UsageError("sample: max_len must be at least 1");
  Graph g(&beta);
  Decoder dec(*this, g, src);
  auto state = dec.initial();
  int prev = kBos;
  SampledSeq out;
  std::vector<double> probs(emit_dim());
  while (true) {
    auto st = dec.step(state, prev);
    if (st.forced_eos) {
      out.seq.terminated = true;
      return out;
    }
    auto lp = g.values(st.log_probs);
    for (int e = 0; e < emit_dim(); ++e) probs[e] = std::exp(lp[e]);
    double total = 0.0;
    for (double p : probs) total += p;
    for (double& p : probs) p /= total;
    const int e = rng.categorical(probs);
    if (e == 0) {
      out.log_prob += lp[0];
      out.seq.terminated = true;
      return out;
    }
    if (out.seq.length() >= max_len) {
      out.seq.terminated = false;
      return out;
    }
    out.log_prob += lp[e];
    out.seq.ids.push_back(token_from_emit(e));
    state = st.next;
    prev = token_from_emit(e);
  }
}

TokenSeq SeqModel::greedy_decode(const ParamStore& beta, const Source& src) const {
  Graph g(&beta);
  Decoder dec(*this, g, src);
  auto state = dec.initial();
  int prev = kBos;
  TokenSeq out;
  while (true) {
    auto st = dec.step(state, prev);
    if (st.forced_eos) return out;
    auto lp = g.values(st.log_probs);
    const int e = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (e == 0) return out;
    out.ids.push_back(token_from_emit(e));
    state = st.next;
    prev = token_from_emit(e);
  }
}

namespace {

struct Hyp {
  SeqModel::Decoder::State state;
  std::vector<int> ids;
  double log_prob = 0.0;
};

struct Candidate {
  int hyp;
  int token;
  double log_prob;
  std::vector<int> raw;  // ids plus token, for tie-breaking
};

}  // namespace

TokenSeq SeqModel::beam_decode(const ParamStore& beta, const Source& src, int beam_width) const {
  if (beam_width < 1) throw UsageError("beam width must be at least 1");
  Graph g(&beta);
  Decoder dec(*this, g, src);
  std::vector<Hyp> live = {Hyp{dec.initial(), {}, 0.0}};
  struct Finished {
    std::vector<int> ids;
    double score;
  };
  std::vector<Finished> finished;

  while (!live.empty()) {
    std::vector<Candidate> cands;
    std::vector<SeqModel::Decoder::Step> steps;
    steps.reserve(live.size());
    for (std::size_t h = 0; h < live.size(); ++h) {
      const int prev = live[h].ids.empty() ? kBos : live[h].ids.back();
      steps.push_back(dec.step(live[h].state, prev));
      const auto& st = steps.back();
      auto make = [&](int tok, double lp) {
        Candidate c{static_cast<int>(h), tok, live[h].log_prob + lp, live[h].ids};
        c.raw.push_back(tok);
        cands.push_back(std::move(c));
      };
      if (st.forced_eos) {
        make(kEos, 0.0);
      } else {
        auto lp = g.values(st.log_probs);
        for (int e = 0; e < emit_dim(); ++e) make(token_from_emit(e), lp[e]);
      }
    }
    const std::size_t keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(beam_width));
    std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        return a.raw < b.raw;
                      });
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      if (c.token == kEos) {
        const double steps_taken = static_cast<double>(live[c.hyp].ids.size() + 1);
        finished.push_back({live[c.hyp].ids, c.log_prob / steps_taken});
      } else {
        Hyp h{steps[c.hyp].next, live[c.hyp].ids, c.log_prob};
        h.ids.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }

  const auto best = std::min_element(finished.begin(), finished.end(),
                                     [](const Finished& a, const Finished& b) {
                                       if (a.score != b.score) return a.score > b.score;
                                       return a.ids < b.ids;
                                     });
  return TokenSeq{best->ids, true};
}

ValueAndGrad mle_loss_grad(const SeqModel& model, const ParamStore& beta,
                           std::span<const Example> batch, int threads) {
  if (batch.empty()) throw UsageError("mle_loss_grad: empty batch");
  std::vector<ValueAndGrad> parts(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    parts[i] = model.log_prob_grad(beta, batch[i].source, batch[i].target);
  });
  ValueAndGrad out{0.0, beta.zeros_like()};
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& p : parts) {
    out.value -= p.value * inv;
    out.grads.axpy(-inv, p.grads);
  }
  return out;
}

}  // namespace seqdm
