#include "seqdm/augmenter.h"

#include <cmath>
#include <numbers>
#include <variant>

#include "seqdm/errors.h"
#include "seqdm/layers.h"
#include "seqdm/parallel.h"

namespace seqdm {

void Augmenter::check_params(const ParamStore& params) const {
  RngStream rng(0);
  require_shape_compatible(init_params(rng), params, "augmenter parameters");
}

bool Augmenter::in_support(const Source&, const Source&) const { return true; }

double Augmenter::log_prob(const ParamStore& params, const Source& prototype,
                           const Source& x) const {
  Graph g(&params);
  return g.value(build_log_prob(g, prototype, x));
}

ValueAndGrad Augmenter::log_prob_grad(const ParamStore& params, const Source& prototype,
                                      const Source& x) const {
  return eval_with_grad([&](Graph& g) { return build_log_prob(g, prototype, x); }, params);
}

namespace {

const TokenSeq& as_tokens(const Source& s, const char* what) {
  const auto* t = std::get_if<TokenSeq>(&s);
  if (!t) throw UsageError(std::string(what) + ": expected a token sequence");
  return *t;
}

const VecSeq& as_vectors(const Source& s, const char* what) {
  const auto* v = std::get_if<VecSeq>(&s);
  if (!v) throw UsageError(std::string(what) + ": expected a vector sequence");
  return *v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Discrete

void DiscreteAugConfig::validate() const {
  if (vocab_size < kFirstContent + 1) throw UsageError("augmenter vocab_size too small");
  if (embed <= 0 || attention <= 0 || mlp <= 0) throw UsageError("augmenter sizes must be positive");
  if (hidden <= 0 || hidden % 2 != 0) throw UsageError("augmenter hidden size must be positive and even");
  if (extra_len < 0) throw UsageError("augmenter extra_len must be non-negative");
}

DiscreteAugmenter::DiscreteAugmenter(DiscreteAugConfig config) : config_(config) {
  config_.validate();
}

ParamStore DiscreteAugmenter::init_params(RngStream& rng) const {
  const int v = config_.vocab_size, e = config_.embed, h = config_.hidden;
  ParamStore p;
  p.add("emb", uniform_tensor({v, e}, rng));
  Gru::add_params(p, "enc_fwd", e, h / 2, rng);
  Gru::add_params(p, "enc_bwd", e, h / 2, rng);
  p.add("init_W", uniform_tensor({h, h}, rng));
  p.add("init_b", uniform_tensor({h}, rng));
  Gru::add_params(p, "dec", e + h, h, rng);
  Attention::add_params(p, "att", h, h, config_.attention, rng);
  p.add("mlp_W1", uniform_tensor({config_.mlp, 2 * h}, rng));
  p.add("mlp_b1", uniform_tensor({config_.mlp}, rng));
  p.add("mlp_W2", uniform_tensor({emit_dim(), config_.mlp}, rng));
  p.add("mlp_b2", Tensor({emit_dim()}));
  return p;
}

class DiscreteAugmenter::Stepper {
 public:
  Stepper(const DiscreteAugmenter& aug, Graph& g, const TokenSeq& prototype)
      : g_(g), max_len_(aug.max_len_for(prototype)) {
    validate_tokens(prototype, aug.config_.vocab_size);
    if (prototype.empty()) throw UsageError("augmenter prototype must be non-empty");
    emb_ = g.param("emb");
    std::vector<Var> inputs;
    for (int id : prototype.ids) inputs.push_back(g.row(emb_, id));
    const Encoded enc = encode_bidirectional(g, Gru::bind(g, "enc_fwd"), Gru::bind(g, "enc_bwd"),
                                             inputs, aug.config_.hidden / 2);
    summary_ = g.mean_rows(enc.states_matrix);
    attn_ = Attention::bind(g, "att");
    memory_ = attn_.prepare(g, enc.states_matrix);
    gru_ = Gru::bind(g, "dec");
    w1_ = g.param("mlp_W1");
    b1_ = g.param("mlp_b1");
    w2_ = g.param("mlp_W2");
    b2_ = g.param("mlp_b2");
    s0_ = g.tanh(g.add(g.matvec(g.param("init_W"), enc.summary), g.param("init_b")));
  }

  struct Step {
    Var state;
    Var log_probs;  // invalid when EOS is forced
    bool forced_eos = false;
  };

  Var initial() const { return s0_; }
  int max_len() const { return max_len_; }

  Step step(Var state, int emitted, int prev_token) {
    if (emitted >= max_len_) return Step{state, Var{}, true};
    Var s = gru_.step(g_, g_.concat(g_.row(emb_, prev_token), summary_), state);
    Var c = attn_.attend(g_, memory_, s);
    Var hidden = g_.tanh(g_.add(g_.matvec(w1_, g_.concat(c, s)), b1_));
    Var lambda = g_.add(g_.matvec(w2_, hidden), b2_);
    return Step{s, g_.log_softmax(lambda), false};
  }

 private:
  Graph& g_;
  int max_len_;
  Var emb_, summary_, w1_, b1_, w2_, b2_, s0_;
  Attention attn_;
  Attention::Memory memory_;
  Gru gru_;
};

Var DiscreteAugmenter::build_log_prob(Graph& g, const Source& prototype, const Source& x) const {
  const TokenSeq& proto = as_tokens(prototype, "discrete augmenter prototype");
  const TokenSeq& seq = as_tokens(x, "discrete augmenter sample");
  if (!seq.terminated || !proto.terminated) {
    throw UsageError("augmenter log_prob needs EOS-terminated sequences");
  }
  validate_tokens(seq, config_.vocab_size);
  Stepper st(*this, g, proto);
  if (seq.length() > st.max_len()) {
    throw UsageError("sample longer than the augmenter's length cap " +
                     std::to_string(st.max_len()));
  }
  Var state = st.initial();
  int prev = kBos;
  Var total = g.scalar(0.0);
  for (int t = 0; t <= seq.length(); ++t) {
    const int tok = t < seq.length() ? seq.ids[t] : kEos;
    auto step = st.step(state, t, prev);
    if (!step.forced_eos) total = g.add(total, g.pick(step.log_probs, emit_index(tok)));
    state = step.state;
    prev = tok;
  }
  return total;
}

bool DiscreteAugmenter::in_support(const Source& prototype, const Source& x) const {
  const auto* proto = std::get_if<TokenSeq>(&prototype);
  const auto* seq = std::get_if<TokenSeq>(&x);
  if (!proto || !seq || !seq->terminated) return false;
  if (seq->length() > max_len_for(*proto)) return false;
  for (int id : seq->ids) {
    if (id < kFirstContent || id >= config_.vocab_size) return false;
  }
  return true;
}

SampledSeq DiscreteAugmenter::sample_tokens(const ParamStore& params, const TokenSeq& prototype,
                                            RngStream& rng, int max_len) const {
  if (max_len < 1) throw UsageError("sample: max_len must be at least 1");
  Graph g(&params);
  Stepper st(*this, g, prototype);
  Var state = st.initial();
  int prev = kBos;
  SampledSeq out;
  std::vector<double> probs(emit_dim());
  while (true) {
    auto step = st.step(state, out.seq.length(), prev);
    if (step.forced_eos) {
      out.seq.terminated = true;
      return out;
    }
    const auto lp = g.values(step.log_probs);
    double total = 0.0;
    for (int e = 0; e < emit_dim(); ++e) total += probs[e] = std::exp(lp[e]);
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
    state = step.state;
    prev = token_from_emit(e);
  }
}

Draw DiscreteAugmenter::sample(const ParamStore& params, const Source& prototype,
                               RngStream& rng) const {
  const TokenSeq& proto = as_tokens(prototype, "discrete augmenter prototype");
  SampledSeq s = sample_tokens(params, proto, rng, max_len_for(proto));
  return Draw{std::move(s.seq), s.log_prob};
}

std::vector<double> DiscreteAugmenter::first_step_probs(const ParamStore& params,
                                                        const TokenSeq& prototype) const {
  Graph g(&params);
  Stepper st(*this, g, prototype);
  auto step = st.step(st.initial(), 0, kBos);
  std::vector<double> probs(emit_dim(), 0.0);
  if (step.forced_eos) {
    probs[0] = 1.0;
    return probs;
  }
  const auto lp = g.values(step.log_probs);
  for (int e = 0; e < emit_dim(); ++e) probs[e] = std::exp(lp[e]);
  return probs;
}

// ---------------------------------------------------------------------------
// Continuous

void ContinuousAugConfig::validate() const {
  if (dim <= 0) throw UsageError("continuous augmenter dim must be positive");
  if (hidden <= 0 || mlp <= 0) throw UsageError("continuous augmenter sizes must be positive");
  if (!(min_scale > 0.0)) throw UsageError("continuous augmenter min_scale must be positive");
}

ContinuousAugmenter::ContinuousAugmenter(ContinuousAugConfig config) : config_(config) {
  config_.validate();
}

ParamStore ContinuousAugmenter::init_params(RngStream& rng) const {
  const int k = config_.dim, h = config_.hidden;
  ParamStore p;
  Gru::add_params(p, "rnn", 2 * k, h, rng);
  p.add("mlp_W1", uniform_tensor({config_.mlp, h}, rng));
  p.add("mlp_b1", uniform_tensor({config_.mlp}, rng));
  p.add("mlp_W2", uniform_tensor({k, config_.mlp}, rng));
  p.add("mlp_b2", Tensor({k}));
  return p;
}

std::vector<Var> ContinuousAugmenter::build_scales(Graph& g, const VecSeq& prototype,
                                                   const VecSeq& x) const {
  const int k = config_.dim;
  if (prototype.dim != k || x.dim != k) {
    throw ShapeError("continuous augmenter expects width " + std::to_string(k));
  }
  if (prototype.length() == 0) throw UsageError("continuous prototype must be non-empty");
  if (x.length() != prototype.length()) {
    throw ShapeError("continuous sample and prototype lengths differ");
  }
  const Gru gru = Gru::bind(g, "rnn");
  Var w1 = g.param("mlp_W1"), b1 = g.param("mlp_b1");
  Var w2 = g.param("mlp_W2"), b2 = g.param("mlp_b2");
  std::vector<double> input(2 * static_cast<std::size_t>(k), 0.0);
  Var s = g.constant(std::vector<double>(config_.hidden, 0.0), config_.hidden);
  std::vector<Var> out;
  for (int t = 0; t < x.length(); ++t) {
    if (t > 0) {
      const auto proto_prev = prototype.row(t - 1);
      const auto x_prev = x.row(t - 1);
      for (int i = 0; i < k; ++i) {
        input[i] = proto_prev[i];
        input[k + i] = x_prev[i] - proto_prev[i];
      }
    }
    s = gru.step(g, g.constant(input, 2 * k), s);
    Var hidden = g.tanh(g.add(g.matvec(w1, s), b1));
    out.push_back(g.shift(g.softplus(g.add(g.matvec(w2, hidden), b2)), config_.min_scale));
  }
  return out;
}

Var ContinuousAugmenter::build_log_prob(Graph& g, const Source& prototype, const Source& x) const {
  const VecSeq& proto = as_vectors(prototype, "continuous augmenter prototype");
  const VecSeq& xs = as_vectors(x, "continuous augmenter sample");
  const std::vector<Var> lambdas = build_scales(g, proto, xs);
  const int k = config_.dim;
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  Var total = g.scalar(-0.5 * log_2pi * k * xs.length());
  std::vector<double> dev(k);
  for (int t = 0; t < xs.length(); ++t) {
    for (int i = 0; i < k; ++i) dev[i] = xs.row(t)[i] - proto.row(t)[i];
    // -log lambda - d^2 / (2 lambda^2)
    Var lam = lambdas[t];
    Var z = g.div(g.constant(dev, k), lam);
    total = g.sub(total, g.add(g.sum(g.log(lam)), g.scale(g.sum(g.square(z)), 0.5)));
  }
  return total;
}

ContinuousDraw ContinuousAugmenter::transform(const ParamStore& params, const VecSeq& prototype,
                                              const VecSeq& noise) const {
  const int k = config_.dim;
  if (noise.dim != k || noise.length() != prototype.length()) {
    throw ShapeError("noise shape differs from the prototype");
  }
  // The scale at step t depends only on deviations before t, so x can be
  // filled in step by step while unrolling.
  VecSeq x = prototype;
  Graph g(&params);
  const Gru gru = Gru::bind(g, "rnn");
  Var w1 = g.param("mlp_W1"), b1 = g.param("mlp_b1");
  Var w2 = g.param("mlp_W2"), b2 = g.param("mlp_b2");
  std::vector<double> input(2 * static_cast<std::size_t>(k), 0.0);
  Var s = g.constant(std::vector<double>(config_.hidden, 0.0), config_.hidden);
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  double log_prob = 0.0;
  for (int t = 0; t < prototype.length(); ++t) {
    if (t > 0) {
      for (int i = 0; i < k; ++i) {
        input[i] = prototype.row(t - 1)[i];
        input[k + i] = x.row(t - 1)[i] - prototype.row(t - 1)[i];
      }
    }
    s = gru.step(g, g.constant(input, 2 * k), s);
    Var hidden = g.tanh(g.add(g.matvec(w1, s), b1));
    const auto lam =
        g.values(g.shift(g.softplus(g.add(g.matvec(w2, hidden), b2)), config_.min_scale));
    for (int i = 0; i < k; ++i) {
      const double n = noise.row(t)[i];
      x.row(t)[i] = prototype.row(t)[i] + lam[i] * n;
      const double z = (x.row(t)[i] - prototype.row(t)[i]) / lam[i];
      log_prob += -0.5 * log_2pi - std::log(lam[i]) - 0.5 * z * z;
    }
  }
  return ContinuousDraw{std::move(x), noise, log_prob};
}

ContinuousDraw ContinuousAugmenter::sample_with_noise(const ParamStore& params,
                                                      const VecSeq& prototype,
                                                      RngStream& rng) const {
  if (prototype.dim != config_.dim) {
    throw ShapeError("continuous augmenter expects width " + std::to_string(config_.dim));
  }
  VecSeq noise = prototype;
  for (double& v : noise.data) v = rng.normal();
  return transform(params, prototype, noise);
}

Draw ContinuousAugmenter::sample(const ParamStore& params, const Source& prototype,
                                 RngStream& rng) const {
  ContinuousDraw d =
      sample_with_noise(params, as_vectors(prototype, "continuous augmenter prototype"), rng);
  return Draw{std::move(d.x), d.log_prob};
}

VecSeq ContinuousAugmenter::scales(const ParamStore& params, const VecSeq& prototype,
                                   const VecSeq& x) const {
  Graph g(&params);
  const auto lambdas = build_scales(g, prototype, x);
  VecSeq out = x;
  for (int t = 0; t < x.length(); ++t) {
    const auto lam = g.values(lambdas[t]);
    std::copy(lam.begin(), lam.end(), out.row(t).begin());
  }
  return out;
}

ParamStore ContinuousAugmenter::grad_log_prob(const ParamStore& params, const VecSeq& prototype,
                                              const VecSeq& x, const VecSeq& noise) const {
  const VecSeq lam = scales(params, prototype, x);
  if (noise.dim != x.dim || noise.length() != x.length()) {
    throw ShapeError("noise shape differs from the sample");
  }
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double expected = prototype.data[i] + lam.data[i] * noise.data[i];
    if (std::abs(expected - x.data[i]) > 1e-9 * (1.0 + std::abs(x.data[i]))) {
      throw UsageError("noise does not reproduce the sample");
    }
  }
  return log_prob_grad(params, prototype, x).grads;
}

// ---------------------------------------------------------------------------
// Point mass

Draw PointMassAugmenter::sample(const ParamStore&, const Source& prototype, RngStream&) const {
  return Draw{prototype, 0.0};
}

Var PointMassAugmenter::build_log_prob(Graph& g, const Source& prototype, const Source& x) const {
  if (!(prototype == x)) throw UsageError("point-mass augmenter has no density away from its prototype");
  return g.scalar(0.0);
}

// ---------------------------------------------------------------------------

ParamStore pretrain_self_reconstruction(const Augmenter& aug, ParamStore params,
                                        std::span<const Source> prototypes,
                                        const SelfReconstructionOptions& options,
                                        std::vector<double>* epoch_loss) {
  if (prototypes.empty()) throw UsageError("self-reconstruction needs a non-empty dataset");
  if (options.epochs < 0) throw UsageError("epochs must be non-negative");
  aug.check_params(params);
  const std::size_t n = prototypes.size();
  const std::size_t batch =
      options.batch_size <= 0 ? n : std::min<std::size_t>(n, static_cast<std::size_t>(options.batch_size));
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      std::vector<ValueAndGrad> parts(end - start);
      parallel_for(parts.size(), options.threads, [&](std::size_t i) {
        const Source& p = prototypes[start + i];
        parts[i] = aug.log_prob_grad(params, p, p);
      });
      ParamStore grads = params.zeros_like();
      const double inv = 1.0 / static_cast<double>(parts.size());
      for (const auto& part : parts) {
        loss_sum -= part.value;
        grads.axpy(-inv, part.grads);
      }
      clip_grad_norm(grads, options.clip_norm);
      params = sgd_step(params, grads, options.eta);
    }
    if (epoch_loss) epoch_loss->push_back(loss_sum / static_cast<double>(n));
  }
  return params;
}

}  // namespace seqdm
