#include "seqdm/layers.h"

#include "seqdm/errors.h"

namespace seqdm {

Tensor uniform_tensor(std::vector<int> shape, RngStream& rng, double scale) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = (2.0 * rng.uniform() - 1.0) * scale;
  return t;
}

void Gru::add_params(ParamStore& store, const std::string& prefix, int input, int hidden,
                     RngStream& rng) {
  for (const char* gate : {"z", "r", "n"}) {
    store.add(prefix + "_W" + gate, uniform_tensor({hidden, input + hidden}, rng));
    store.add(prefix + "_b" + gate, uniform_tensor({hidden}, rng));
  }
}

Gru Gru::bind(Graph& g, const std::string& prefix) {
  return Gru{g.param(prefix + "_Wz"), g.param(prefix + "_bz"), g.param(prefix + "_Wr"),
             g.param(prefix + "_br"), g.param(prefix + "_Wn"), g.param(prefix + "_bn")};
}

Var Gru::step(Graph& g, Var x, Var h) const {
  Var xh = g.concat(x, h);
  Var z = g.sigmoid(g.add(g.matvec(wz, xh), bz));
  Var r = g.sigmoid(g.add(g.matvec(wr, xh), br));
  Var n = g.tanh(g.add(g.matvec(wn, g.concat(x, g.mul(r, h))), bn));
  return g.add(n, g.mul(z, g.sub(h, n)));
}

void Attention::add_params(ParamStore& store, const std::string& prefix, int memory, int query,
                           int hidden, RngStream& rng) {
  store.add(prefix + "_Wh", uniform_tensor({hidden, memory}, rng));
  store.add(prefix + "_Ws", uniform_tensor({hidden, query}, rng));
  store.add(prefix + "_b", uniform_tensor({hidden}, rng));
  store.add(prefix + "_v", uniform_tensor({hidden}, rng));
}

Attention Attention::bind(Graph& g, const std::string& prefix) {
  return Attention{g.param(prefix + "_Wh"), g.param(prefix + "_Ws"), g.param(prefix + "_b"),
                   g.param(prefix + "_v")};
}

Attention::Memory Attention::prepare(Graph& g, Var states) const {
  return Memory{states, g.rows_matvec(states, wh)};
}

Var Attention::attend(Graph& g, const Memory& mem, Var query) const {
  Var q = g.add(g.matvec(ws, query), b);
  Var scores = g.matvec(g.tanh(g.add_rows(mem.keys, q)), v);
  Var weights = g.softmax(scores);
  return g.tmatvec(mem.states, weights);
}

Encoded encode_bidirectional(Graph& g, const Gru& fwd, const Gru& bwd, std::span<const Var> inputs,
                             int half) {
  const int t = static_cast<int>(inputs.size());
  if (t == 0) throw UsageError("encoder input must be non-empty");
  const std::vector<double> zeros(static_cast<std::size_t>(half), 0.0);
  std::vector<Var> f(t), b(t);
  Var h = g.constant(zeros, half);
  for (int i = 0; i < t; ++i) {
    h = fwd.step(g, inputs[i], h);
    f[i] = h;
  }
  h = g.constant(zeros, half);
  for (int i = t - 1; i >= 0; --i) {
    h = bwd.step(g, inputs[i], h);
    b[i] = h;
  }
  Encoded enc;
  enc.states.reserve(t);
  for (int i = 0; i < t; ++i) enc.states.push_back(g.concat(f[i], b[i]));
  enc.states_matrix = g.stack(enc.states);
  enc.summary = g.concat(f[t - 1], b[0]);
  return enc;
}

}  // namespace seqdm
