#pragma once

#include <span>
#include <string>
#include <vector>

#include "seqdm/autodiff.h"
#include "seqdm/rng.h"
#include "seqdm/tensor.h"

namespace seqdm {

inline constexpr double kInitScale = 0.08;

// Uniform(-scale, scale) tensor.
Tensor uniform_tensor(std::vector<int> shape, RngStream& rng, double scale = kInitScale);

// Gated recurrent cell with update gate z and reset gate r:
//   z = sigma(Wz [x; h] + bz), r = sigma(Wr [x; h] + br)
//   n = tanh(Wn [x; r*h] + bn), h' = n + z * (h - n)
struct Gru {
  Var wz, bz, wr, br, wn, bn;

  static void add_params(ParamStore& store, const std::string& prefix, int input, int hidden,
                         RngStream& rng);
  static Gru bind(Graph& g, const std::string& prefix);
  Var step(Graph& g, Var x, Var h) const;
};

// Additive attention: score_j = v . tanh(Wh m_j + Ws q + b), weights are the
// softmax of the scores, result is sum_j weight_j m_j.
struct Attention {
  Var wh, ws, b, v;

  static void add_params(ParamStore& store, const std::string& prefix, int memory, int query,
                         int hidden, RngStream& rng);
  static Attention bind(Graph& g, const std::string& prefix);

  struct Memory {
    Var states;  // T x memory
    Var keys;    // T x hidden, Wh m_j precomputed
  };
  Memory prepare(Graph& g, Var states) const;
  Var attend(Graph& g, const Memory& mem, Var query) const;
};

struct Encoded {
  std::vector<Var> states;  // one [fwd; bwd] vector per position
  Var states_matrix;        // T x (2 * half)
  Var summary;              // [fwd_T; bwd_1]
};

// Runs `fwd` left to right and `bwd` right to left over `inputs` starting
// from zero states of size `half`.
Encoded encode_bidirectional(Graph& g, const Gru& fwd, const Gru& bwd, std::span<const Var> inputs,
                             int half);

}  // namespace seqdm
