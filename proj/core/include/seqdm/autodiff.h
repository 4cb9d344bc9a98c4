#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqdm/tensor.h"

namespace seqdm {

// Handle to a node in a Graph. Only meaningful for the graph that made it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <class Real>
class Tape;

enum class Precision {
  kDouble,
  kExtended,  // long double node values, used by the finite-difference oracle
};

// Tape for reverse-mode differentiation over vectors and matrices.
//
// Every node value is a rows x cols block in one flat arena; vectors are
// n x 1 and scalars 1 x 1. Parameters are bound by name from the ParamStore
// given at construction and are the only nodes gradients are reported for.
// backward() walks the tape once in reverse creation order, so repeated runs
// on the same program are bit-identical.
class Graph {
 public:
  explicit Graph(const ParamStore* params = nullptr, Precision precision = Precision::kDouble);
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Precision precision() const { return precision_; }

  // Drops all nodes but keeps allocated capacity.
  void clear();

  Var param(std::string_view name);
  Var constant(std::span<const double> values, int rows, int cols = 1);
  Var constant(const Tensor& t);
  Var scalar(double v);

  Var matvec(Var w, Var x);          // W x
  Var tmatvec(Var m, Var x);         // M^T x
  Var rows_matvec(Var m, Var w);     // row t of result = W m_t
  Var add_rows(Var m, Var v);        // m_t + v for every row t
  Var mean_rows(Var m);              // (1/T) sum_t m_t
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double s);
  Var shift(Var a, double c);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var softplus(Var a);
  Var square(Var a);
  Var concat(Var a, Var b);
  Var row(Var m, int i);
  Var stack(std::span<const Var> rows);
  Var sum(Var a);
  Var dot(Var a, Var b);
  Var log_softmax(Var a);
  Var softmax(Var a);
  Var pick(Var a, int i);

  int rows(Var v) const;
  int cols(Var v) const;
  int size(Var v) const;
  std::vector<double> values(Var v) const;
  double value(Var v) const;
  // The scalar before rounding to double.
  long double value_extended(Var v) const;
  std::size_t num_nodes() const;

  // Seeds d(out)/d(out) = seed and propagates. `out` must be a scalar.
  void backward(Var out, double seed = 1.0);

  // Gradient for every entry of the bound ParamStore (zeros for entries the
  // program never touched). Valid after backward().
  ParamStore param_grads() const;
  // into += scale * gradient, shape-compatible with the bound store.
  void accumulate_param_grads(ParamStore& into, double scale = 1.0) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  const ParamStore* params_;
  Precision precision_;
};

}  // namespace seqdm
