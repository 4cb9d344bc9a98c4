#include "seqdm/autodiff.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <variant>

#include "seqdm/errors.h"

namespace seqdm {

namespace {

template <class Real>
Real stable_sigmoid(Real x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

template <class Real>
Real stable_softplus(Real x) { return std::max(x, Real{0}) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

template <class Real>
class Tape {
 public:
  explicit Tape(const ParamStore* params);

  void clear();

  Var param(std::string_view name);
  Var constant(std::span<const double> values, int rows, int cols);
  Var scalar(double v);

  Var matvec(Var w, Var x);
  Var tmatvec(Var m, Var x);
  Var rows_matvec(Var m, Var w);
  Var add_rows(Var m, Var v);
  Var mean_rows(Var m);
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

  int rows(Var v) const { return nodes_[v.id].rows; }
  int cols(Var v) const { return nodes_[v.id].cols; }
  int size(Var v) const { return nodes_[v.id].rows * nodes_[v.id].cols; }
  std::vector<double> values(Var v) const;
  long double value_extended(Var v) const;
  std::size_t num_nodes() const { return nodes_.size(); }

  void backward(Var out, double seed);
  void accumulate_param_grads(ParamStore& into, double scale) const;

  void check(Var v) const;

 private:
  enum class Op : std::uint8_t {
    kConstant, kParam, kMatVec, kTMatVec, kRowsMatVec, kAddRows, kMeanRows,
    kAdd, kSub, kMul, kDiv, kScale, kShift, kTanh, kSigmoid, kExp, kLog,
    kSoftplus, kSquare, kConcat, kRow, kStack, kSum, kDot, kLogSoftmax,
    kSoftmax, kPick,
  };
  struct Node {
    Op op;
    bool needs_grad;
    int a, b;
    int rows, cols;
    std::size_t off;
    int iaux;
    double daux;
  };

  Var push(Op op, int a, int b, int rows, int cols, bool needs_grad, int iaux = 0,
           double daux = 0.0);
  Real* val(int id) { return val_.data() + nodes_[id].off; }
  const Real* val(int id) const { return val_.data() + nodes_[id].off; }
  Real* grad(int id) { return grad_.data() + nodes_[id].off; }
  void require_same_size(Var a, Var b, const char* op) const;
  void backprop_node(int id);

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::vector<Real> val_;
  std::vector<Real> grad_;
  std::vector<int> extra_;
  std::vector<int> param_node_;  // node id per ParamStore entry, -1 if unbound
};

template <class Real>
Tape<Real>::Tape(const ParamStore* params) : params_(params) {
  if (params_) param_node_.assign(params_->size(), -1);
}

template <class Real>
void Tape<Real>::clear() {
  nodes_.clear();
  val_.clear();
  grad_.clear();
  extra_.clear();
  std::fill(param_node_.begin(), param_node_.end(), -1);
}

template <class Real>
Var Tape<Real>::push(Op op, int a, int b, int rows, int cols, bool needs_grad, int iaux, double daux) {
  Node n{op, needs_grad, a, b, rows, cols, val_.size(), iaux, daux};
  val_.resize(val_.size() + static_cast<std::size_t>(rows) * cols);
  nodes_.push_back(n);
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class Real>
void Tape<Real>::check(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw UsageError("Graph: invalid variable handle");
  }
}

template <class Real>
void Tape<Real>::require_same_size(Var a, Var b, const char* op) const {
  check(a);
  check(b);
  if (size(a) != size(b)) {
    throw ShapeError(std::string("Graph::") + op + ": operand sizes " + std::to_string(size(a)) +
                     " and " + std::to_string(size(b)));
  }
}

template <class Real>
std::vector<double> Tape<Real>::values(Var v) const {
  check(v);
  const Real* p = val(v.id);
  return std::vector<double>(p, p + size(v));
}

template <class Real>
long double Tape<Real>::value_extended(Var v) const {
  check(v);
  if (size(v) != 1) throw ShapeError("Graph::value: node is not a scalar");
  return *val(v.id);
}

template <class Real>
Var Tape<Real>::param(std::string_view name) {
  if (!params_) throw UsageError("Graph::param: no parameter store bound");
  const int idx = params_->find(name);
  if (idx < 0) throw UsageError("unknown parameter '" + std::string(name) + "'");
  if (param_node_[idx] >= 0) return Var{param_node_[idx]};
  const Tensor& t = params_->entry(idx).second;
  Var v = push(Op::kParam, -1, -1, t.rows(), t.cols(), true, idx);
  std::copy(t.data().begin(), t.data().end(), val(v.id));
  param_node_[idx] = v.id;
  return v;
}

template <class Real>
Var Tape<Real>::constant(std::span<const double> values, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != values.size()) {
    throw ShapeError("Graph::constant: shape does not match data length");
  }
  Var v = push(Op::kConstant, -1, -1, rows, cols, false);
  std::copy(values.begin(), values.end(), val(v.id));
  return v;
}

template <class Real>
Var Tape<Real>::scalar(double x) { return constant(std::span<const double>(&x, 1), 1, 1); }

template <class Real>
Var Tape<Real>::matvec(Var w, Var x) {
  check(w);
  check(x);
  const int m = rows(w), n = cols(w);
  if (size(x) != n) {
    throw ShapeError("Graph::matvec: " + std::to_string(m) + "x" + std::to_string(n) +
                     " times vector of " + std::to_string(size(x)));
  }
  Var y = push(Op::kMatVec, w.id, x.id, m, 1, nodes_[w.id].needs_grad || nodes_[x.id].needs_grad);
  const Real* W = val(w.id);
  const Real* X = val(x.id);
  Real* Y = val(y.id);
  for (int i = 0; i < m; ++i) {
    const Real* wr = W + static_cast<std::size_t>(i) * n;
    Real s = 0.0;
    for (int j = 0; j < n; ++j) s += wr[j] * X[j];
    Y[i] = s;
  }
  return y;
}

template <class Real>
Var Tape<Real>::tmatvec(Var mv, Var x) {
  check(mv);
  check(x);
  const int m = rows(mv), n = cols(mv);
  if (size(x) != m) throw ShapeError("Graph::tmatvec: size mismatch");
  Var y = push(Op::kTMatVec, mv.id, x.id, n, 1, nodes_[mv.id].needs_grad || nodes_[x.id].needs_grad);
  const Real* M = val(mv.id);
  const Real* X = val(x.id);
  Real* Y = val(y.id);
  std::fill(Y, Y + n, 0.0);
  for (int i = 0; i < m; ++i) {
    const Real* mr = M + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) Y[j] += mr[j] * X[i];
  }
  return y;
}

template <class Real>
Var Tape<Real>::rows_matvec(Var mv, Var w) {
  check(mv);
  check(w);
  const int t = rows(mv), n = cols(mv), a = rows(w);
  if (cols(w) != n) throw ShapeError("Graph::rows_matvec: size mismatch");
  Var y = push(Op::kRowsMatVec, mv.id, w.id, t, a, nodes_[mv.id].needs_grad || nodes_[w.id].needs_grad);
  const Real* M = val(mv.id);
  const Real* W = val(w.id);
  Real* Y = val(y.id);
  for (int r = 0; r < t; ++r) {
    const Real* mr = M + static_cast<std::size_t>(r) * n;
    for (int i = 0; i < a; ++i) {
      const Real* wr = W + static_cast<std::size_t>(i) * n;
      Real s = 0.0;
      for (int j = 0; j < n; ++j) s += wr[j] * mr[j];
      Y[static_cast<std::size_t>(r) * a + i] = s;
    }
  }
  return y;
}

template <class Real>
Var Tape<Real>::add_rows(Var mv, Var v) {
  check(mv);
  check(v);
  const int t = rows(mv), n = cols(mv);
  if (size(v) != n) throw ShapeError("Graph::add_rows: size mismatch");
  Var y = push(Op::kAddRows, mv.id, v.id, t, n, nodes_[mv.id].needs_grad || nodes_[v.id].needs_grad);
  const Real* M = val(mv.id);
  const Real* V = val(v.id);
  Real* Y = val(y.id);
  for (int r = 0; r < t; ++r) {
    for (int j = 0; j < n; ++j) {
      Y[static_cast<std::size_t>(r) * n + j] = M[static_cast<std::size_t>(r) * n + j] + V[j];
    }
  }
  return y;
}

template <class Real>
Var Tape<Real>::mean_rows(Var mv) {
  check(mv);
  const int t = rows(mv), n = cols(mv);
  Var y = push(Op::kMeanRows, mv.id, -1, n, 1, nodes_[mv.id].needs_grad);
  const Real* M = val(mv.id);
  Real* Y = val(y.id);
  std::fill(Y, Y + n, 0.0);
  for (int r = 0; r < t; ++r) {
    for (int j = 0; j < n; ++j) Y[j] += M[static_cast<std::size_t>(r) * n + j];
  }
  for (int j = 0; j < n; ++j) Y[j] /= t;
  return y;
}

#define SEQDM_BINARY(NAME, OP, EXPR)                                                     \
  template <class Real>                                                                  \
  Var Tape<Real>::NAME(Var a, Var b) {                                                        \
    require_same_size(a, b, #NAME);                                                      \
    const int r = rows(a), c = cols(a);                                                  \
    Var y = push(Op::OP, a.id, b.id, r, c, nodes_[a.id].needs_grad || nodes_[b.id].needs_grad); \
    const Real* A = val(a.id);                                                         \
    const Real* B = val(b.id);                                                         \
    Real* Y = val(y.id);                                                               \
    const int n = r * c;                                                                 \
    for (int i = 0; i < n; ++i) Y[i] = (EXPR);                                           \
    return y;                                                                            \
  }

SEQDM_BINARY(add, kAdd, A[i] + B[i])
SEQDM_BINARY(sub, kSub, A[i] - B[i])
SEQDM_BINARY(mul, kMul, A[i] * B[i])
SEQDM_BINARY(div, kDiv, A[i] / B[i])
#undef SEQDM_BINARY

#define SEQDM_UNARY(NAME, OP, EXPR, DAUX)                                     \
  template <class Real>                                                     \
  Var Tape<Real>::NAME(Var a) {                                                    \
    check(a);                                                                 \
    Var y = push(Op::OP, a.id, -1, rows(a), cols(a), nodes_[a.id].needs_grad, 0, DAUX); \
    const Real* A = val(a.id);                                              \
    Real* Y = val(y.id);                                                    \
    const int n = size(a);                                                    \
    for (int i = 0; i < n; ++i) Y[i] = (EXPR);                                \
    return y;                                                                 \
  }

SEQDM_UNARY(tanh, kTanh, std::tanh(A[i]), 0.0)
SEQDM_UNARY(sigmoid, kSigmoid, stable_sigmoid(A[i]), 0.0)
SEQDM_UNARY(exp, kExp, std::exp(A[i]), 0.0)
SEQDM_UNARY(log, kLog, std::log(A[i]), 0.0)
SEQDM_UNARY(softplus, kSoftplus, stable_softplus(A[i]), 0.0)
SEQDM_UNARY(square, kSquare, A[i] * A[i], 0.0)
#undef SEQDM_UNARY

template <class Real>
Var Tape<Real>::scale(Var a, double s) {
  check(a);
  Var y = push(Op::kScale, a.id, -1, rows(a), cols(a), nodes_[a.id].needs_grad, 0, s);
  const Real* A = val(a.id);
  Real* Y = val(y.id);
  for (int i = 0; i < size(a); ++i) Y[i] = A[i] * s;
  return y;
}

template <class Real>
Var Tape<Real>::shift(Var a, double c) {
  check(a);
  Var y = push(Op::kShift, a.id, -1, rows(a), cols(a), nodes_[a.id].needs_grad, 0, c);
  const Real* A = val(a.id);
  Real* Y = val(y.id);
  for (int i = 0; i < size(a); ++i) Y[i] = A[i] + c;
  return y;
}

template <class Real>
Var Tape<Real>::concat(Var a, Var b) {
  check(a);
  check(b);
  const int na = size(a), nb = size(b);
  Var y = push(Op::kConcat, a.id, b.id, na + nb, 1, nodes_[a.id].needs_grad || nodes_[b.id].needs_grad);
  std::copy(val(a.id), val(a.id) + na, val(y.id));
  std::copy(val(b.id), val(b.id) + nb, val(y.id) + na);
  return y;
}

template <class Real>
Var Tape<Real>::row(Var mv, int i) {
  check(mv);
  if (i < 0 || i >= rows(mv)) {
    throw UsageError("Graph::row: index " + std::to_string(i) + " out of range " +
                     std::to_string(rows(mv)));
  }
  const int n = cols(mv);
  Var y = push(Op::kRow, mv.id, -1, n, 1, nodes_[mv.id].needs_grad, i);
  const Real* M = val(mv.id) + static_cast<std::size_t>(i) * n;
  std::copy(M, M + n, val(y.id));
  return y;
}

template <class Real>
Var Tape<Real>::stack(std::span<const Var> rs) {
  if (rs.empty()) throw UsageError("Graph::stack: no rows");
  const int n = size(rs[0]);
  bool ng = false;
  const int start = static_cast<int>(extra_.size());
  for (Var r : rs) {
    check(r);
    if (size(r) != n) throw ShapeError("Graph::stack: rows differ in size");
    ng = ng || nodes_[r.id].needs_grad;
    extra_.push_back(r.id);
  }
  const int t = static_cast<int>(rs.size());
  Var y = push(Op::kStack, -1, -1, t, n, ng, start);
  Real* Y = val(y.id);
  for (int r = 0; r < t; ++r) {
    const Real* R = val(rs[r].id);
    std::copy(R, R + n, Y + static_cast<std::size_t>(r) * n);
  }
  return y;
}

template <class Real>
Var Tape<Real>::sum(Var a) {
  check(a);
  Var y = push(Op::kSum, a.id, -1, 1, 1, nodes_[a.id].needs_grad);
  const Real* A = val(a.id);
  Real s = 0.0;
  for (int i = 0; i < size(a); ++i) s += A[i];
  *val(y.id) = s;
  return y;
}

template <class Real>
Var Tape<Real>::dot(Var a, Var b) {
  require_same_size(a, b, "dot");
  Var y = push(Op::kDot, a.id, b.id, 1, 1, nodes_[a.id].needs_grad || nodes_[b.id].needs_grad);
  const Real* A = val(a.id);
  const Real* B = val(b.id);
  Real s = 0.0;
  for (int i = 0; i < size(a); ++i) s += A[i] * B[i];
  *val(y.id) = s;
  return y;
}

template <class Real>
Var Tape<Real>::log_softmax(Var a) {
  check(a);
  const int n = size(a);
  Var y = push(Op::kLogSoftmax, a.id, -1, n, 1, nodes_[a.id].needs_grad);
  const Real* A = val(a.id);
  Real* Y = val(y.id);
  const Real mx = *std::max_element(A, A + n);
  Real s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(A[i] - mx);
  const Real lse = mx + std::log(s);
  for (int i = 0; i < n; ++i) Y[i] = A[i] - lse;
  return y;
}

template <class Real>
Var Tape<Real>::softmax(Var a) {
  check(a);
  const int n = size(a);
  Var y = push(Op::kSoftmax, a.id, -1, n, 1, nodes_[a.id].needs_grad);
  const Real* A = val(a.id);
  Real* Y = val(y.id);
  const Real mx = *std::max_element(A, A + n);
  Real s = 0.0;
  for (int i = 0; i < n; ++i) {
    Y[i] = std::exp(A[i] - mx);
    s += Y[i];
  }
  for (int i = 0; i < n; ++i) Y[i] /= s;
  return y;
}

template <class Real>
Var Tape<Real>::pick(Var a, int i) {
  check(a);
  if (i < 0 || i >= size(a)) throw UsageError("Graph::pick: index out of range");
  Var y = push(Op::kPick, a.id, -1, 1, 1, nodes_[a.id].needs_grad, i);
  *val(y.id) = val(a.id)[i];
  return y;
}

template <class Real>
void Tape<Real>::backward(Var out, double seed) {
  check(out);
  if (size(out) != 1) throw UsageError("Graph::backward: output is not a scalar");
  grad_.assign(val_.size(), 0.0);
  *grad(out.id) = seed;
  for (int id = out.id; id >= 0; --id) {
    if (nodes_[id].needs_grad) backprop_node(id);
  }
}

template <class Real>
void Tape<Real>::backprop_node(int id) {
  const Node& n = nodes_[id];
  const Real* g = grad_.data() + n.off;
  const Real* y = val_.data() + n.off;
  const int sz = n.rows * n.cols;
  auto wants = [&](int p) { return p >= 0 && nodes_[p].needs_grad; };
  switch (n.op) {
    case Op::kConstant:
    case Op::kParam:
      break;
    case Op::kMatVec: {
      const int m = nodes_[n.a].rows, k = nodes_[n.a].cols;
      const Real* W = val(n.a);
      const Real* X = val(n.b);
      if (wants(n.a)) {
        Real* gW = grad(n.a);
        for (int i = 0; i < m; ++i) {
          if (g[i] == 0.0) continue;
          Real* row = gW + static_cast<std::size_t>(i) * k;
          for (int j = 0; j < k; ++j) row[j] += g[i] * X[j];
        }
      }
      if (wants(n.b)) {
        Real* gx = grad(n.b);
        for (int i = 0; i < m; ++i) {
          const Real* row = W + static_cast<std::size_t>(i) * k;
          for (int j = 0; j < k; ++j) gx[j] += row[j] * g[i];
        }
      }
      break;
    }
    case Op::kTMatVec: {
      const int m = nodes_[n.a].rows, k = nodes_[n.a].cols;
      const Real* M = val(n.a);
      const Real* X = val(n.b);
      if (wants(n.a)) {
        Real* gM = grad(n.a);
        for (int i = 0; i < m; ++i) {
          Real* row = gM + static_cast<std::size_t>(i) * k;
          for (int j = 0; j < k; ++j) row[j] += X[i] * g[j];
        }
      }
      if (wants(n.b)) {
        Real* gx = grad(n.b);
        for (int i = 0; i < m; ++i) {
          const Real* row = M + static_cast<std::size_t>(i) * k;
          Real s = 0.0;
          for (int j = 0; j < k; ++j) s += row[j] * g[j];
          gx[i] += s;
        }
      }
      break;
    }
    case Op::kRowsMatVec: {
      const int t = nodes_[n.a].rows, k = nodes_[n.a].cols, a = nodes_[n.b].rows;
      const Real* M = val(n.a);
      const Real* W = val(n.b);
      for (int r = 0; r < t; ++r) {
        const Real* gr = g + static_cast<std::size_t>(r) * a;
        const Real* mr = M + static_cast<std::size_t>(r) * k;
        if (wants(n.b)) {
          Real* gW = grad(n.b);
          for (int i = 0; i < a; ++i) {
            Real* wrow = gW + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < k; ++j) wrow[j] += gr[i] * mr[j];
          }
        }
        if (wants(n.a)) {
          Real* gm = grad(n.a) + static_cast<std::size_t>(r) * k;
          for (int i = 0; i < a; ++i) {
            const Real* wrow = W + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < k; ++j) gm[j] += wrow[j] * gr[i];
          }
        }
      }
      break;
    }
    case Op::kAddRows: {
      const int t = n.rows, k = n.cols;
      if (wants(n.a)) {
        Real* gm = grad(n.a);
        for (int i = 0; i < sz; ++i) gm[i] += g[i];
      }
      if (wants(n.b)) {
        Real* gv = grad(n.b);
        for (int r = 0; r < t; ++r) {
          for (int j = 0; j < k; ++j) gv[j] += g[static_cast<std::size_t>(r) * k + j];
        }
      }
      break;
    }
    case Op::kMeanRows: {
      const int t = nodes_[n.a].rows, k = nodes_[n.a].cols;
      Real* gm = grad(n.a);
      for (int r = 0; r < t; ++r) {
        for (int j = 0; j < k; ++j) gm[static_cast<std::size_t>(r) * k + j] += g[j] / t;
      }
      break;
    }
    case Op::kAdd:
    case Op::kSub: {
      const Real sb = n.op == Op::kAdd ? 1.0 : -1.0;
      if (wants(n.a)) {
        Real* ga = grad(n.a);
        for (int i = 0; i < sz; ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        Real* gb = grad(n.b);
        for (int i = 0; i < sz; ++i) gb[i] += sb * g[i];
      }
      break;
    }
    case Op::kMul: {
      const Real* A = val(n.a);
      const Real* B = val(n.b);
      if (wants(n.a)) {
        Real* ga = grad(n.a);
        for (int i = 0; i < sz; ++i) ga[i] += g[i] * B[i];
      }
      if (wants(n.b)) {
        Real* gb = grad(n.b);
        for (int i = 0; i < sz; ++i) gb[i] += g[i] * A[i];
      }
      break;
    }
    case Op::kDiv: {
      const Real* B = val(n.b);
      if (wants(n.a)) {
        Real* ga = grad(n.a);
        for (int i = 0; i < sz; ++i) ga[i] += g[i] / B[i];
      }
      if (wants(n.b)) {
        Real* gb = grad(n.b);
        for (int i = 0; i < sz; ++i) gb[i] -= g[i] * y[i] / B[i];
      }
      break;
    }
    case Op::kScale: {
      Real* ga = grad(n.a);
      for (int i = 0; i < sz; ++i) ga[i] += g[i] * n.daux;
      break;
    }
    case Op::kShift: {
      Real* ga = grad(n.a);
      for (int i = 0; i < sz; ++i) ga[i] += g[i];
      break;
    }
    case Op::kTanh: {
      Real* ga = grad(n.a);
      for (int i = 0; i < sz; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case Op::kSigmoid: {
      Real* ga = grad(n.a);
      for (int i = 0; i < sz; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case Op::kExp: {
      Real* ga = grad(n.a);
      for (int i = 0; i < sz; ++i) ga[i] += g[i] * y[i];
      break;
    }
    case Op::kLog: {
      const Real* A = val(n.a);
      Real* ga = grad(n.a);
      for (int i = 0; i < sz; ++i) ga[i] += g[i] / A[i];
      break;
    }
    case Op::kSoftplus: {
      const Real* A = val(n.a);
      Real* ga = grad(n.a);
      for (int i = 0; i < sz; ++i) ga[i] += g[i] * stable_sigmoid(A[i]);
      break;
    }
    case Op::kSquare: {
      const Real* A = val(n.a);
      Real* ga = grad(n.a);
      for (int i = 0; i < sz; ++i) ga[i] += 2.0 * A[i] * g[i];
      break;
    }
    case Op::kConcat: {
      const int na = nodes_[n.a].rows * nodes_[n.a].cols;
      if (wants(n.a)) {
        Real* ga = grad(n.a);
        for (int i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        Real* gb = grad(n.b);
        for (int i = na; i < sz; ++i) gb[i - na] += g[i];
      }
      break;
    }
    case Op::kRow: {
      Real* gm = grad(n.a) + static_cast<std::size_t>(n.iaux) * sz;
      for (int i = 0; i < sz; ++i) gm[i] += g[i];
      break;
    }
    case Op::kStack: {
      const int k = n.cols;
      for (int r = 0; r < n.rows; ++r) {
        const int src = extra_[n.iaux + r];
        if (!nodes_[src].needs_grad) continue;
        Real* gr = grad(src);
        for (int j = 0; j < k; ++j) gr[j] += g[static_cast<std::size_t>(r) * k + j];
      }
      break;
    }
    case Op::kSum: {
      Real* ga = grad(n.a);
      const int na = nodes_[n.a].rows * nodes_[n.a].cols;
      for (int i = 0; i < na; ++i) ga[i] += g[0];
      break;
    }
    case Op::kDot: {
      const int na = nodes_[n.a].rows * nodes_[n.a].cols;
      const Real* A = val(n.a);
      const Real* B = val(n.b);
      if (wants(n.a)) {
        Real* ga = grad(n.a);
        for (int i = 0; i < na; ++i) ga[i] += g[0] * B[i];
      }
      if (wants(n.b)) {
        Real* gb = grad(n.b);
        for (int i = 0; i < na; ++i) gb[i] += g[0] * A[i];
      }
      break;
    }
    case Op::kLogSoftmax: {
      Real gs = 0.0;
      for (int i = 0; i < sz; ++i) gs += g[i];
      Real* ga = grad(n.a);
      for (int i = 0; i < sz; ++i) ga[i] += g[i] - std::exp(y[i]) * gs;
      break;
    }
    case Op::kSoftmax: {
      Real gy = 0.0;
      for (int i = 0; i < sz; ++i) gy += g[i] * y[i];
      Real* ga = grad(n.a);
      for (int i = 0; i < sz; ++i) ga[i] += y[i] * (g[i] - gy);
      break;
    }
    case Op::kPick: {
      grad(n.a)[n.iaux] += g[0];
      break;
    }
  }
}

template <class Real>
void Tape<Real>::accumulate_param_grads(ParamStore& into, double scale) const {
  if (!params_) return;
  if (grad_.size() != val_.size()) throw UsageError("param gradients requested before backward()");
  if (into.size() != params_->size()) {
    throw ShapeError("accumulate_param_grads: store layout differs from the bound parameters");
  }
  for (std::size_t i = 0; i < param_node_.size(); ++i) {
    const int id = param_node_[i];
    if (id < 0) continue;
    auto dst = into.entry(i).second.data();
    const Real* src = grad_.data() + nodes_[id].off;
    if (dst.size() != static_cast<std::size_t>(nodes_[id].rows) * nodes_[id].cols) {
      throw ShapeError("accumulate_param_grads: entry size differs");
    }
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += static_cast<double>(scale * src[k]);
  }
}

template class Tape<double>;
template class Tape<long double>;

struct Graph::Impl {
  std::variant<Tape<double>, Tape<long double>> tape;
};

namespace {

std::variant<Tape<double>, Tape<long double>> make_tape(const ParamStore* params, Precision p) {
  if (p == Precision::kExtended) return Tape<long double>(params);
  return Tape<double>(params);
}

}  // namespace

Graph::Graph(const ParamStore* params, Precision precision)
    : impl_(std::make_unique<Impl>(Impl{make_tape(params, precision)})),
      params_(params),
      precision_(precision) {}

Graph::~Graph() = default;

#define SEQDM_FORWARD(CALL) std::visit([&](auto& t) { return t.CALL; }, impl_->tape)

void Graph::clear() { SEQDM_FORWARD(clear()); }
Var Graph::param(std::string_view name) { return SEQDM_FORWARD(param(name)); }
Var Graph::constant(std::span<const double> values, int rows, int cols) {
  return SEQDM_FORWARD(constant(values, rows, cols));
}
Var Graph::constant(const Tensor& t) { return constant(t.data(), t.rows(), t.cols()); }
Var Graph::scalar(double v) { return SEQDM_FORWARD(scalar(v)); }
Var Graph::matvec(Var w, Var x) { return SEQDM_FORWARD(matvec(w, x)); }
Var Graph::tmatvec(Var m, Var x) { return SEQDM_FORWARD(tmatvec(m, x)); }
Var Graph::rows_matvec(Var m, Var w) { return SEQDM_FORWARD(rows_matvec(m, w)); }
Var Graph::add_rows(Var m, Var v) { return SEQDM_FORWARD(add_rows(m, v)); }
Var Graph::mean_rows(Var m) { return SEQDM_FORWARD(mean_rows(m)); }
Var Graph::add(Var a, Var b) { return SEQDM_FORWARD(add(a, b)); }
Var Graph::sub(Var a, Var b) { return SEQDM_FORWARD(sub(a, b)); }
Var Graph::mul(Var a, Var b) { return SEQDM_FORWARD(mul(a, b)); }
Var Graph::div(Var a, Var b) { return SEQDM_FORWARD(div(a, b)); }
Var Graph::scale(Var a, double s) { return SEQDM_FORWARD(scale(a, s)); }
Var Graph::shift(Var a, double c) { return SEQDM_FORWARD(shift(a, c)); }
Var Graph::tanh(Var a) { return SEQDM_FORWARD(tanh(a)); }
Var Graph::sigmoid(Var a) { return SEQDM_FORWARD(sigmoid(a)); }
Var Graph::exp(Var a) { return SEQDM_FORWARD(exp(a)); }
Var Graph::log(Var a) { return SEQDM_FORWARD(log(a)); }
Var Graph::softplus(Var a) { return SEQDM_FORWARD(softplus(a)); }
Var Graph::square(Var a) { return SEQDM_FORWARD(square(a)); }
Var Graph::concat(Var a, Var b) { return SEQDM_FORWARD(concat(a, b)); }
Var Graph::row(Var m, int i) { return SEQDM_FORWARD(row(m, i)); }
Var Graph::stack(std::span<const Var> rows) { return SEQDM_FORWARD(stack(rows)); }
Var Graph::sum(Var a) { return SEQDM_FORWARD(sum(a)); }
Var Graph::dot(Var a, Var b) { return SEQDM_FORWARD(dot(a, b)); }
Var Graph::log_softmax(Var a) { return SEQDM_FORWARD(log_softmax(a)); }
Var Graph::softmax(Var a) { return SEQDM_FORWARD(softmax(a)); }
Var Graph::pick(Var a, int i) { return SEQDM_FORWARD(pick(a, i)); }

int Graph::rows(Var v) const {
  return std::visit([&](const auto& t) { t.check(v); return t.rows(v); }, impl_->tape);
}
int Graph::cols(Var v) const {
  return std::visit([&](const auto& t) { t.check(v); return t.cols(v); }, impl_->tape);
}
int Graph::size(Var v) const {
  return std::visit([&](const auto& t) { t.check(v); return t.size(v); }, impl_->tape);
}
std::vector<double> Graph::values(Var v) const { return SEQDM_FORWARD(values(v)); }
double Graph::value(Var v) const { return static_cast<double>(value_extended(v)); }
long double Graph::value_extended(Var v) const { return SEQDM_FORWARD(value_extended(v)); }
std::size_t Graph::num_nodes() const { return SEQDM_FORWARD(num_nodes()); }
void Graph::backward(Var out, double seed) { SEQDM_FORWARD(backward(out, seed)); }

ParamStore Graph::param_grads() const {
  if (!params_) return {};
  ParamStore out = params_->zeros_like();
  accumulate_param_grads(out, 1.0);
  return out;
}

void Graph::accumulate_param_grads(ParamStore& into, double scale) const {
  SEQDM_FORWARD(accumulate_param_grads(into, scale));
}

#undef SEQDM_FORWARD

}  // namespace seqdm
