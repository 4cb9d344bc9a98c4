#include "seqdm/tensor.h"

#include <cmath>
#include <functional>
#include <numeric>

#include "seqdm/errors.h"

namespace seqdm {

namespace {

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(product(shape_), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::vector(std::vector<double> data) {
  const int n = static_cast<int>(data.size());
  return Tensor({n}, std::move(data));
}

int Tensor::cols() const {
  if (shape_.size() < 2) return 1;
  int c = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
  return c;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor& ParamStore::add(std::string name, Tensor value) {
  if (name.empty()) throw UsageError("parameter name must be non-empty");
  if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

bool ParamStore::contains(std::string_view name) const { return find(name) >= 0; }

int ParamStore::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? -1 : static_cast<int>(it->second);
}

const Tensor& ParamStore::get(std::string_view name) const {
  const int i = find(name);
  if (i < 0) throw UsageError("unknown parameter '" + std::string(name) + "'");
  return entries_[i].second;
}

Tensor& ParamStore::get(std::string_view name) {
  const int i = find(name);
  if (i < 0) throw UsageError("unknown parameter '" + std::string(name) + "'");
  return entries_[i].second;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

bool ParamStore::shape_compatible(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (entries_[i].second.shape() != other.entries_[i].second.shape()) return false;
  }
  return true;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape()));
  return out;
}

void ParamStore::axpy(double alpha, const ParamStore& other) {
  require_shape_compatible(*this, other, "axpy");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto dst = entries_[i].second.data();
    auto src = other.entries_[i].second.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += alpha * src[k];
  }
}

void ParamStore::scale(double alpha) {
  for (auto& [name, t] : entries_) {
    for (double& v : t.data()) v *= alpha;
  }
}

double ParamStore::squared_norm() const {
  double s = 0.0;
  for (const auto& [name, t] : entries_) {
    for (double v : t.data()) s += v * v;
  }
  return s;
}

bool ParamStore::all_finite() const {
  for (const auto& [name, t] : entries_) {
    if (!t.all_finite()) return false;
  }
  return true;
}

void require_shape_compatible(const ParamStore& a, const ParamStore& b, std::string_view what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": stores have " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " entries");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& [na, ta] = a.entry(i);
    const auto& [nb, tb] = b.entry(i);
    if (na != nb || ta.shape() != tb.shape()) {
      throw ShapeError(std::string(what) + ": entry " + std::to_string(i) + " is " + na +
                       shape_string(ta.shape()) + " vs " + nb + shape_string(tb.shape()));
    }
  }
}

ParamStore sgd_step(const ParamStore& params, const ParamStore& grads, double eta) {
  if (!(eta > 0.0)) throw UsageError("sgd_step: eta must be positive");
  require_shape_compatible(params, grads, "sgd_step");
  ParamStore out = params;
  out.axpy(-eta, grads);
  if (!out.all_finite()) throw NumericalError("sgd_step produced a non-finite parameter");
  return out;
}

double clip_grad_norm(ParamStore& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace seqdm
