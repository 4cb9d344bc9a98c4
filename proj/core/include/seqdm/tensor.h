#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace seqdm {

// Dense row-major array of doubles. Rank 1 tensors are column vectors
// (rows() == n, cols() == 1).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor vector(std::vector<double> data);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t size() const { return data_.size(); }
  int rows() const { return shape_.empty() ? 0 : shape_[0]; }
  int cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  bool all_finite() const;
  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<int>& shape);

// Named tensors in insertion order. Holds one parameter group (theta, gamma
// or beta) or a gradient with the same layout.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  ParamStore() = default;

  // Throws UsageError on an empty or duplicate name.
  Tensor& add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  // Index of `name`, or -1.
  int find(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  Entry& entry(std::size_t i) { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  // Total number of scalars across all entries.
  std::size_t num_scalars() const;

  bool shape_compatible(const ParamStore& other) const;
  ParamStore zeros_like() const;

  // this += alpha * other. Throws ShapeError unless shape-compatible.
  void axpy(double alpha, const ParamStore& other);
  void scale(double alpha);
  double squared_norm() const;
  bool all_finite() const;

  bool operator==(const ParamStore& other) const { return entries_ == other.entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Throws ShapeError naming the first mismatching entry.
void require_shape_compatible(const ParamStore& a, const ParamStore& b, std::string_view what);

// params - eta * grads. Inputs are left untouched.
ParamStore sgd_step(const ParamStore& params, const ParamStore& grads, double eta);

// Rescales `grads` so its global L2 norm is at most max_norm (no-op when
// max_norm <= 0). Returns the norm before rescaling.
double clip_grad_norm(ParamStore& grads, double max_norm);

}  // namespace seqdm
