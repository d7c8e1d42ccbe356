#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "devnet/errors.hpp"

namespace devnet {

// Dense row-major tensor of doubles. Shapes are at most rank 2 in practice
// (instance matrices, weight matrices, bias vectors, scalars) but nothing
// here depends on that.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    check_shape();
    data_.assign(product(shape_), fill);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (product(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + shape_string() + " needs " +
                           std::to_string(product(shape_)) + " values, got " +
                           std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rows/cols treat a rank-1 tensor as a single row.
  std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

  double item() const {
    if (data_.size() != 1) {
      throw ContractError("item() on tensor of shape " + shape_string());
    }
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ']';
    return os.str();
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t product(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  void check_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string());
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Indices of the k largest values, ties resolved toward the lower index.
// Returned in descending score order. Shared by the tape's top-K node and
// the plain MIL scoring path so both pick identical instances.
inline std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  if (values.empty()) throw ContractError("top-K selection over an empty list");
  if (k == 0 || k > values.size()) {
    throw ContractError("top-K size " + std::to_string(k) + " outside [1, " +
                        std::to_string(values.size()) + "]");
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    return values[a] > values[b] || (values[a] == values[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
  order.resize(k);
  return order;
}

}  // namespace devnet
