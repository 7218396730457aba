//  Copyright (c) 2026 The VFIT Authors
//
//  Licensed under the Apache License, Version 2.0 (the "License");
//  you may not use this file except in compliance with the License.
//  You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
//  Unless required by applicable law or agreed to in writing, software
//  distributed under the License is distributed on an "AS IS" BASIS,
//  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//  See the License for the specific language governing permissions and
//  limitations under the License.

#ifndef VFIT_TENSOR_HPP_
#define VFIT_TENSOR_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <new>
#include <vector>

namespace vfit {

using Index = std::int64_t;
using Shape = std::vector<Index>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible or invalid tensor shapes, including divisibility violations.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, unreadable or malformed input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values encountered where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Cache-line aligned storage so vectorised kernels see the same alignment on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlignment}); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major double tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  Index dim(std::size_t axis) const;
  Index numel() const noexcept { return static_cast<Index>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  template <typename... I>
  double& at(I... idx) {
    return data_[static_cast<std::size_t>(offset({static_cast<Index>(idx)...}))];
  }
  template <typename... I>
  double at(I... idx) const {
    return data_[static_cast<std::size_t>(offset({static_cast<Index>(idx)...}))];
  }

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(double v);
  bool all_finite() const;

 private:
  Index offset(std::initializer_list<Index> idx) const;

  Shape shape_;
  Storage data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

Tensor random_uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);
Tensor random_normal(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
/// Normal samples redrawn until they fall within two standard deviations.
Tensor truncated_normal(Shape shape, std::mt19937_64& rng, double stddev);

/// Permutes axes: result.dim(i) = x.dim(order[i]).
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);

}  // namespace vfit

#endif  // VFIT_TENSOR_HPP_
