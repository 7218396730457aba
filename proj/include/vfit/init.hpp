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

#ifndef VFIT_INIT_HPP_
#define VFIT_INIT_HPP_

#include <cmath>
#include <random>

#include "vfit/tensor.hpp"

namespace vfit::init {

inline constexpr double kDenseStddev = 0.02;

/// Attention, MLP and relative-bias tables.
inline Tensor dense(Shape shape, std::mt19937_64& rng) { return truncated_normal(std::move(shape), rng, kDenseStddev); }

/// Convolution kernels: truncated normal scaled by 1/sqrt(fan_in).
inline Tensor conv(Shape shape, Index fan_in, std::mt19937_64& rng) {
  return truncated_normal(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

inline Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
inline Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

}  // namespace vfit::init

#endif  // VFIT_INIT_HPP_
