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

// Tensor archive used for model checkpoints, optimizer state and debug dumps.
//
// Layout (all integers little-endian):
//   bytes 0..7    magic "VFITCKPT"
//   uint32        format version (1)
//   uint64        header length in bytes
//   header        UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}
//   payload       float64 values of every tensor, row-major, at header-relative offsets
//                 counted in elements from the start of the payload

#ifndef VFIT_CHECKPOINT_HPP_
#define VFIT_CHECKPOINT_HPP_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vfit/tensor.hpp"

namespace vfit {

inline constexpr std::uint32_t kArchiveVersion = 1;

struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void put(const std::string& name, const Tensor& t) { tensors.emplace_back(name, t); }
  const Tensor* find(const std::string& name) const;
  /// Throws DataError naming the missing entry.
  const Tensor& at(const std::string& name) const;
};

/// Written to a sibling temporary file and renamed, so readers never see a partial archive.
void save_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& path);

}  // namespace vfit

#endif  // VFIT_CHECKPOINT_HPP_
