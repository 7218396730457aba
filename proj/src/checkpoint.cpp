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

#include "vfit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace vfit {
namespace {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

constexpr char kMagic[8] = {'V', 'F', 'I', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated archive " + path.string());
  return v;
}

}  // namespace

const Tensor* TensorArchive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& TensorArchive::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (t == nullptr) throw DataError("archive has no tensor '" + name + "'");
  return *t;
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  nlohmann::json header;
  header["meta"] = archive.meta;
  header["tensors"] = nlohmann::json::array();
  Index offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write archive " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, kArchiveVersion);
    write_pod<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : archive.tensors) {
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw DataError("failed while writing archive " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open archive " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + " is not a VFIT archive");
  }
  const auto version = read_pod<std::uint32_t>(is, path);
  if (version != kArchiveVersion) {
    throw DataError(path.string() + ": unsupported archive version " + std::to_string(version));
  }
  const auto header_len = read_pod<std::uint64_t>(is, path);
  std::string text(header_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_len))) throw DataError("truncated archive " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": corrupt archive header: " + e.what());
  }
  TensorArchive archive;
  archive.meta = header.value("meta", nlohmann::json::object());
  const std::streampos payload = is.tellg();
  for (const auto& entry : header.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const Index offset = entry.at("offset").get<Index>();
    Tensor t(shape);
    is.seekg(payload + static_cast<std::streamoff>(offset * sizeof(double)));
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)))) {
      throw DataError("truncated archive " + path.string() + " at tensor " + entry.at("name").get<std::string>());
    }
    archive.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return archive;
}

}  // namespace vfit
