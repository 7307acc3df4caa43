// Copyright (c) 2026 The prosody-dub Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Binary containers: model checkpoints and .npy feature files.
//
// Checkpoint layout (little endian):
//   "PRSDCKPT" | u32 version | u64 header_bytes | header JSON | tensor data
// The header holds the model config, free-form metadata and a tensor index
// (name, rows, cols, byte offset into the data section).

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "prosody/backbone.hpp"
#include "prosody/common.hpp"

namespace prosody::io {

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'S', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? "f32" : "f64";
}

namespace detail {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("truncated binary file");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace detail

template <typename S>
std::string serialize_checkpoint(backbone::Model<S>& model, const nlohmann::json& metadata) {
  std::string data;
  nlohmann::json index = nlohmann::json::array();
  model.for_each_parameter([&](const std::string& name, Parameter<S>& p) {
    index.push_back({{"name", name},
                     {"rows", p.value.rows()},
                     {"cols", p.value.cols()},
                     {"offset", data.size()}});
    data.append(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::size_t>(p.value.size()) * sizeof(S));
  });
  const nlohmann::json header = {{"dtype", dtype_name<S>()},
                                 {"model", model.config},
                                 {"metadata", metadata},
                                 {"tensors", index}};
  const std::string header_text = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, header_text.size());
  out += header_text;
  out += data;
  return out;
}

template <typename S>
void save_checkpoint(const std::string& path, backbone::Model<S>& model,
                     const nlohmann::json& metadata) {
  detail::write_file(path, serialize_checkpoint(model, metadata));
}

template <typename S>
struct Checkpoint {
  backbone::Model<S> model;
  nlohmann::json metadata;
};

// Rebuilds the model from the embedded config and verifies every tensor
// against the shapes that config implies.
template <typename S>
Checkpoint<S> parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw IoError("not a checkpoint file");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_bytes = detail::get<std::uint64_t>(bytes, pos);
  if (pos + header_bytes > bytes.size()) throw IoError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(bytes.substr(pos, header_bytes));
  pos += header_bytes;
  if (header.at("dtype").get<std::string>() != dtype_name<S>()) {
    throw ShapeError("checkpoint stores " + header.at("dtype").get<std::string>() +
                     " parameters, expected " + dtype_name<S>());
  }
  Checkpoint<S> ckpt{backbone::Model<S>(header.at("model").get<backbone::ModelConfig>()),
                     header.value("metadata", nlohmann::json::object())};
  std::map<std::string, nlohmann::json> tensors;
  for (const auto& t : header.at("tensors")) tensors[t.at("name").get<std::string>()] = t;
  const std::size_t data_begin = pos;
  std::size_t matched = 0;
  ckpt.model.for_each_parameter([&](const std::string& name, Parameter<S>& p) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ShapeError("checkpoint lacks tensor " + name);
    const auto rows = it->second.at("rows").get<Eigen::Index>();
    const auto cols = it->second.at("cols").get<Eigen::Index>();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw ShapeError("tensor " + name + " is " + std::to_string(rows) + "x" +
                       std::to_string(cols) + ", config implies " +
                       std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    const std::size_t offset = data_begin + it->second.at("offset").get<std::size_t>();
    const std::size_t size = static_cast<std::size_t>(p.value.size()) * sizeof(S);
    if (offset + size > bytes.size()) throw IoError("truncated tensor " + name);
    std::memcpy(p.value.data(), bytes.data() + offset, size);
    p.zero_grad();
    ++matched;
  });
  if (matched != tensors.size()) throw ShapeError("checkpoint holds unexpected tensors");
  return ckpt;
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  return parse_checkpoint<S>(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// .npy (format 1.0, C order, little-endian f4/f8, 2-D)

template <typename S>
std::string serialize_npy(const Mat<S>& m) {
  std::string dict = std::string("{'descr': '<") + (std::is_same_v<S, float> ? "f4" : "f8") +
                     "', 'fortran_order': False, 'shape': (" + std::to_string(m.rows()) + ", " +
                     std::to_string(m.cols()) + "), }";
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict += '\n';
  std::string out = "\x93NUMPY";
  out += '\x01';
  out += '\x00';
  detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(dict.size()));
  out += dict;
  out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(S));
  return out;
}

template <typename S>
void write_npy(const std::string& path, const Mat<S>& m) {
  detail::write_file(path, serialize_npy(m));
}

inline Mat<double> read_npy(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0) {
    throw IoError(path + ": not an .npy file");
  }
  std::size_t pos = 8;
  std::size_t header_len = 0;
  if (bytes[6] == 1) {
    header_len = detail::get<std::uint16_t>(bytes, pos);
  } else {
    header_len = detail::get<std::uint32_t>(bytes, pos);
  }
  const std::string header = bytes.substr(pos, header_len);
  pos += header_len;
  const bool f4 = header.find("'<f4'") != std::string::npos;
  const bool f8 = header.find("'<f8'") != std::string::npos;
  if ((!f4 && !f8) || header.find("'fortran_order': False") == std::string::npos) {
    throw IoError(path + ": only C-order <f4/<f8 arrays are supported");
  }
  const auto open = header.find('(');
  const auto close = header.find(')', open);
  std::vector<long> shape;
  std::string dims = header.substr(open + 1, close - open - 1);
  std::size_t start = 0;
  while (start < dims.size()) {
    auto comma = dims.find(',', start);
    const std::string part = dims.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (part.find_first_not_of(' ') != std::string::npos) shape.push_back(std::stol(part));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (shape.size() != 2) throw IoError(path + ": expected a 2-D array");
  Mat<double> m(shape[0], shape[1]);
  const std::size_t count = static_cast<std::size_t>(m.size());
  const std::size_t width = f4 ? 4 : 8;
  if (pos + count * width > bytes.size()) throw IoError(path + ": truncated data");
  for (std::size_t i = 0; i < count; ++i) {
    if (f4) {
      float v;
      std::memcpy(&v, bytes.data() + pos + 4 * i, 4);
      m.data()[i] = v;
    } else {
      std::memcpy(m.data() + i, bytes.data() + pos + 8 * i, 8);
    }
  }
  return m;
}

}  // namespace prosody::io
