// Copyright 2026 The TrajLLM Authors.
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

#include "trajllm/safetensors.hpp"

#include "json.hpp"

#include <cstring>
#include <fstream>

namespace trajllm {

using nlohmann::json;

std::map<std::string, TensorEntry> read_safetensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorArchiveError("cannot open tensor archive: " + path);
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in) throw TensorArchiveError("truncated header length: " + path);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw TensorArchiveError("truncated header: " + path);
  std::vector<char> payload((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());

  json h;
  try {
    h = json::parse(header);
  } catch (const json::exception& e) {
    throw TensorArchiveError(std::string("malformed archive header: ") + e.what());
  }

  std::map<std::string, TensorEntry> out;
  for (auto it = h.begin(); it != h.end(); ++it) {
    if (it.key() == "__metadata__") continue;
    const json& meta = it.value();
    const std::string dtype = meta.at("dtype").get<std::string>();
    TensorEntry entry;
    entry.shape = meta.at("shape").get<std::vector<std::size_t>>();
    const auto offsets = meta.at("data_offsets").get<std::vector<std::size_t>>();
    if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > payload.size())
      throw TensorArchiveError("bad data_offsets for tensor " + it.key());
    std::size_t count = 1;
    for (std::size_t d : entry.shape) count *= d;
    const std::size_t bytes = offsets[1] - offsets[0];
    entry.data.resize(count);
    if (dtype == "F64") {
      if (bytes != count * sizeof(double))
        throw TensorArchiveError("size mismatch for tensor " + it.key());
      std::memcpy(entry.data.data(), payload.data() + offsets[0], bytes);
    } else if (dtype == "F32") {
      if (bytes != count * sizeof(float))
        throw TensorArchiveError("size mismatch for tensor " + it.key());
      std::vector<float> tmp(count);
      std::memcpy(tmp.data(), payload.data() + offsets[0], bytes);
      for (std::size_t i = 0; i < count; ++i) entry.data[i] = static_cast<double>(tmp[i]);
    } else {
      throw TensorArchiveError("unsupported dtype \"" + dtype + "\" for tensor " + it.key());
    }
    out.emplace(it.key(), std::move(entry));
  }
  return out;
}

void write_safetensors(const std::string& path,
                       const std::map<std::string, TensorEntry>& tensors,
                       const std::string& dtype) {
  if (dtype != "F32" && dtype != "F64")
    throw TensorArchiveError("unsupported dtype: " + dtype);
  json header = json::object();
  std::vector<char> payload;
  for (const auto& [name, entry] : tensors) {
    std::size_t count = 1;
    for (std::size_t d : entry.shape) count *= d;
    if (count != entry.data.size())
      throw TensorArchiveError("shape does not match data size for tensor " + name);
    const std::size_t start = payload.size();
    if (dtype == "F64") {
      payload.resize(start + count * sizeof(double));
      std::memcpy(payload.data() + start, entry.data.data(), count * sizeof(double));
    } else {
      std::vector<float> tmp(count);
      for (std::size_t i = 0; i < count; ++i) tmp[i] = static_cast<float>(entry.data[i]);
      payload.resize(start + count * sizeof(float));
      std::memcpy(payload.data() + start, tmp.data(), count * sizeof(float));
    }
    header[name] = {{"dtype", dtype},
                    {"shape", entry.shape},
                    {"data_offsets", {start, payload.size()}}};
  }
  const std::string header_str = header.dump();
  const std::uint64_t header_len = header_str.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TensorArchiveError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw TensorArchiveError("write failed: " + path);
}

}  // namespace trajllm
