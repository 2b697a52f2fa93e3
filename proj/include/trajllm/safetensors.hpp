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

#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajllm {

// Minimal reader/writer for the safetensors multi-tensor archive layout:
// 8-byte little-endian header length, JSON header mapping tensor names to
// {dtype, shape, data_offsets}, then the raw data section. F32 and F64
// payloads are supported; values surface as doubles.

struct TensorEntry {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

class TensorArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::map<std::string, TensorEntry> read_safetensors(const std::string& path);

void write_safetensors(const std::string& path,
                       const std::map<std::string, TensorEntry>& tensors,
                       const std::string& dtype = "F32");

}  // namespace trajllm
