// Copyright 2026 The TKWS Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef KWS_KWSM_H_
#define KWS_KWSM_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kws/model.h"

namespace kws {

// KWSM container, little-endian:
//   "KWSM" | u16 version | u32 header_len | header (UTF-8 JSON)
//   | zero pad to 16 | blobs, each starting on a 16-byte boundary
//   | u32 CRC32 of every preceding byte
// Blob offsets in the header's "blobs" table are relative to the first blob.
inline constexpr uint16_t kModelFormatVersion = 1;

struct KwsmBlob {
  std::string dtype;  // "f32", "i8" or "i32"
  size_t count = 0;
  std::vector<uint8_t> bytes;
};

struct KwsmContainer {
  nlohmann::json header;  // "blobs" is filled in by encode_container
  std::vector<KwsmBlob> blobs;
};

std::vector<uint8_t> encode_container(const KwsmContainer& container);
// Checks size, magic, version and CRC before parsing the header.
KwsmContainer decode_container(std::span<const uint8_t> bytes);

std::vector<uint8_t> encode_model(const ModelGraph& graph);
ModelGraph decode_model(std::span<const uint8_t> bytes);

void save_model(const ModelGraph& graph, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes);

}  // namespace kws

#endif  // KWS_KWSM_H_
