/**
 * Copyright 2026 The lmprobe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lmprobe/dist.hpp"

namespace lmprobe {

// LPD1 layout, all little-endian:
//   "LPD1" | u8 kind | u32 count | count x binary32
enum class DistKind : std::uint8_t { logits = 0, probabilities = 1 };

struct Lpd1File {
  DistKind kind = DistKind::probabilities;
  std::vector<double> values;  ///< Widened from the stored binary32 values.
};

std::string encode_lpd1(DistKind kind, std::span<const double> values);
/// Throws FormatError on a wrong magic, unknown kind, truncation or trailing bytes.
Lpd1File decode_lpd1(std::span<const std::byte> bytes);

void write_lpd1(const std::filesystem::path& path, DistKind kind, std::span<const double> values);
Lpd1File read_lpd1(const std::filesystem::path& path);

/// Probabilities are taken as stored; logits go through softmax.
ProbVector to_prob_vector(const Lpd1File& file);

}  // namespace lmprobe
