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

#include "lmprobe/lpd1.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lmprobe/error.hpp"

namespace lmprobe {
namespace {

constexpr char kMagic[4] = {'L', 'P', 'D', '1'};
constexpr std::size_t kHeaderSize = 4 + 1 + 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::uint32_t get_u32(std::span<const std::byte> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(bytes[offset + static_cast<std::size_t>(i)]) << (8 * i);
  }
  return v;
}

}  // namespace

std::string encode_lpd1(DistKind kind, std::span<const double> values) {
  if (values.size() > UINT32_MAX) throw InvalidArgument("distribution too large for LPD1");
  std::string out(kMagic, sizeof kMagic);
  out.reserve(kHeaderSize + 4 * values.size());
  out.push_back(static_cast<char>(kind));
  put_u32(out, static_cast<std::uint32_t>(values.size()));
  for (double v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Lpd1File decode_lpd1(std::span<const std::byte> bytes) {
  if (bytes.size() < kHeaderSize) throw FormatError("LPD1: truncated header");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError("LPD1: bad magic");
  const auto kind = static_cast<std::uint8_t>(bytes[4]);
  if (kind > 1) throw FormatError("LPD1: unknown kind byte " + std::to_string(kind));
  const std::uint32_t count = get_u32(bytes, 5);
  const std::size_t expected = kHeaderSize + 4 * static_cast<std::size_t>(count);
  if (bytes.size() < expected) throw FormatError("LPD1: truncated payload");
  if (bytes.size() > expected) throw FormatError("LPD1: trailing bytes after payload");

  Lpd1File file;
  file.kind = static_cast<DistKind>(kind);
  file.values.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    file.values[i] = std::bit_cast<float>(get_u32(bytes, kHeaderSize + 4 * std::size_t{i}));
  }
  return file;
}

void write_lpd1(const std::filesystem::path& path, DistKind kind, std::span<const double> values) {
  const std::string data = encode_lpd1(kind, values);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Lpd1File read_lpd1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_lpd1(std::as_bytes(std::span(data.data(), data.size())));
}

ProbVector to_prob_vector(const Lpd1File& file) {
  if (file.kind == DistKind::probabilities) return ProbVector(file.values);
  return softmax(LogitVector(file.values));
}

}  // namespace lmprobe
