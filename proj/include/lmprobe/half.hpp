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

#include <cstdint>
#include <string_view>

namespace lmprobe {

/// 16-bit float encodings used for bit-level distribution comparison.
enum class Float16Format {
  binary16,  ///< IEEE 754 half: 5 exponent bits, 10 fraction bits.
  bfloat16,  ///< 8 exponent bits, 7 fraction bits.
};

/// Rounds to nearest, ties to even. Overflow gives infinity, NaN a quiet NaN.
std::uint16_t encode16(double value, Float16Format format) noexcept;

double decode16(std::uint16_t bits, Float16Format format) noexcept;

std::string_view to_string(Float16Format format) noexcept;
Float16Format parse_float16_format(std::string_view name);

}  // namespace lmprobe
