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

#include "lmprobe/half.hpp"

#include <cmath>

#include "lmprobe/error.hpp"

namespace lmprobe {
namespace {

struct Layout {
  int exponent_bits;
  int fraction_bits;
};

constexpr Layout layout_of(Float16Format format) noexcept {
  return format == Float16Format::binary16 ? Layout{5, 10} : Layout{8, 7};
}

}  // namespace

std::uint16_t encode16(double value, Float16Format format) noexcept {
  const auto [ebits, mbits] = layout_of(format);
  const int bias = (1 << (ebits - 1)) - 1;
  const int min_exp = 1 - bias;
  const std::uint32_t exp_all_ones = (1u << ebits) - 1;
  const std::uint32_t sign = std::signbit(value) ? 1u << 15 : 0u;

  if (std::isnan(value)) {
    return static_cast<std::uint16_t>(sign | (exp_all_ones << mbits) | (1u << (mbits - 1)));
  }
  const double magnitude = std::fabs(value);
  if (magnitude == 0.0) return static_cast<std::uint16_t>(sign);
  if (std::isinf(magnitude)) return static_cast<std::uint16_t>(sign | (exp_all_ones << mbits));

  int exp2 = 0;
  std::frexp(magnitude, &exp2);
  int exponent = exp2 - 1;  // magnitude in [2^exponent, 2^(exponent+1))

  if (exponent < min_exp) {
    // Subnormal range: count units of 2^(min_exp - mbits). A carry into
    // 2^mbits lands on the smallest normal, whose encoding is the same integer.
    const double units = std::nearbyint(std::ldexp(magnitude, mbits - min_exp));
    return static_cast<std::uint16_t>(sign | static_cast<std::uint32_t>(units));
  }

  double significand = std::nearbyint(std::ldexp(magnitude, mbits - exponent));
  if (significand == std::ldexp(1.0, mbits + 1)) {
    significand /= 2.0;
    ++exponent;
  }
  if (exponent > bias) return static_cast<std::uint16_t>(sign | (exp_all_ones << mbits));
  const auto fraction = static_cast<std::uint32_t>(significand) - (1u << mbits);
  return static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(exponent + bias) << mbits) |
                                    fraction);
}

double decode16(std::uint16_t bits, Float16Format format) noexcept {
  const auto [ebits, mbits] = layout_of(format);
  const int bias = (1 << (ebits - 1)) - 1;
  const std::uint32_t exp_all_ones = (1u << ebits) - 1;
  const bool negative = (bits >> 15) != 0;
  const std::uint32_t exp_field = (bits >> mbits) & exp_all_ones;
  const std::uint32_t fraction = bits & ((1u << mbits) - 1);

  double magnitude;
  if (exp_field == exp_all_ones) {
    magnitude = fraction == 0 ? INFINITY : NAN;
  } else if (exp_field == 0) {
    magnitude = std::ldexp(static_cast<double>(fraction), 1 - bias - mbits);
  } else {
    magnitude = std::ldexp(static_cast<double>(fraction | (1u << mbits)),
                           static_cast<int>(exp_field) - bias - mbits);
  }
  return negative ? -magnitude : magnitude;
}

std::string_view to_string(Float16Format format) noexcept {
  return format == Float16Format::binary16 ? "binary16" : "bfloat16";
}

Float16Format parse_float16_format(std::string_view name) {
  if (name == "binary16") return Float16Format::binary16;
  if (name == "bfloat16") return Float16Format::bfloat16;
  throw InvalidArgument("unknown 16-bit format '" + std::string(name) + "'");
}

}  // namespace lmprobe
