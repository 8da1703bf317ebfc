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

#include <doctest.h>

#include <cmath>
#include <limits>

#include "lmprobe/half.hpp"
#include "lmprobe/rng.hpp"
#include "support/oracles.hpp"

using namespace lmprobe;

namespace {

const oracle::NearestSearch& binary16_oracle() {
  static const oracle::NearestSearch s(oracle::decode_binary16);
  return s;
}

const oracle::NearestSearch& bfloat16_oracle() {
  static const oracle::NearestSearch s(oracle::decode_bfloat16);
  return s;
}

}  // namespace

TEST_CASE("binary16 known encodings") {
  CHECK(encode16(0.5, Float16Format::binary16) == 0x3800);
  CHECK(encode16(0.25, Float16Format::binary16) == 0x3400);
  CHECK(encode16(1.0, Float16Format::binary16) == 0x3c00);
  CHECK(encode16(-2.0, Float16Format::binary16) == 0xc000);
  CHECK(encode16(65504.0, Float16Format::binary16) == 0x7bff);
  CHECK(encode16(65520.0, Float16Format::binary16) == 0x7c00);
  CHECK(encode16(0x1.0p-24, Float16Format::binary16) == 0x0001);
  CHECK(encode16(0x1.0p-25, Float16Format::binary16) == 0x0000);  // tie to even
  CHECK(encode16(0.0, Float16Format::binary16) == 0x0000);
  CHECK(encode16(-0.0, Float16Format::binary16) == 0x8000);
  CHECK(std::isnan(decode16(encode16(NAN, Float16Format::binary16), Float16Format::binary16)));
  CHECK(encode16(1.0, Float16Format::bfloat16) == 0x3f80);
}

TEST_CASE("every encoding decodes to the reference value and re-encodes to itself") {
  for (std::uint32_t b = 0; b <= 0xffff; ++b) {
    const auto bits = static_cast<std::uint16_t>(b);
    const double ref16 = oracle::decode_binary16(bits);
    const double refbf = oracle::decode_bfloat16(bits);
    if (std::isnan(ref16)) {
      CHECK(std::isnan(decode16(bits, Float16Format::binary16)));
    } else {
      REQUIRE(decode16(bits, Float16Format::binary16) == ref16);
      REQUIRE(encode16(ref16, Float16Format::binary16) == bits);
    }
    if (!std::isnan(refbf)) {
      REQUIRE(decode16(bits, Float16Format::bfloat16) == refbf);
      REQUIRE(encode16(refbf, Float16Format::bfloat16) == bits);
    }
  }
}

TEST_CASE("rounding matches nearest-value search") {
  Rng rng(7);
  for (int i = 0; i < 200000; ++i) {
    // log-uniform magnitudes spanning subnormals to overflow
    const double x = std::ldexp(rng.uniform(1.0, 2.0), static_cast<int>(rng.below(60)) - 40) *
                     (rng.below(2) ? -1.0 : 1.0);
    REQUIRE(encode16(x, Float16Format::binary16) == binary16_oracle().encode(x));
    const double y = std::ldexp(rng.uniform(1.0, 2.0), static_cast<int>(rng.below(280)) - 140);
    REQUIRE(encode16(y, Float16Format::bfloat16) == bfloat16_oracle().encode(y));
  }
}

TEST_CASE("exact halfway points round to even") {
  for (std::uint32_t b = 0; b < 0x7bff; ++b) {
    const double lo = oracle::decode_binary16(static_cast<std::uint16_t>(b));
    const double hi = oracle::decode_binary16(static_cast<std::uint16_t>(b + 1));
    const double mid = lo + (hi - lo) / 2;
    REQUIRE(encode16(mid, Float16Format::binary16) == binary16_oracle().encode(mid));
  }
}

TEST_CASE("format names") {
  CHECK(parse_float16_format("binary16") == Float16Format::binary16);
  CHECK(parse_float16_format("bfloat16") == Float16Format::bfloat16);
  CHECK(to_string(Float16Format::bfloat16) == "bfloat16");
  CHECK_THROWS(parse_float16_format("fp8"));
}
