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
#include <thread>
#include <type_traits>
#include <vector>

#include "lmprobe/error.hpp"
#include "lmprobe/oracle.hpp"
#include "lmprobe/rng.hpp"

using namespace lmprobe;

namespace {

LocalOracle table_oracle(std::vector<double> p, OracleOptions options = {}) {
  return LocalOracle(Scorer::categorical(ProbVector(std::move(p))), options);
}

const std::vector<TokenId> kEmpty;

}  // namespace

TEST_CASE("argmax under bias") {
  auto o = table_oracle({0.5, 0.3, 0.2});
  CHECK(o.argmax(kEmpty, {}) == 0u);
  CHECK(o.argmax(kEmpty, {{2, 10.0}}) == 2u);
  auto tie = table_oracle({0.5, 0.25, 0.25});
  CHECK(tie.argmax(kEmpty, {{1, std::log(2.0)}}) == 0u);
  CHECK(tie.argmax(kEmpty, {{1, std::nextafter(std::log(2.0), 1.0)}}) == 1u);
  CHECK(o.log().total() == 2);
}

TEST_CASE("argmax never exposes probabilities") {
  static_assert(std::is_same_v<decltype(std::declval<OracleAccess&>().argmax(kEmpty, BiasMap{})), TokenId>);
  static_assert(std::is_same_v<decltype(std::declval<OracleAccess&>().sample(kEmpty, BiasMap{}, 0)), TokenId>);
  auto o = table_oracle({0.5, 0.5}, {ModeSet{AccessMode::argmax_bias}, 100.0, 0.0});
  CHECK_THROWS_AS(o.top_logprobs(kEmpty, {}, 1), ModeNotAllowed);
  CHECK_THROWS_AS(o.sample(kEmpty, {}, 1), ModeNotAllowed);
  CHECK(o.log().snapshot() == QueryCounts{0, 1, 1});
}

TEST_CASE("top logprobs") {
  auto o = table_oracle({0.5, 0.3, 0.2});
  const auto all = o.top_logprobs(kEmpty, {}, 3);
  REQUIRE(all.size() == 3);
  CHECK(all[0].id == 0u);
  CHECK(all[1].id == 1u);
  CHECK(all[2].id == 2u);
  CHECK(all[1].logprob == doctest::Approx(std::log(0.3)).epsilon(1e-14));

  auto two = table_oracle({0.75, 0.25});
  const auto biased = two.top_logprobs(kEmpty, {{1, 2.0}}, 2);
  REQUIRE(biased.size() == 2);
  CHECK(biased[0].id == 1u);
  CHECK(biased[0].logprob == doctest::Approx(-0.34075295391313116537).epsilon(1e-14));
  CHECK(biased[1].id == 0u);
  CHECK(biased[1].logprob == doctest::Approx(-1.242140665245021474).epsilon(1e-14));

  const auto one = o.top_logprobs(kEmpty, {{2, 1.0}}, 1);
  CHECK(one[0].id == o.argmax(kEmpty, {{2, 1.0}}));

  CHECK_THROWS_AS(o.top_logprobs(kEmpty, {}, 4), KTooLarge);
  CHECK_THROWS_AS(o.top_logprobs(kEmpty, {}, 0), KTooLarge);
}

TEST_CASE("quantized logprobs") {
  auto o = table_oracle({0.5, 0.3, 0.2}, {ModeSet::all(), 100.0, 0.01});
  for (const auto& t : o.top_logprobs(kEmpty, {}, 3)) {
    CHECK(std::fabs(t.logprob / 0.01 - std::round(t.logprob / 0.01)) < 1e-9);
  }
}

TEST_CASE("sampling") {
  auto hot = table_oracle({0.0, 1.0, 0.0});
  for (std::uint64_t s = 0; s < 50; ++s) CHECK(hot.sample(kEmpty, {}, s) == 1u);
  auto o = table_oracle({0.75, 0.25});
  CHECK(o.sample(kEmpty, {}, 9) == o.sample(kEmpty, {}, 9));
  std::size_t zeros = 0;
  for (std::uint64_t s = 0; s < 100000; ++s) zeros += o.sample(kEmpty, {}, s) == 0;
  CHECK(std::fabs(zeros / 100000.0 - 0.75) < 0.01);
  // bias {1: log 3} makes the two tokens equally likely
  zeros = 0;
  for (std::uint64_t s = 0; s < 100000; ++s) zeros += o.sample(kEmpty, {{1, std::log(3.0)}}, s) == 0;
  CHECK(std::fabs(zeros / 100000.0 - 0.5) < 0.01);
}

TEST_CASE("request validation is counted") {
  auto o = table_oracle({0.5, 0.3, 0.2}, {ModeSet::all(), 5.0, 0.0});
  CHECK_THROWS_AS(o.argmax(kEmpty, {{1, 5.5}}), BiasCapExceeded);
  CHECK_THROWS_AS(o.argmax(kEmpty, {{1, -5.5}}), BiasCapExceeded);
  CHECK_THROWS_AS(o.argmax(kEmpty, {{7, 1.0}}), UnknownToken);
  CHECK_THROWS_AS(o.argmax(std::vector<TokenId>{3}, {}), UnknownToken);
  CHECK_NOTHROW(o.argmax(kEmpty, {{1, 5.0}}));
  CHECK(o.log().total() == 5);
}

TEST_CASE("bias map") {
  BiasMap b{{3, 1.0}, {1, 2.0}};
  b.set(3, -1.0);
  REQUIRE(b.entries().size() == 2);
  CHECK(b.entries()[0] == std::pair<TokenId, double>{1, 2.0});
  CHECK(b.entries()[1] == std::pair<TokenId, double>{3, -1.0});
  CHECK_THROWS_AS(BiasMap({{0, NAN}}).validate(4, 100), InvalidArgument);
}

TEST_CASE("mode names") {
  CHECK(ModeSet::parse("argmax,sample").allows(AccessMode::sample));
  CHECK_FALSE(ModeSet::parse("argmax,sample").allows(AccessMode::top_logprobs));
  CHECK(ModeSet::parse("argmax, top_logprobs").to_string() == "argmax,top_logprobs");
  CHECK_THROWS_AS(ModeSet::parse("argmax,logits"), InvalidArgument);
  CHECK(parse_access_mode("top_logprobs") == AccessMode::top_logprobs);
}

TEST_CASE("argmax follows the biased logits") {
  Rng rng(3);
  const auto scorer = Scorer::recurrent(50, 8, 4);
  LocalOracle o(scorer);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<TokenId> prefix(rng.below(5));
    for (auto& t : prefix) t = static_cast<TokenId>(rng.below(50));
    const auto i = static_cast<TokenId>(rng.below(50));
    const double b = rng.uniform(-10, 10);
    const auto p = scorer.score(prefix);
    std::vector<double> z(50);
    for (std::size_t j = 0; j < 50; ++j) z[j] = std::log(p[j]) + (j == i ? b : 0.0);
    REQUIRE(o.argmax(prefix, {{i, b}}) == argmax(z));
  }
}

TEST_CASE("accounting is exact under concurrency") {
  auto o = table_oracle({0.4, 0.3, 0.2, 0.1});
  o.log().enable_per_token(4);
  constexpr int kThreads = 16;
  constexpr int kCalls = 2000;
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      for (int c = 0; c < kCalls; ++c) {
        const auto id = static_cast<TokenId>((t + c) % 4);
        switch (c % 3) {
          case 0:
            o.argmax(kEmpty, {{id, 1.0}});
            break;
          case 1:
            o.top_logprobs(kEmpty, {{id, 1.0}}, 2);
            break;
          default:
            o.sample(kEmpty, {{id, 1.0}}, static_cast<std::uint64_t>(c));
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  const auto counts = o.log().snapshot();
  CHECK(counts.total() == kThreads * kCalls);
  CHECK(counts.argmax + counts.top_logprobs + counts.sample == counts.total());
  std::uint64_t per_token = 0;
  for (auto n : o.log().per_token()) per_token += n;
  CHECK(per_token == kThreads * kCalls);
}
