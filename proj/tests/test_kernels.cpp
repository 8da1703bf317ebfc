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
#include <vector>

#include <omp.h>

#include "lmprobe/kernels.hpp"
#include "lmprobe/rng.hpp"
#include "support/oracles.hpp"

using namespace lmprobe;

namespace {

std::vector<double> random_logits(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> z(n);
  for (auto& v : z) v = 4.0 * rng.normal();
  return z;
}

std::vector<double> normalized(std::vector<double> v) {
  double s = 0;
  for (double x : v) s += x;
  for (auto& x : v) x /= s;
  return v;
}

}  // namespace

TEST_CASE("parallel kernels agree with the serial reference") {
  for (std::size_t n : {2u, 17u, 2048u, 5000u, 40000u}) {
    CAPTURE(n);
    const auto z = random_logits(n, n);
    std::vector<double> a(n), b(n);
    kernels::softmax_reference(z, a);
    kernels::softmax_parallel(z, b);
    const auto ref = oracle::softmax(z);
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
      REQUIRE(a[i] == doctest::Approx(ref[i]).epsilon(1e-10));
    }
    CHECK(kernels::logsumexp_parallel(z) == doctest::Approx(kernels::logsumexp_reference(z)).epsilon(1e-14));

    const auto q = normalized(std::vector<double>(b.rbegin(), b.rend()));
    const double kl_ref = kernels::kl_reference(a, q);
    CHECK(kernels::kl_parallel(a, q) == doctest::Approx(kl_ref).epsilon(1e-12));
    CHECK(kl_ref == doctest::Approx(static_cast<double>(oracle::kl(a, q))).epsilon(1e-10));

    CHECK(kernels::hamming16_parallel(a, q, Float16Format::binary16) ==
          kernels::hamming16_reference(a, q, Float16Format::binary16));
    CHECK(kernels::hamming16_parallel(a, q, Float16Format::bfloat16) ==
          kernels::hamming16_reference(a, q, Float16Format::bfloat16));
  }
}

TEST_CASE("blocked reductions do not depend on the thread count") {
  const auto z = random_logits(100000, 3);
  omp_set_num_threads(1);
  const double s1 = kernels::sum_parallel(z);
  const double l1 = kernels::logsumexp_parallel(z);
  omp_set_num_threads(7);
  CHECK(kernels::sum_parallel(z) == s1);
  CHECK(kernels::logsumexp_parallel(z) == l1);
  omp_set_num_threads(omp_get_num_procs());
}

TEST_CASE("softmax handles -inf entries") {
  const std::vector<double> z{0.0, -INFINITY, 0.0};
  std::vector<double> out(3);
  kernels::softmax_parallel(z, out);
  CHECK(out[0] == 0.5);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 0.5);
}

TEST_CASE("kl is infinite off support") {
  const std::vector<double> p{0.5, 0.5};
  const std::vector<double> q{1.0, 0.0};
  CHECK(std::isinf(kernels::kl_reference(p, q)));
  CHECK(std::isinf(kernels::kl_parallel(p, q)));
}
