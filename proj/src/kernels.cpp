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

#include "lmprobe/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <vector>

namespace lmprobe::kernels {
namespace {

constexpr std::ptrdiff_t kParallelMin = 1 << 14;

std::ptrdiff_t block_count(std::size_t n) {
  return static_cast<std::ptrdiff_t>((n + kBlock - 1) / kBlock);
}

template <typename BlockFn>
double blocked_sum(std::size_t n, BlockFn&& block_fn) {
  const std::ptrdiff_t blocks = block_count(n);
  std::vector<double> partial(static_cast<std::size_t>(blocks), 0.0);
#pragma omp parallel for schedule(static) if (static_cast<std::ptrdiff_t>(n) >= kParallelMin)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
    const std::size_t hi = std::min(n, lo + kBlock);
    partial[static_cast<std::size_t>(b)] = block_fn(lo, hi);
  }
  double total = 0.0;
  for (double s : partial) total += s;
  return total;
}

double max_parallel(std::span<const double> values) {
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  double best = -std::numeric_limits<double>::infinity();
#pragma omp parallel for reduction(max : best) if (n >= kParallelMin)
  for (std::ptrdiff_t i = 0; i < n; ++i) best = std::max(best, values[i]);
  return best;
}

double kl_term(double p, double q) {
  if (p == 0.0) return 0.0;
  if (q == 0.0) return std::numeric_limits<double>::infinity();
  return p * (std::log(p) - std::log(q));
}

}  // namespace

void softmax_reference(std::span<const double> logits, std::span<double> out) {
  double max = -std::numeric_limits<double>::infinity();
  for (double z : logits) max = std::max(max, z);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

void softmax_parallel(std::span<const double> logits, std::span<double> out) {
  const auto n = static_cast<std::ptrdiff_t>(logits.size());
  const double max = max_parallel(logits);
#pragma omp parallel for schedule(static) if (n >= kParallelMin)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = std::exp(logits[i] - max);
  const double sum = blocked_sum(logits.size(), [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += out[i];
    return s;
  });
#pragma omp parallel for schedule(static) if (n >= kParallelMin)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] /= sum;
}

double logsumexp_reference(std::span<const double> logits) {
  double max = -std::numeric_limits<double>::infinity();
  for (double z : logits) max = std::max(max, z);
  if (std::isinf(max)) return max;
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - max);
  return max + std::log(sum);
}

double logsumexp_parallel(std::span<const double> logits) {
  const double max = max_parallel(logits);
  if (std::isinf(max)) return max;
  const double sum = blocked_sum(logits.size(), [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += std::exp(logits[i] - max);
    return s;
  });
  return max + std::log(sum);
}

double kl_reference(std::span<const double> p, std::span<const double> q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += kl_term(p[i], q[i]);
  return total;
}

double kl_parallel(std::span<const double> p, std::span<const double> q) {
  return blocked_sum(p.size(), [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += kl_term(p[i], q[i]);
    return s;
  });
}

std::uint64_t hamming16_reference(std::span<const double> p, std::span<const double> q,
                                  Float16Format format) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto diff = static_cast<unsigned>(encode16(p[i], format) ^ encode16(q[i], format));
    total += static_cast<std::uint64_t>(std::popcount(diff));
  }
  return total;
}

std::uint64_t hamming16_parallel(std::span<const double> p, std::span<const double> q,
                                 Float16Format format) {
  const auto n = static_cast<std::ptrdiff_t>(p.size());
  std::uint64_t total = 0;
#pragma omp parallel for reduction(+ : total) schedule(static) if (n >= kParallelMin)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto diff = static_cast<unsigned>(encode16(p[i], format) ^ encode16(q[i], format));
    total += static_cast<std::uint64_t>(std::popcount(diff));
  }
  return total;
}

double sum_parallel(std::span<const double> values) {
  return blocked_sum(values.size(), [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += values[i];
    return s;
  });
}

}  // namespace lmprobe::kernels
