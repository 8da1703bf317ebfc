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
#include <span>

#include "lmprobe/half.hpp"

// Vocabulary-sized loops. Each OpenMP kernel has a serial *_reference twin
// kept for tests and the benchmark. Floating-point sums in the parallel
// kernels are reduced over fixed-size blocks in a fixed order, so their
// results do not depend on the thread count.
namespace lmprobe::kernels {

inline constexpr std::size_t kBlock = 2048;

/// out[i] = exp(logits[i] - max) / sum. logits may contain -inf.
void softmax_reference(std::span<const double> logits, std::span<double> out);
void softmax_parallel(std::span<const double> logits, std::span<double> out);

/// Log-sum-exp of the finite-or-minus-infinity inputs.
double logsumexp_reference(std::span<const double> logits);
double logsumexp_parallel(std::span<const double> logits);

/// Sum of p_i log(p_i / q_i) over p_i > 0; +inf if some q_i == 0 there.
double kl_reference(std::span<const double> p, std::span<const double> q);
double kl_parallel(std::span<const double> p, std::span<const double> q);

std::uint64_t hamming16_reference(std::span<const double> p, std::span<const double> q,
                                  Float16Format format);
std::uint64_t hamming16_parallel(std::span<const double> p, std::span<const double> q,
                                 Float16Format format);

/// Deterministic blocked sum.
double sum_parallel(std::span<const double> values);

}  // namespace lmprobe::kernels
