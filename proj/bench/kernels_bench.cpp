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

// Serial reference vs OpenMP paths.

#include <benchmark/benchmark.h>

#include <vector>

#include "lmprobe/extraction.hpp"
#include "lmprobe/kernels.hpp"
#include "lmprobe/rng.hpp"
#include "lmprobe/scorer.hpp"

using namespace lmprobe;

namespace {

std::vector<double> random_logits(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = 2.0 * rng.normal();
  return v;
}

std::vector<double> random_probs(std::size_t n, std::uint64_t seed) {
  std::vector<double> p(n);
  kernels::softmax_reference(random_logits(n, seed), p);
  return p;
}

template <void (*Softmax)(std::span<const double>, std::span<double>)>
void BM_softmax(benchmark::State& state) {
  const auto logits = random_logits(static_cast<std::size_t>(state.range(0)), 1);
  std::vector<double> out(logits.size());
  for (auto _ : state) {
    Softmax(logits, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_softmax<kernels::softmax_reference>)->Name("softmax/reference")->Range(1 << 10, 1 << 20);
BENCHMARK(BM_softmax<kernels::softmax_parallel>)->Name("softmax/parallel")->Range(1 << 10, 1 << 20);

template <double (*Kl)(std::span<const double>, std::span<const double>)>
void BM_kl(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto p = random_probs(n, 2), q = random_probs(n, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Kl(p, q));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_kl<kernels::kl_reference>)->Name("kl/reference")->Range(1 << 10, 1 << 20);
BENCHMARK(BM_kl<kernels::kl_parallel>)->Name("kl/parallel")->Range(1 << 10, 1 << 20);

template <std::uint64_t (*Hamming)(std::span<const double>, std::span<const double>, Float16Format)>
void BM_hamming16(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto p = random_probs(n, 4), q = random_probs(n, 5);
  for (auto _ : state) benchmark::DoNotOptimize(Hamming(p, q, Float16Format::binary16));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_hamming16<kernels::hamming16_reference>)->Name("hamming16/reference")->Range(1 << 10, 1 << 20);
BENCHMARK(BM_hamming16<kernels::hamming16_parallel>)->Name("hamming16/parallel")->Range(1 << 10, 1 << 20);

void BM_extract_reference(benchmark::State& state) {
  LocalOracle oracle(Scorer::categorical(gaussian_logit_distribution(static_cast<std::size_t>(state.range(0)), 2.0, 7)));
  for (auto _ : state) benchmark::DoNotOptimize(extract_binary_search_reference(oracle, {}, ExtractionConfig{}));
}
BENCHMARK(BM_extract_reference)->Name("extract/reference")->Arg(256)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_extract_parallel(benchmark::State& state) {
  LocalOracle oracle(Scorer::categorical(gaussian_logit_distribution(static_cast<std::size_t>(state.range(0)), 2.0, 7)));
  ExtractionConfig cfg;
  cfg.workers = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(extract_binary_search(oracle, {}, cfg));
}
BENCHMARK(BM_extract_parallel)
    ->Name("extract/parallel")
    ->ArgsProduct({{256, 1000}, {1, 4}})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
