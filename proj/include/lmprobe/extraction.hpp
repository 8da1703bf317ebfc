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
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lmprobe/dist.hpp"
#include "lmprobe/oracle.hpp"

namespace lmprobe {

struct BinarySearchMode {};

enum class Top2Variant { exact, paper };

struct Top2Mode {
  Top2Variant variant = Top2Variant::exact;
};

struct MonteCarloMode {
  std::uint64_t samples = 10000;
  double alpha = 0.0;
  std::uint64_t seed = 0;
};

struct ExtractionConfig {
  double delta = 0x1.0p-12;  ///< Bisection precision.
  double epsilon = 1.0;      ///< Initial upper bound of the doubling phase.
  double bias_cap = 100.0;
  std::size_t workers = 1;
  std::variant<BinarySearchMode, Top2Mode, MonteCarloMode> mode = BinarySearchMode{};

  /// Throws InvalidArgument unless 0 < delta < epsilon <= bias_cap,
  /// workers >= 1 and, for Monte Carlo, samples >= 1 and alpha >= 0.
  void validate() const;
  /// "binary", "top2-exact", "top2-paper" or "monte-carlo".
  std::string mode_name() const;
};

struct ExtractionResult {
  /// Logit of each token minus the anchor's; saturated ids hold -bias_cap,
  /// Monte Carlo zero counts hold -inf.
  std::vector<double> relative_logits;
  TokenId anchor = 0;                   ///< Unbiased (or empirical) argmax.
  std::optional<double> anchor_logprob;  ///< Known for top-2 extraction.
  std::vector<TokenId> saturated;        ///< Ascending.
  QueryCounts queries;                  ///< Calls that contributed to this result.
  std::vector<std::uint32_t> queries_per_token;
  double max_upper_bound = 0.0;  ///< Largest doubling-phase bound reached.
  ProbVector reconstructed;
};

/// Outcome of the per-token bias search.
struct LogitSearch {
  double value = 0.0;  ///< -M, the negated minimal bias.
  bool saturated = false;
  std::uint32_t queries = 0;
  double upper_bound = 0.0;  ///< U after the doubling phase.
};

/// Doubling from epsilon (the last step clamped to the cap) until token i
/// becomes the argmax, then bisection on [0, U] until U - L <= delta.
LogitSearch search_logit(OracleAccess& oracle, std::span<const TokenId> prefix, TokenId token,
                         const ExtractionConfig& cfg);

/// As search_logit but throws Saturated instead of flagging it.
double find_logit(OracleAccess& oracle, std::span<const TokenId> prefix, TokenId token,
                  const ExtractionConfig& cfg);

/// Completed per-token searches of an interrupted extraction.
struct ExtractionProgress {
  std::optional<TokenId> anchor;
  std::vector<std::optional<LogitSearch>> tokens;

  std::size_t completed() const;
};

/// One baseline argmax call, then search_logit for every other token with
/// cfg.workers OpenMP threads. The result does not depend on the worker count.
ExtractionResult extract_binary_search(OracleAccess& oracle, std::span<const TokenId> prefix,
                                       const ExtractionConfig& cfg);

/// Resumable form: finished tokens are kept in `progress`. If a token's
/// search throws (e.g. TransportError) the remaining tokens still run, then
/// the error of the lowest failing token id is rethrown.
ExtractionResult extract_binary_search(OracleAccess& oracle, std::span<const TokenId> prefix,
                                       const ExtractionConfig& cfg, ExtractionProgress& progress);

/// Serial reference for extract_binary_search.
ExtractionResult extract_binary_search_reference(OracleAccess& oracle,
                                                 std::span<const TokenId> prefix,
                                                 const ExtractionConfig& cfg);

/// Top-2 logprob extraction: biases each token to the top and reads the
/// drop Delta in the anchor's logprob.
ExtractionResult extract_top2(OracleAccess& oracle, std::span<const TokenId> prefix,
                              Top2Variant variant, const ExtractionConfig& cfg);

/// Frequency estimate from cfg's Monte Carlo mode: N seeded draws,
/// p_i = (count_i + alpha) / (N + alpha |V|).
ExtractionResult extract_monte_carlo(OracleAccess& oracle, std::span<const TokenId> prefix,
                                     const ExtractionConfig& cfg);

/// Dispatches on cfg.mode.
ExtractionResult extract(OracleAccess& oracle, std::span<const TokenId> prefix,
                         const ExtractionConfig& cfg);

// Top-2 algebra. `drop` is Delta = log p(v*) - log p(v*; b).

/// log p(v) = log(expm1(Delta)) - log(expm1(b)).
double top2_logprob_exact(double drop, double bias);
/// Normalizer estimate log Z = b - log(expm1(Delta)), which assumes the
/// biased normalizer is Z + exp(b).
double top2_log_normalizer_paper(double drop, double bias);
/// f(v) = log p(v; b) + log(Z + exp(b)) - b, log p(v) = f(v) - log Z.
double top2_logprob_paper(double drop, double bias, double biased_logprob);

/// |V| * (ceil(log2(B / eps)) + ceil(log2(U / delta)) + 1).
std::uint64_t binary_search_query_bound(std::size_t vocab_size, const ExtractionConfig& cfg,
                                        double max_upper_bound);

/// {mode, delta, epsilon, bias_cap, queries_total, queries_per_mode, saturated_ids, ...}
std::string extraction_sidecar_json(const ExtractionResult& result, const ExtractionConfig& cfg);

}  // namespace lmprobe
