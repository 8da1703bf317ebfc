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

#include "lmprobe/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "lmprobe/error.hpp"
#include "lmprobe/kernels.hpp"

namespace lmprobe {

void ExtractionConfig::validate() const {
  if (!(delta > 0.0) || !(delta < epsilon) || !(epsilon <= bias_cap) || !std::isfinite(bias_cap)) {
    throw InvalidArgument("extraction requires 0 < delta < epsilon <= bias_cap");
  }
  if (workers < 1) throw InvalidArgument("workers must be at least 1");
  if (const auto* mc = std::get_if<MonteCarloMode>(&mode)) {
    if (mc->samples < 1) throw InvalidArgument("Monte Carlo needs at least one sample");
    if (!(mc->alpha >= 0.0) || !std::isfinite(mc->alpha)) {
      throw InvalidArgument("Monte Carlo smoothing must be non-negative");
    }
  }
}

std::string ExtractionConfig::mode_name() const {
  if (std::holds_alternative<BinarySearchMode>(mode)) return "binary";
  if (const auto* t = std::get_if<Top2Mode>(&mode)) {
    return t->variant == Top2Variant::exact ? "top2-exact" : "top2-paper";
  }
  return "monte-carlo";
}

std::size_t ExtractionProgress::completed() const {
  return static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [](const auto& t) { return t.has_value(); }));
}

// ---------------------------------------------------------------------------
// Binary search

LogitSearch search_logit(OracleAccess& oracle, std::span<const TokenId> prefix, TokenId token,
                         const ExtractionConfig& cfg) {
  LogitSearch out;
  const double cap = cfg.bias_cap;
  double upper = std::min(cfg.epsilon, cap);
  while (true) {
    ++out.queries;
    if (oracle.argmax(prefix, BiasMap{{token, upper}}) == token) break;
    if (upper >= cap) {
      out.saturated = true;
      out.value = -cap;
      out.upper_bound = upper;
      return out;
    }
    upper = std::min(2.0 * upper, cap);
  }
  out.upper_bound = upper;

  double lower = 0.0;
  double mid = (lower + upper) / 2.0;
  while (upper - lower > cfg.delta) {
    ++out.queries;
    if (oracle.argmax(prefix, BiasMap{{token, mid}}) == token) {
      upper = mid;
    } else {
      lower = mid;
    }
    mid = (lower + upper) / 2.0;
  }
  out.value = -mid;
  return out;
}

double find_logit(OracleAccess& oracle, std::span<const TokenId> prefix, TokenId token,
                  const ExtractionConfig& cfg) {
  cfg.validate();
  if (token >= oracle.vocab_size()) throw UnknownToken(token);
  const auto s = search_logit(oracle, prefix, token, cfg);
  if (s.saturated) throw Saturated(token);
  return s.value;
}

namespace {

ProbVector reconstruct(std::span<const double> relative_logits) {
  std::vector<double> p(relative_logits.size());
  kernels::softmax_parallel(relative_logits, p);
  return ProbVector(std::move(p));
}

ExtractionResult assemble(std::size_t vocab_size, TokenId anchor, AccessMode mode,
                          std::span<const std::optional<LogitSearch>> searches,
                          std::uint64_t baseline_queries) {
  std::vector<double> relative(vocab_size, 0.0);
  std::vector<std::uint32_t> per_token(vocab_size, 0);
  std::vector<TokenId> saturated;
  double max_upper = 0.0;
  std::uint64_t total = baseline_queries;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    if (i == anchor) continue;
    const LogitSearch& s = *searches[i];
    relative[i] = s.value;
    per_token[i] = s.queries;
    total += s.queries;
    max_upper = std::max(max_upper, s.upper_bound);
    if (s.saturated) saturated.push_back(static_cast<TokenId>(i));
  }
  QueryCounts counts;
  counts[mode] = total;
  ProbVector reconstructed = reconstruct(relative);
  return ExtractionResult{std::move(relative), anchor,    std::nullopt,
                          std::move(saturated), counts,   std::move(per_token),
                          max_upper,            std::move(reconstructed)};
}

/// Runs body(i) for every token still missing, in parallel; collects
/// per-token exceptions and rethrows the one with the lowest id.
template <typename Body>
void fan_out(std::size_t vocab_size, std::size_t workers, TokenId skip,
             std::vector<std::optional<LogitSearch>>& slots, Body&& body) {
  std::vector<std::exception_ptr> errors(vocab_size);
  const auto n = static_cast<std::ptrdiff_t>(vocab_size);
#pragma omp parallel for schedule(dynamic, 1) num_threads(static_cast<int>(workers))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto id = static_cast<TokenId>(i);
    if (id == skip || slots[i].has_value()) continue;
    try {
      slots[i] = body(id);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

ExtractionResult extract_binary_search(OracleAccess& oracle, std::span<const TokenId> prefix,
                                       const ExtractionConfig& cfg, ExtractionProgress& progress) {
  cfg.validate();
  const std::size_t n = oracle.vocab_size();
  if (!progress.anchor) progress.anchor = oracle.argmax(prefix, BiasMap{});
  progress.tokens.resize(n);
  fan_out(n, cfg.workers, *progress.anchor, progress.tokens,
          [&](TokenId id) { return search_logit(oracle, prefix, id, cfg); });
  return assemble(n, *progress.anchor, AccessMode::argmax_bias, progress.tokens, 1);
}

ExtractionResult extract_binary_search(OracleAccess& oracle, std::span<const TokenId> prefix,
                                       const ExtractionConfig& cfg) {
  ExtractionProgress progress;
  return extract_binary_search(oracle, prefix, cfg, progress);
}

ExtractionResult extract_binary_search_reference(OracleAccess& oracle,
                                                 std::span<const TokenId> prefix,
                                                 const ExtractionConfig& cfg) {
  cfg.validate();
  const std::size_t n = oracle.vocab_size();
  const TokenId anchor = oracle.argmax(prefix, BiasMap{});
  std::vector<std::optional<LogitSearch>> searches(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i != anchor) searches[i] = search_logit(oracle, prefix, static_cast<TokenId>(i), cfg);
  }
  return assemble(n, anchor, AccessMode::argmax_bias, searches, 1);
}

// ---------------------------------------------------------------------------
// Top-2

double top2_logprob_exact(double drop, double bias) {
  return std::log(std::expm1(drop)) - std::log(std::expm1(bias));
}

double top2_log_normalizer_paper(double drop, double bias) {
  return bias - std::log(std::expm1(drop));
}

double top2_logprob_paper(double drop, double bias, double biased_logprob) {
  const double log_z = top2_log_normalizer_paper(drop, bias);
  // log(Z + e^b) evaluated as a log-sum-exp.
  const double hi = std::max(log_z, bias);
  const double log_z_plus = hi + std::log1p(std::exp(std::min(log_z, bias) - hi));
  const double unnormalized = biased_logprob + log_z_plus - bias;
  return unnormalized - log_z;
}

ExtractionResult extract_top2(OracleAccess& oracle, std::span<const TokenId> prefix,
                              Top2Variant variant, const ExtractionConfig& cfg) {
  cfg.validate();
  const std::size_t n = oracle.vocab_size();
  const auto baseline = oracle.top_logprobs(prefix, BiasMap{}, 2);
  const TokenId anchor = baseline.at(0).id;
  const double anchor_lp = baseline.at(0).logprob;
  const double cap = cfg.bias_cap;

  auto solve = [&](TokenId v) {
    LogitSearch s;
    double bias = std::min(cfg.epsilon, cap);
    while (true) {
      ++s.queries;
      const auto top = oracle.top_logprobs(prefix, BiasMap{{v, bias}}, 2);
      if (top.at(0).id == v) {
        if (top.at(1).id != anchor) {
          throw DegenerateDelta("token " + std::to_string(v) + ": second-ranked token is " +
                                std::to_string(top[1].id) + ", expected " + std::to_string(anchor));
        }
        const double drop = anchor_lp - top[1].logprob;
        if (!(drop > 1e-300)) {
          throw DegenerateDelta("token " + std::to_string(v) + ": non-positive logprob drop " +
                                std::to_string(drop));
        }
        const double lp = variant == Top2Variant::exact ? top2_logprob_exact(drop, bias)
                                                        : top2_logprob_paper(drop, bias, top[0].logprob);
        s.value = lp - anchor_lp;
        s.upper_bound = bias;
        return s;
      }
      if (bias >= cap) {
        s.saturated = true;
        s.value = -cap;
        s.upper_bound = bias;
        return s;
      }
      bias = std::min(2.0 * bias, cap);
    }
  };

  std::vector<std::optional<LogitSearch>> searches(n);
  fan_out(n, cfg.workers, anchor, searches, solve);
  auto result = assemble(n, anchor, AccessMode::top_logprobs, searches, 1);
  result.anchor_logprob = anchor_lp;
  return result;
}

// ---------------------------------------------------------------------------
// Monte Carlo

ExtractionResult extract_monte_carlo(OracleAccess& oracle, std::span<const TokenId> prefix,
                                     const ExtractionConfig& cfg) {
  cfg.validate();
  const auto* mc = std::get_if<MonteCarloMode>(&cfg.mode);
  if (!mc) throw InvalidArgument("extract_monte_carlo needs a Monte Carlo mode");
  const std::size_t n = oracle.vocab_size();
  const auto draws_n = static_cast<std::ptrdiff_t>(mc->samples);

  std::vector<TokenId> draws(mc->samples);
  std::vector<std::exception_ptr> errors(mc->samples);
#pragma omp parallel for schedule(static) num_threads(static_cast<int>(cfg.workers))
  for (std::ptrdiff_t j = 0; j < draws_n; ++j) {
    try {
      draws[j] = oracle.sample(prefix, BiasMap{}, mc->seed + static_cast<std::uint64_t>(j));
    } catch (...) {
      errors[j] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<std::uint64_t> counts(n, 0);
  for (TokenId t : draws) ++counts[t];
  const double denom = static_cast<double>(mc->samples) + mc->alpha * static_cast<double>(n);
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = (static_cast<double>(counts[i]) + mc->alpha) / denom;

  const TokenId anchor = argmax(p);
  std::vector<double> relative(n);
  const double log_anchor = std::log(p[anchor]);
  for (std::size_t i = 0; i < n; ++i) {
    relative[i] = p[i] > 0.0 ? std::log(p[i]) - log_anchor : -std::numeric_limits<double>::infinity();
  }
  QueryCounts queries;
  queries.sample = mc->samples;
  return ExtractionResult{std::move(relative), anchor, std::nullopt, {}, queries,
                          std::vector<std::uint32_t>(n, 0), 0.0, ProbVector(std::move(p))};
}

ExtractionResult extract(OracleAccess& oracle, std::span<const TokenId> prefix,
                         const ExtractionConfig& cfg) {
  if (std::holds_alternative<BinarySearchMode>(cfg.mode)) {
    return extract_binary_search(oracle, prefix, cfg);
  }
  if (const auto* t = std::get_if<Top2Mode>(&cfg.mode)) {
    return extract_top2(oracle, prefix, t->variant, cfg);
  }
  return extract_monte_carlo(oracle, prefix, cfg);
}

std::uint64_t binary_search_query_bound(std::size_t vocab_size, const ExtractionConfig& cfg,
                                        double max_upper_bound) {
  const double doublings = std::ceil(std::log2(cfg.bias_cap / cfg.epsilon));
  const double bits = max_upper_bound > cfg.delta ? std::ceil(std::log2(max_upper_bound / cfg.delta)) : 0.0;
  return static_cast<std::uint64_t>(vocab_size) * static_cast<std::uint64_t>(doublings + bits + 1.0);
}

std::string extraction_sidecar_json(const ExtractionResult& result, const ExtractionConfig& cfg) {
  nlohmann::json doc;
  doc["mode"] = cfg.mode_name();
  doc["delta"] = cfg.delta;
  doc["epsilon"] = cfg.epsilon;
  doc["bias_cap"] = cfg.bias_cap;
  doc["workers"] = cfg.workers;
  doc["queries_total"] = result.queries.total();
  doc["queries_per_mode"] = {{"argmax", result.queries.argmax},
                             {"top_logprobs", result.queries.top_logprobs},
                             {"sample", result.queries.sample}};
  doc["saturated_ids"] = result.saturated;
  doc["anchor"] = result.anchor;
  if (result.anchor_logprob) doc["anchor_logprob"] = *result.anchor_logprob;
  if (const auto* mc = std::get_if<MonteCarloMode>(&cfg.mode)) {
    doc["samples"] = mc->samples;
    doc["alpha"] = mc->alpha;
    doc["seed"] = mc->seed;
  }
  return doc.dump(2);
}

}  // namespace lmprobe
