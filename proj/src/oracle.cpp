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

#include "lmprobe/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lmprobe/error.hpp"
#include "lmprobe/kernels.hpp"
#include "lmprobe/metrics.hpp"

namespace lmprobe {

std::string_view to_string(AccessMode mode) noexcept {
  switch (mode) {
    case AccessMode::argmax_bias:
      return "argmax";
    case AccessMode::top_logprobs:
      return "top_logprobs";
    case AccessMode::sample:
      return "sample";
  }
  return "?";
}

AccessMode parse_access_mode(std::string_view name) {
  if (name == "argmax" || name == "argmax_bias") return AccessMode::argmax_bias;
  if (name == "top_logprobs") return AccessMode::top_logprobs;
  if (name == "sample") return AccessMode::sample;
  throw InvalidArgument("unknown access mode '" + std::string(name) + "'");
}

ModeSet ModeSet::parse(std::string_view text) {
  ModeSet set;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find(',', start), text.size());
    const auto item = trim(text.substr(start, end - start));
    if (!item.empty()) set.bits_ |= bit(parse_access_mode(item));
    start = end + 1;
  }
  return set;
}

std::string ModeSet::to_string() const {
  std::string out;
  for (auto m : {AccessMode::argmax_bias, AccessMode::top_logprobs, AccessMode::sample}) {
    if (!allows(m)) continue;
    if (!out.empty()) out += ',';
    out += lmprobe::to_string(m);
  }
  return out;
}

// ---------------------------------------------------------------------------

BiasMap::BiasMap(std::initializer_list<std::pair<TokenId, double>> entries) {
  for (const auto& [id, b] : entries) set(id, b);
}

void BiasMap::set(TokenId id, double bias) {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                             [](const auto& e, TokenId key) { return e.first < key; });
  if (it != entries_.end() && it->first == id) {
    it->second = bias;
  } else {
    entries_.insert(it, {id, bias});
  }
}

void BiasMap::validate(std::size_t vocab_size, double cap) const {
  for (const auto& [id, b] : entries_) {
    if (id >= vocab_size) throw UnknownToken(id);
    if (std::isnan(b)) throw InvalidArgument("bias on token " + std::to_string(id) + " is NaN");
    if (std::fabs(b) > cap) {
      throw BiasCapExceeded("bias " + std::to_string(b) + " on token " + std::to_string(id) +
                            " exceeds cap " + std::to_string(cap));
    }
  }
}

// ---------------------------------------------------------------------------

std::uint64_t& QueryCounts::operator[](AccessMode m) noexcept {
  switch (m) {
    case AccessMode::argmax_bias:
      return argmax;
    case AccessMode::top_logprobs:
      return top_logprobs;
    default:
      return sample;
  }
}

void QueryLog::enable_per_token(std::size_t vocab_size) {
  per_token_ = std::make_unique<std::atomic<std::uint64_t>[]>(vocab_size);
  per_token_size_ = vocab_size;
}

void QueryLog::record(AccessMode mode, const BiasMap& bias) noexcept {
  counts_[static_cast<std::size_t>(mode)].fetch_add(1, std::memory_order_relaxed);
  if (!per_token_) return;
  for (const auto& [id, b] : bias.entries()) {
    if (id < per_token_size_ && b != 0.0) per_token_[id].fetch_add(1, std::memory_order_relaxed);
  }
}

QueryCounts QueryLog::snapshot() const noexcept {
  QueryCounts c;
  c.argmax = counts_[0].load(std::memory_order_relaxed);
  c.top_logprobs = counts_[1].load(std::memory_order_relaxed);
  c.sample = counts_[2].load(std::memory_order_relaxed);
  return c;
}

std::vector<std::uint64_t> QueryLog::per_token() const {
  std::vector<std::uint64_t> out(per_token_size_);
  for (std::size_t i = 0; i < per_token_size_; ++i) out[i] = per_token_[i].load();
  return out;
}

// ---------------------------------------------------------------------------

LocalOracle::LocalOracle(Scorer scorer, OracleOptions options)
    : scorer_(std::move(scorer)), options_(options) {
  if (!(options_.bias_cap > 0.0)) throw InvalidArgument("bias cap must be positive");
}

std::shared_ptr<const LocalOracle::CachedScore> LocalOracle::admit(AccessMode mode,
                                                                   std::span<const TokenId> prefix,
                                                                   const BiasMap& bias) {
  log_.record(mode, bias);
  if (!options_.allowed.allows(mode)) {
    throw ModeNotAllowed("access mode '" + std::string(to_string(mode)) + "' is not allowed");
  }
  bias.validate(vocab_size(), options_.bias_cap);

  {
    std::lock_guard lock(cache_mutex_);
    if (cache_ && std::ranges::equal(cache_->prefix, prefix)) return cache_;
  }
  ProbVector probs = scorer_.score(prefix);
  std::vector<double> logprobs(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    logprobs[i] = probs[i] > 0.0 ? std::log(probs[i]) : -std::numeric_limits<double>::infinity();
  }
  auto entry = std::make_shared<const CachedScore>(
      CachedScore{TokenSequence(prefix.begin(), prefix.end()), std::move(probs), std::move(logprobs)});
  std::lock_guard lock(cache_mutex_);
  cache_ = entry;
  return entry;
}

std::vector<double> LocalOracle::biased_logprobs(const CachedScore& score, const BiasMap& bias) const {
  std::vector<double> z = score.logprobs;
  for (const auto& [id, b] : bias.entries()) z[id] += b;
  return z;
}

TokenId LocalOracle::argmax(std::span<const TokenId> prefix, const BiasMap& bias) {
  auto score = admit(AccessMode::argmax_bias, prefix, bias);
  if (bias.empty()) return lmprobe::argmax(score->logprobs);
  return lmprobe::argmax(biased_logprobs(*score, bias));
}

std::vector<TokenLogprob> LocalOracle::top_logprobs(std::span<const TokenId> prefix,
                                                    const BiasMap& bias, std::size_t k) {
  auto score = admit(AccessMode::top_logprobs, prefix, bias);
  if (k < 1 || k > vocab_size()) {
    throw KTooLarge("k = " + std::to_string(k) + " outside [1, " + std::to_string(vocab_size()) + "]");
  }
  std::vector<double> z = biased_logprobs(*score, bias);
  const double lse = kernels::logsumexp_parallel(z);

  std::vector<TokenId> ids(z.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(i);
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](TokenId a, TokenId b) { return z[a] > z[b] || (z[a] == z[b] && a < b); });

  std::vector<TokenLogprob> out;
  out.reserve(k);
  for (std::size_t r = 0; r < k; ++r) {
    double lp = z[ids[r]] - lse;
    if (options_.logprob_quantum > 0.0) {
      lp = std::round(lp / options_.logprob_quantum) * options_.logprob_quantum;
    }
    out.push_back({ids[r], lp});
  }
  return out;
}

TokenId LocalOracle::sample(std::span<const TokenId> prefix, const BiasMap& bias, std::uint64_t seed) {
  auto score = admit(AccessMode::sample, prefix, bias);
  if (bias.empty()) return lmprobe::sample(score->probs, seed);
  std::vector<double> z = biased_logprobs(*score, bias);
  std::vector<double> p(z.size());
  kernels::softmax_parallel(z, p);
  return lmprobe::sample(ProbVector(std::move(p)), seed);
}

}  // namespace lmprobe
