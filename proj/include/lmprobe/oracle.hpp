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

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lmprobe/dist.hpp"
#include "lmprobe/scorer.hpp"

namespace lmprobe {

enum class AccessMode : std::uint8_t { argmax_bias = 0, top_logprobs = 1, sample = 2 };

std::string_view to_string(AccessMode mode) noexcept;
AccessMode parse_access_mode(std::string_view name);

/// Subset of access modes an oracle answers.
class ModeSet {
 public:
  constexpr ModeSet() = default;
  constexpr ModeSet(std::initializer_list<AccessMode> modes) {
    for (auto m : modes) bits_ |= bit(m);
  }
  static constexpr ModeSet all() {
    return {AccessMode::argmax_bias, AccessMode::top_logprobs, AccessMode::sample};
  }
  /// Comma-separated list, e.g. "argmax,top_logprobs".
  static ModeSet parse(std::string_view text);

  constexpr bool allows(AccessMode m) const noexcept { return (bits_ & bit(m)) != 0; }
  std::string to_string() const;

 private:
  static constexpr unsigned bit(AccessMode m) { return 1u << static_cast<unsigned>(m); }
  unsigned bits_ = 0;
};

/// Sparse additive logit bias, kept sorted by token id.
class BiasMap {
 public:
  BiasMap() = default;
  BiasMap(std::initializer_list<std::pair<TokenId, double>> entries);

  /// Inserts or overwrites.
  void set(TokenId id, double bias);
  bool empty() const noexcept { return entries_.empty(); }
  std::span<const std::pair<TokenId, double>> entries() const noexcept { return entries_; }

  /// Throws UnknownToken / BiasCapExceeded.
  void validate(std::size_t vocab_size, double cap) const;

  friend bool operator==(const BiasMap&, const BiasMap&) = default;

 private:
  std::vector<std::pair<TokenId, double>> entries_;
};

struct QueryCounts {
  std::uint64_t argmax = 0;
  std::uint64_t top_logprobs = 0;
  std::uint64_t sample = 0;

  std::uint64_t total() const noexcept { return argmax + top_logprobs + sample; }
  std::uint64_t& operator[](AccessMode m) noexcept;
  friend bool operator==(const QueryCounts&, const QueryCounts&) = default;
};

/// Monotone per-mode call counters, safe under concurrent increments.
class QueryLog {
 public:
  QueryLog() = default;
  QueryLog(const QueryLog&) = delete;
  QueryLog& operator=(const QueryLog&) = delete;

  /// Allocates per-token counters; calls made before this are not attributed.
  void enable_per_token(std::size_t vocab_size);

  void record(AccessMode mode, const BiasMap& bias = {}) noexcept;
  QueryCounts snapshot() const noexcept;
  std::uint64_t total() const noexcept { return snapshot().total(); }
  /// Per-token counts (calls carrying a bias on that id); empty if disabled.
  std::vector<std::uint64_t> per_token() const;

 private:
  std::array<std::atomic<std::uint64_t>, 3> counts_{};
  std::unique_ptr<std::atomic<std::uint64_t>[]> per_token_;
  std::size_t per_token_size_ = 0;
};

struct TokenLogprob {
  TokenId id;
  double logprob;
  friend bool operator==(const TokenLogprob&, const TokenLogprob&) = default;
};

/// Constrained view of a language model. Everything downstream of the
/// oracle (extraction in particular) talks only to this interface.
/// Implementations must be callable concurrently.
class OracleAccess {
 public:
  virtual ~OracleAccess() = default;

  virtual std::size_t vocab_size() = 0;

  /// Temperature-0 decoding under bias: argmax of logits + bias, ties to
  /// the smallest id.
  virtual TokenId argmax(std::span<const TokenId> prefix, const BiasMap& bias) = 0;

  /// The k most likely tokens of the biased, renormalized distribution,
  /// descending (ties by ascending id).
  virtual std::vector<TokenLogprob> top_logprobs(std::span<const TokenId> prefix,
                                                 const BiasMap& bias, std::size_t k) = 0;

  /// Seeded inverse-CDF draw from the biased distribution.
  virtual TokenId sample(std::span<const TokenId> prefix, const BiasMap& bias,
                         std::uint64_t seed) = 0;
};

struct OracleOptions {
  ModeSet allowed = ModeSet::all();
  double bias_cap = 100.0;
  /// When > 0, returned logprobs are rounded to multiples of this step.
  double logprob_quantum = 0.0;
};

/// In-process oracle over a Scorer.
class LocalOracle final : public OracleAccess {
 public:
  explicit LocalOracle(Scorer scorer, OracleOptions options = {});

  std::size_t vocab_size() override { return scorer_.vocab().size(); }
  TokenId argmax(std::span<const TokenId> prefix, const BiasMap& bias) override;
  std::vector<TokenLogprob> top_logprobs(std::span<const TokenId> prefix, const BiasMap& bias,
                                         std::size_t k) override;
  TokenId sample(std::span<const TokenId> prefix, const BiasMap& bias, std::uint64_t seed) override;

  const Scorer& scorer() const noexcept { return scorer_; }
  const OracleOptions& options() const noexcept { return options_; }
  QueryLog& log() noexcept { return log_; }
  const QueryLog& log() const noexcept { return log_; }

 private:
  struct CachedScore {
    TokenSequence prefix;
    ProbVector probs;
    std::vector<double> logprobs;
  };

  /// Counts the call, then checks mode, bias and prefix.
  std::shared_ptr<const CachedScore> admit(AccessMode mode, std::span<const TokenId> prefix,
                                           const BiasMap& bias);
  std::vector<double> biased_logprobs(const CachedScore& score, const BiasMap& bias) const;

  Scorer scorer_;
  OracleOptions options_;
  QueryLog log_;
  std::mutex cache_mutex_;
  std::shared_ptr<const CachedScore> cache_;
};

}  // namespace lmprobe
