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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "lmprobe/half.hpp"

namespace lmprobe {

using TokenId = std::uint32_t;

/// Vocabulary of |V| opaque token ids, optionally with their surface strings.
class Vocab {
 public:
  explicit Vocab(std::size_t size);
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return size_; }
  bool has_tokens() const noexcept { return tokens_ != nullptr; }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> id_of(std::string_view token) const;
  std::span<const std::string> tokens() const;

  bool contains(std::int64_t id) const noexcept {
    return id >= 0 && static_cast<std::uint64_t>(id) < size_;
  }

 private:
  struct Table {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, TokenId> index;
  };

  std::size_t size_;
  std::shared_ptr<const Table> tokens_;
};

/// Unnormalized scores over a vocabulary. Only differences are meaningful.
class LogitVector {
 public:
  /// Throws InvalidArgument unless size >= 2 and all values are finite.
  explicit LogitVector(std::vector<double> values);

  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  std::vector<double> values_;
};

/// A point on the probability simplex over a vocabulary.
class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-6;

  /// Throws InvalidArgument unless size >= 2, every value is finite and
  /// non-negative, and the values sum to 1 within kSumTolerance.
  explicit ProbVector(std::vector<double> values);

  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> values_;
};

enum class TemperatureSpace { log, probability };

/// Release-time transform of a next-token distribution.
class SamplingPolicy {
 public:
  struct Argmax {};
  struct Temperature {
    double tau;
    TemperatureSpace space;
  };
  struct TopP {
    double p;
  };
  struct TopK {
    std::size_t k;
  };
  using Variant = std::variant<Argmax, Temperature, TopP, TopK>;

  static SamplingPolicy argmax() { return SamplingPolicy(Argmax{}); }
  static SamplingPolicy temperature(double tau, TemperatureSpace space);
  static SamplingPolicy top_p(double p);
  static SamplingPolicy top_k(std::size_t k);

  /// Parses `argmax`, `temp:TAU:log|prob`, `topp:P` or `topk:K`.
  static SamplingPolicy parse(std::string_view text);

  const Variant& variant() const noexcept { return variant_; }
  std::string to_string() const;

 private:
  explicit SamplingPolicy(Variant v) : variant_(v) {}
  Variant variant_;
};

enum class RedactionMode { keep_top_k, keep_bottom_k, keep_random_k };

struct RedactionSpec {
  struct VectorMean {};
  using Fill = std::variant<VectorMean, double>;

  RedactionMode mode = RedactionMode::keep_top_k;
  std::size_t k = 1;
  std::uint64_t seed = 0;  ///< keep_random_k only.
  Fill fill = VectorMean{};
};

ProbVector softmax(const LogitVector& logits);

/// KL(p || q) in nats with 0 log(0/q) = 0. Throws InfiniteDivergence when
/// some p_i > 0 meets q_i == 0, InvalidArgument on a size mismatch.
double kl_divergence(const ProbVector& p, const ProbVector& q);

/// As kl_divergence, but an infinite divergence is reported as nullopt.
std::optional<double> try_kl_divergence(const ProbVector& p, const ProbVector& q);

/// Sum over components of the popcount of the XOR of the two 16-bit encodings.
std::uint64_t hamming16(const ProbVector& p, const ProbVector& q,
                        Float16Format format = Float16Format::binary16);

/// Shannon entropy in nats.
double entropy(const ProbVector& p);

/// Index of the largest value; ties go to the smallest index.
TokenId argmax(std::span<const double> values);

ProbVector apply_policy(const ProbVector& p, const SamplingPolicy& policy);

/// Replaces every component outside the kept set by the fill value. The
/// result is a raw feature vector and is not renormalized.
std::vector<double> redact(const ProbVector& p, const RedactionSpec& spec);

/// Inverse-CDF draw over ascending token ids using one uniform derived from seed.
TokenId sample(const ProbVector& p, std::uint64_t seed);

/// Token ids ordered by descending value, ties by ascending id.
std::vector<TokenId> rank_descending(std::span<const double> values);

}  // namespace lmprobe
