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

#include "lmprobe/dist.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "lmprobe/error.hpp"
#include "lmprobe/kernels.hpp"
#include "lmprobe/rng.hpp"

namespace lmprobe {

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::size_t size) : size_(size) {
  if (size < 2) throw InvalidArgument("vocabulary size must be at least 2");
}

Vocab::Vocab(std::vector<std::string> tokens) : size_(tokens.size()) {
  if (size_ < 2) throw InvalidArgument("vocabulary size must be at least 2");
  auto table = std::make_shared<Table>();
  table->index.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!table->index.emplace(tokens[i], static_cast<TokenId>(i)).second) {
      throw InvalidArgument("duplicate vocabulary entry '" + tokens[i] + "'");
    }
  }
  table->tokens = std::move(tokens);
  tokens_ = std::move(table);
}

const std::string& Vocab::token(TokenId id) const {
  if (!tokens_) throw InvalidArgument("vocabulary has no token strings");
  if (id >= size_) throw UnknownToken(id);
  return tokens_->tokens[id];
}

std::optional<TokenId> Vocab::id_of(std::string_view token) const {
  if (!tokens_) return std::nullopt;
  auto it = tokens_->index.find(std::string(token));
  if (it == tokens_->index.end()) return std::nullopt;
  return it->second;
}

std::span<const std::string> Vocab::tokens() const {
  if (!tokens_) return {};
  return tokens_->tokens;
}

// ---------------------------------------------------------------------------
// Vectors

LogitVector::LogitVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.size() < 2) throw InvalidArgument("logit vector needs at least 2 entries");
  for (double v : values_) {
    if (!std::isfinite(v)) throw InvalidArgument("logit vector contains a non-finite value");
  }
}

ProbVector::ProbVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.size() < 2) throw InvalidArgument("probability vector needs at least 2 entries");
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) {
      throw InvalidArgument("probability vector entries must be finite and non-negative");
    }
  }
  const double sum = kernels::sum_parallel(values_);
  if (std::fabs(sum - 1.0) > kSumTolerance) {
    throw InvalidArgument("probability vector sums to " + std::to_string(sum));
  }
}

// ---------------------------------------------------------------------------
// Policies

SamplingPolicy SamplingPolicy::temperature(double tau, TemperatureSpace space) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("temperature must be positive");
  return SamplingPolicy(Temperature{tau, space});
}

SamplingPolicy SamplingPolicy::top_p(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw InvalidArgument("top-p must lie in (0, 1]");
  return SamplingPolicy(TopP{p});
}

SamplingPolicy SamplingPolicy::top_k(std::size_t k) {
  if (k < 1) throw InvalidArgument("top-k must be at least 1");
  return SamplingPolicy(TopK{k});
}

namespace {

double parse_double(std::string_view text) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw InvalidArgument("not a number: '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace

SamplingPolicy SamplingPolicy::parse(std::string_view text) {
  const auto parts = split(text, ':');
  const auto kind = parts.front();
  if (kind == "argmax" && parts.size() == 1) return argmax();
  if (kind == "temp" && (parts.size() == 2 || parts.size() == 3)) {
    auto space = TemperatureSpace::log;
    if (parts.size() == 3) {
      if (parts[2] == "log") {
        space = TemperatureSpace::log;
      } else if (parts[2] == "prob") {
        space = TemperatureSpace::probability;
      } else {
        throw InvalidArgument("temperature space must be 'log' or 'prob'");
      }
    }
    return temperature(parse_double(parts[1]), space);
  }
  if (kind == "topp" && parts.size() == 2) return top_p(parse_double(parts[1]));
  if (kind == "topk" && parts.size() == 2) {
    const double k = parse_double(parts[1]);
    if (k < 1 || k != std::floor(k)) throw InvalidArgument("top-k must be a positive integer");
    return top_k(static_cast<std::size_t>(k));
  }
  throw InvalidArgument("unrecognized policy '" + std::string(text) + "'");
}

std::string SamplingPolicy::to_string() const {
  struct Visitor {
    std::string operator()(const Argmax&) const { return "argmax"; }
    std::string operator()(const Temperature& t) const {
      return "temp:" + fmt(t.tau) + (t.space == TemperatureSpace::log ? ":log" : ":prob");
    }
    std::string operator()(const TopP& t) const { return "topp:" + fmt(t.p); }
    std::string operator()(const TopK& t) const { return "topk:" + std::to_string(t.k); }
    static std::string fmt(double v) {
      char buf[32];
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
      return std::string(buf, ptr);
    }
  };
  return std::visit(Visitor{}, variant_);
}

// ---------------------------------------------------------------------------
// Operations

ProbVector softmax(const LogitVector& logits) {
  std::vector<double> out(logits.size());
  kernels::softmax_parallel(logits.values(), out);
  return ProbVector(std::move(out));
}

std::optional<double> try_kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) throw InvalidArgument("KL divergence of vectors of different size");
  const double kl = kernels::kl_parallel(p.values(), q.values());
  if (std::isinf(kl)) return std::nullopt;
  // Gibbs' inequality; tiny negatives are rounding.
  return std::max(0.0, kl);
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  auto kl = try_kl_divergence(p, q);
  if (!kl) throw InfiniteDivergence();
  return *kl;
}

std::uint64_t hamming16(const ProbVector& p, const ProbVector& q, Float16Format format) {
  if (p.size() != q.size()) throw InvalidArgument("Hamming distance of vectors of different size");
  return kernels::hamming16_parallel(p.values(), q.values(), format);
}

double entropy(const ProbVector& p) {
  double h = 0.0;
  for (double v : p.values()) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

TokenId argmax(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

std::vector<TokenId> rank_descending(std::span<const double> values) {
  std::vector<TokenId> order(values.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](TokenId a, TokenId b) { return values[a] > values[b]; });
  return order;
}

namespace {

ProbVector keep_and_renormalize(const ProbVector& p, std::span<const TokenId> kept) {
  std::vector<double> out(p.size(), 0.0);
  double mass = 0.0;
  for (TokenId id : kept) mass += p[id];
  for (TokenId id : kept) out[id] = p[id] / mass;
  return ProbVector(std::move(out));
}

ProbVector apply_temperature(const ProbVector& p, const SamplingPolicy::Temperature& t) {
  if (t.tau == 1.0) return p;
  std::vector<double> out(p.size());
  if (t.space == TemperatureSpace::log) {
    std::vector<double> scaled(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      scaled[i] = p[i] > 0.0 ? std::log(p[i]) / t.tau : -std::numeric_limits<double>::infinity();
    }
    kernels::softmax_parallel(scaled, out);
  } else {
    const double exponent = 1.0 / t.tau;
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::pow(p[i], exponent);
    const double sum = kernels::sum_parallel(out);
    if (!(sum > 0.0) || !std::isfinite(sum)) {
      // Every power underflowed or overflowed; fall back to the argmax limit.
      std::fill(out.begin(), out.end(), 0.0);
      out[argmax(p.values())] = 1.0;
    } else {
      for (double& v : out) v /= sum;
    }
  }
  return ProbVector(std::move(out));
}

}  // namespace

ProbVector apply_policy(const ProbVector& p, const SamplingPolicy& policy) {
  const auto& v = policy.variant();
  if (std::holds_alternative<SamplingPolicy::Argmax>(v)) {
    std::vector<double> out(p.size(), 0.0);
    out[argmax(p.values())] = 1.0;
    return ProbVector(std::move(out));
  }
  if (const auto* t = std::get_if<SamplingPolicy::Temperature>(&v)) return apply_temperature(p, *t);
  if (const auto* top = std::get_if<SamplingPolicy::TopK>(&v)) {
    if (top->k > p.size()) throw InvalidArgument("top-k exceeds the vocabulary size");
    const auto order = rank_descending(p.values());
    return keep_and_renormalize(p, std::span(order).first(top->k));
  }
  const double target = std::get<SamplingPolicy::TopP>(v).p;
  const auto order = rank_descending(p.values());
  double mass = 0.0;
  std::size_t kept = 0;
  while (kept < order.size() && mass < target) mass += p[order[kept++]];
  return keep_and_renormalize(p, std::span(order).first(kept));
}

std::vector<double> redact(const ProbVector& p, const RedactionSpec& spec) {
  const std::size_t n = p.size();
  if (spec.k < 1 || spec.k > n) throw InvalidArgument("redaction k must lie in [1, |V|]");

  std::vector<TokenId> kept;
  switch (spec.mode) {
    case RedactionMode::keep_top_k: {
      auto order = rank_descending(p.values());
      kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.k));
      break;
    }
    case RedactionMode::keep_bottom_k: {
      auto order = rank_descending(p.values());
      kept.assign(order.end() - static_cast<std::ptrdiff_t>(spec.k), order.end());
      break;
    }
    case RedactionMode::keep_random_k: {
      std::vector<TokenId> ids(n);
      std::iota(ids.begin(), ids.end(), TokenId{0});
      Rng rng(spec.seed);
      for (std::size_t i = 0; i < spec.k; ++i) {
        std::swap(ids[i], ids[i + rng.below(n - i)]);
      }
      kept.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(spec.k));
      break;
    }
  }

  double fill = 0.0;
  if (const auto* value = std::get_if<double>(&spec.fill)) {
    fill = *value;
  } else {
    fill = kernels::sum_parallel(p.values()) / static_cast<double>(n);
  }
  std::vector<double> out(n, fill);
  for (TokenId id : kept) out[id] = p[id];
  return out;
}

TokenId sample(const ProbVector& p, std::uint64_t seed) {
  const double u = unit_double(splitmix64(seed));
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    cumulative += p[i];
    last_positive = i;
    if (u < cumulative) return static_cast<TokenId>(i);
  }
  // u landed in the rounding gap above the accumulated mass.
  return static_cast<TokenId>(last_positive);
}

}  // namespace lmprobe
