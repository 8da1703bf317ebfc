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
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmprobe/dist.hpp"

namespace lmprobe {

enum class ScorerKind { categorical, ngram, recurrent };

using TokenSequence = std::vector<TokenId>;
using Corpus = std::vector<TokenSequence>;

/// Deterministic next-token model standing in for a hidden LM.
///
/// Three variants:
///  - categorical: a fixed table, independent of the prefix;
///  - ngram: add-alpha smoothed counts over the last (order - 1) tokens.
///    Near the start of a sequence the context is simply shorter; no
///    padding token is used;
///  - recurrent: h_t = tanh(W h_{t-1} + E[x_t]), logits = U h_t with
///    untrained weights drawn uniformly from [-1/sqrt(h), 1/sqrt(h)] in the
///    order E, W, U from Rng(seed). The state starts at zero and first
///    consumes the reserved start id 0, so the output depends on the whole
///    prefix.
///
/// Scorers are immutable; copies share their parameters.
class Scorer {
 public:
  static Scorer categorical(ProbVector table);
  static Scorer recurrent(std::size_t vocab_size, std::size_t hidden_dim, std::uint64_t seed);

  /// Throws UnknownToken for ids outside the vocabulary.
  ProbVector score(std::span<const TokenId> prefix) const;

  /// Entry t equals score(tokens[0..t]); one pass for the recurrent variant.
  std::vector<ProbVector> score_prefixes(std::span<const TokenId> tokens) const;

  ScorerKind kind() const noexcept;
  const Vocab& vocab() const noexcept { return vocab_; }
  /// Context length the output depends on; nullopt for the full prefix.
  std::optional<std::size_t> context_window() const noexcept;

  /// Versioned JSON document ("format": "lmprobe-scorer", "version": 1).
  std::string to_json() const;
  static Scorer from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Scorer load(const std::filesystem::path& path);

  /// Returns a copy carrying token strings (sizes must match).
  Scorer with_vocab(Vocab vocab) const;

  struct Impl;

 private:
  Scorer(Vocab vocab, std::shared_ptr<const Impl> impl);

  friend Scorer fit_ngram(const Corpus&, std::size_t, double, const Vocab&);

  Vocab vocab_;
  std::shared_ptr<const Impl> impl_;
};

/// Add-alpha n-gram estimate P(w | ctx) = (c(ctx, w) + alpha) / (c(ctx) + alpha |V|).
/// Throws EmptyCorpus when the corpus holds no tokens.
Scorer fit_ngram(const Corpus& corpus, std::size_t order, double alpha, const Vocab& vocab);

/// Two prompts differing at exactly one position.
struct SwapCase {
  TokenSequence original;
  TokenSequence swapped;
  std::size_t position = 0;  ///< 0-based index of the differing token.

  /// Throws InvalidArgument unless the lengths match and exactly one token differs.
  static SwapCase make(TokenSequence original, TokenSequence swapped);
};

struct ResidualEntry {
  std::size_t position;      ///< Index of the last prefix token.
  std::size_t distance;      ///< position - swap position.
  std::optional<double> kl;  ///< nullopt: infinite divergence.
  std::uint64_t hamming;
};

/// Compares score(original[0..t]) with score(swapped[0..t]) for every t from
/// the swap position to the end.
std::vector<ResidualEntry> residual_info_profile(const Scorer& scorer, const SwapCase& swap,
                                                 Float16Format format = Float16Format::binary16);

// Corpus and swap-case files.
Corpus read_corpus_jsonl(const std::filesystem::path& path);
void write_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus);
Vocab read_vocab_file(const std::filesystem::path& path);
/// Whitespace-tokenized text, one sequence per line, ids from the vocab file.
Corpus read_corpus_text(const std::filesystem::path& path, const Vocab& vocab);
std::vector<SwapCase> read_swap_cases(const std::filesystem::path& path);

/// Ancestral sampling of `count` sequences of `length` tokens.
Corpus generate_corpus(const Scorer& scorer, std::size_t count, std::size_t length,
                       std::uint64_t seed);

/// Softmax of i.i.d. N(0, scale^2) logits.
ProbVector gaussian_logit_distribution(std::size_t size, double scale, std::uint64_t seed);
/// p_i proportional to 1 / rank^exponent over a seeded random permutation of ids.
ProbVector zipf_distribution(std::size_t size, double exponent, std::uint64_t seed);

}  // namespace lmprobe
