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

#include "lmprobe/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <variant>

#include <json.hpp>

#include "lmprobe/error.hpp"
#include "lmprobe/kernels.hpp"
#include "lmprobe/rng.hpp"

namespace lmprobe {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

struct Categorical {
  ProbVector table;
};

struct ContextCounts {
  std::uint64_t total = 0;
  std::map<TokenId, std::uint64_t> next;
};

struct Ngram {
  std::size_t order;
  double alpha;
  std::map<TokenSequence, ContextCounts> counts;
};

struct Recurrent {
  std::size_t hidden;
  std::uint64_t seed;
  std::vector<double> embed;   // |V| x h
  std::vector<double> recur;   // h x h
  std::vector<double> output;  // |V| x h
};

Recurrent make_recurrent(std::size_t vocab_size, std::size_t hidden, std::uint64_t seed) {
  Recurrent r{hidden, seed, {}, {}, {}};
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  Rng rng(seed);
  auto fill = [&](std::vector<double>& m, std::size_t n) {
    m.resize(n);
    for (double& w : m) w = rng.uniform(-bound, bound);
  };
  fill(r.embed, vocab_size * hidden);
  fill(r.recur, hidden * hidden);
  fill(r.output, vocab_size * hidden);
  return r;
}

}  // namespace

struct Scorer::Impl {
  std::variant<Categorical, Ngram, Recurrent> model;
};

namespace {

void check_tokens(std::span<const TokenId> tokens, const Vocab& vocab) {
  for (TokenId t : tokens) {
    if (!vocab.contains(t)) throw UnknownToken(t);
  }
}

ProbVector ngram_score(const Ngram& m, std::size_t vocab_size, std::span<const TokenId> prefix) {
  const std::size_t ctx_len = std::min(prefix.size(), m.order - 1);
  const TokenSequence context(prefix.end() - static_cast<std::ptrdiff_t>(ctx_len), prefix.end());
  const double denom_smooth = m.alpha * static_cast<double>(vocab_size);
  std::vector<double> out(vocab_size);
  auto it = m.counts.find(context);
  if (it == m.counts.end()) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(vocab_size));
    return ProbVector(std::move(out));
  }
  const double denom = static_cast<double>(it->second.total) + denom_smooth;
  std::fill(out.begin(), out.end(), m.alpha / denom);
  for (const auto& [w, c] : it->second.next) out[w] = (static_cast<double>(c) + m.alpha) / denom;
  return ProbVector(std::move(out));
}

class RecurrentState {
 public:
  RecurrentState(const Recurrent& m, std::size_t vocab_size)
      : m_(m), vocab_size_(vocab_size), h_(m.hidden, 0.0), next_(m.hidden) {
    step(0);
  }

  void step(TokenId token) {
    const std::size_t h = m_.hidden;
    const double* e = &m_.embed[std::size_t{token} * h];
    for (std::size_t r = 0; r < h; ++r) {
      const double* w = &m_.recur[r * h];
      double acc = e[r];
      for (std::size_t c = 0; c < h; ++c) acc += w[c] * h_[c];
      next_[r] = std::tanh(acc);
    }
    h_.swap(next_);
  }

  ProbVector distribution() const {
    const std::size_t h = m_.hidden;
    std::vector<double> logits(vocab_size_);
    for (std::size_t v = 0; v < vocab_size_; ++v) {
      const double* u = &m_.output[v * h];
      double acc = 0.0;
      for (std::size_t c = 0; c < h; ++c) acc += u[c] * h_[c];
      logits[v] = acc;
    }
    std::vector<double> probs(vocab_size_);
    kernels::softmax_parallel(logits, probs);
    return ProbVector(std::move(probs));
  }

 private:
  const Recurrent& m_;
  std::size_t vocab_size_;
  std::vector<double> h_;
  std::vector<double> next_;
};

}  // namespace

Scorer::Scorer(Vocab vocab, std::shared_ptr<const Impl> impl)
    : vocab_(std::move(vocab)), impl_(std::move(impl)) {}

Scorer Scorer::categorical(ProbVector table) {
  Vocab vocab(table.size());
  return Scorer(std::move(vocab), std::make_shared<const Impl>(Impl{Categorical{std::move(table)}}));
}

Scorer Scorer::recurrent(std::size_t vocab_size, std::size_t hidden_dim, std::uint64_t seed) {
  if (hidden_dim < 1) throw InvalidArgument("hidden dimension must be positive");
  Vocab vocab(vocab_size);
  return Scorer(std::move(vocab),
                std::make_shared<const Impl>(Impl{make_recurrent(vocab_size, hidden_dim, seed)}));
}

ProbVector Scorer::score(std::span<const TokenId> prefix) const {
  check_tokens(prefix, vocab_);
  const std::size_t n = vocab_.size();
  return std::visit(
      [&](const auto& m) -> ProbVector {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Categorical>) {
          return m.table;
        } else if constexpr (std::is_same_v<T, Ngram>) {
          return ngram_score(m, n, prefix);
        } else {
          RecurrentState state(m, n);
          for (TokenId t : prefix) state.step(t);
          return state.distribution();
        }
      },
      impl_->model);
}

std::vector<ProbVector> Scorer::score_prefixes(std::span<const TokenId> tokens) const {
  check_tokens(tokens, vocab_);
  std::vector<ProbVector> out;
  out.reserve(tokens.size());
  if (const auto* m = std::get_if<Recurrent>(&impl_->model)) {
    RecurrentState state(*m, vocab_.size());
    for (TokenId t : tokens) {
      state.step(t);
      out.push_back(state.distribution());
    }
    return out;
  }
  for (std::size_t t = 0; t < tokens.size(); ++t) out.push_back(score(tokens.first(t + 1)));
  return out;
}

ScorerKind Scorer::kind() const noexcept {
  switch (impl_->model.index()) {
    case 0:
      return ScorerKind::categorical;
    case 1:
      return ScorerKind::ngram;
    default:
      return ScorerKind::recurrent;
  }
}

std::optional<std::size_t> Scorer::context_window() const noexcept {
  if (std::holds_alternative<Categorical>(impl_->model)) return 0;
  if (const auto* m = std::get_if<Ngram>(&impl_->model)) return m->order - 1;
  return std::nullopt;
}

Scorer Scorer::with_vocab(Vocab vocab) const {
  if (vocab.size() != vocab_.size()) throw InvalidArgument("vocabulary size mismatch");
  return Scorer(std::move(vocab), impl_);
}

// ---------------------------------------------------------------------------
// n-gram fitting

Scorer fit_ngram(const Corpus& corpus, std::size_t order, double alpha, const Vocab& vocab) {
  if (order < 1) throw InvalidArgument("n-gram order must be at least 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be positive");
  Ngram model{order, alpha, {}};
  std::size_t tokens = 0;
  for (const auto& seq : corpus) {
    check_tokens(seq, vocab);
    for (std::size_t j = 0; j < seq.size(); ++j) {
      const std::size_t ctx_len = std::min(j, order - 1);
      TokenSequence context(seq.begin() + static_cast<std::ptrdiff_t>(j - ctx_len),
                            seq.begin() + static_cast<std::ptrdiff_t>(j));
      auto& counts = model.counts[std::move(context)];
      ++counts.total;
      ++counts.next[seq[j]];
      ++tokens;
    }
  }
  if (tokens == 0) throw EmptyCorpus();
  return Scorer(vocab, std::make_shared<const Scorer::Impl>(Scorer::Impl{std::move(model)}));
}

// ---------------------------------------------------------------------------
// Serialization

std::string Scorer::to_json() const {
  json doc;
  doc["format"] = "lmprobe-scorer";
  doc["version"] = kFormatVersion;
  doc["vocab_size"] = vocab_.size();
  if (vocab_.has_tokens()) {
    doc["tokens"] = std::vector<std::string>(vocab_.tokens().begin(), vocab_.tokens().end());
  }
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Categorical>) {
          doc["kind"] = "categorical";
          doc["table"] = std::vector<double>(m.table.values().begin(), m.table.values().end());
        } else if constexpr (std::is_same_v<T, Ngram>) {
          doc["kind"] = "ngram";
          doc["order"] = m.order;
          doc["alpha"] = m.alpha;
          json counts = json::array();
          for (const auto& [ctx, c] : m.counts) {
            json next = json::array();
            for (const auto& [w, n] : c.next) next.push_back({w, n});
            counts.push_back({{"context", ctx}, {"next", std::move(next)}});
          }
          doc["counts"] = std::move(counts);
        } else {
          doc["kind"] = "recurrent";
          doc["hidden_dim"] = m.hidden;
          doc["seed"] = m.seed;
          doc["prng"] = kPrngId;
        }
      },
      impl_->model);
  return doc.dump(1);
}

Scorer Scorer::from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("scorer JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != "lmprobe-scorer") throw FormatError("not an lmprobe scorer document");
    if (doc.at("version").get<int>() != kFormatVersion) {
      throw FormatError("unsupported scorer version " + doc.at("version").dump());
    }
    const auto size = doc.at("vocab_size").get<std::size_t>();
    const auto kind = doc.at("kind").get<std::string>();
    std::optional<Scorer> scorer;
    if (kind == "categorical") {
      ProbVector table(doc.at("table").get<std::vector<double>>());
      if (table.size() != size) throw FormatError("categorical table size mismatch");
      scorer = Scorer::categorical(std::move(table));
    } else if (kind == "recurrent") {
      if (doc.contains("prng") && doc["prng"] != kPrngId) {
        throw FormatError("scorer was generated with PRNG " + doc["prng"].dump());
      }
      scorer = Scorer::recurrent(size, doc.at("hidden_dim").get<std::size_t>(),
                                 doc.at("seed").get<std::uint64_t>());
    } else if (kind == "ngram") {
      Vocab vocab(size);
      Ngram model{doc.at("order").get<std::size_t>(), doc.at("alpha").get<double>(), {}};
      if (model.order < 1 || !(model.alpha > 0.0)) throw FormatError("invalid n-gram parameters");
      for (const auto& entry : doc.at("counts")) {
        auto ctx = entry.at("context").get<TokenSequence>();
        check_tokens(ctx, vocab);
        ContextCounts counts;
        for (const auto& pair : entry.at("next")) {
          const auto w = pair.at(0).get<TokenId>();
          const auto n = pair.at(1).get<std::uint64_t>();
          if (!vocab.contains(w)) throw UnknownToken(w);
          counts.next[w] += n;
          counts.total += n;
        }
        model.counts.emplace(std::move(ctx), std::move(counts));
      }
      scorer = Scorer(vocab, std::make_shared<const Impl>(Impl{std::move(model)}));
    } else {
      throw FormatError("unknown scorer kind '" + kind + "'");
    }
    if (doc.contains("tokens")) {
      scorer = scorer->with_vocab(Vocab(doc["tokens"].get<std::vector<std::string>>()));
    }
    return *scorer;
  } catch (const json::exception& e) {
    throw FormatError(std::string("scorer JSON: ") + e.what());
  }
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

void Scorer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << to_json() << '\n';
}

Scorer Scorer::load(const std::filesystem::path& path) { return from_json(slurp(path)); }

// ---------------------------------------------------------------------------
// Residual information

SwapCase SwapCase::make(TokenSequence original, TokenSequence swapped) {
  if (original.size() != swapped.size()) throw InvalidArgument("swap case lengths differ");
  std::optional<std::size_t> position;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (original[i] == swapped[i]) continue;
    if (position) throw InvalidArgument("swap case differs at more than one position");
    position = i;
  }
  if (!position) throw InvalidArgument("swap case sequences are identical");
  return SwapCase{std::move(original), std::move(swapped), *position};
}

std::vector<ResidualEntry> residual_info_profile(const Scorer& scorer, const SwapCase& swap,
                                                 Float16Format format) {
  const auto a = scorer.score_prefixes(swap.original);
  const auto b = scorer.score_prefixes(swap.swapped);
  std::vector<ResidualEntry> out;
  for (std::size_t t = swap.position; t < swap.original.size(); ++t) {
    out.push_back({t, t - swap.position, try_kl_divergence(a[t], b[t]), hamming16(a[t], b[t], format)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpora

Corpus read_corpus_jsonl(const std::filesystem::path& path) {
  Corpus corpus;
  for_each_jsonl(path, [&](const json& row) { corpus.push_back(row.at("tokens").get<TokenSequence>()); });
  return corpus;
}

void write_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& seq : corpus) out << json{{"tokens", seq}}.dump() << '\n';
}

Vocab read_vocab_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

Corpus read_corpus_text(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    TokenSequence seq;
    std::string word;
    while (words >> word) {
      auto id = vocab.id_of(word);
      if (!id) throw FormatError("token '" + word + "' is not in the vocabulary");
      seq.push_back(*id);
    }
    if (!seq.empty()) corpus.push_back(std::move(seq));
  }
  return corpus;
}

std::vector<SwapCase> read_swap_cases(const std::filesystem::path& path) {
  std::vector<SwapCase> cases;
  for_each_jsonl(path, [&](const json& row) {
    cases.push_back(SwapCase::make(row.at("original").get<TokenSequence>(),
                                   row.at("swapped").get<TokenSequence>()));
  });
  return cases;
}

Corpus generate_corpus(const Scorer& scorer, std::size_t count, std::size_t length,
                       std::uint64_t seed) {
  Rng rng(seed);
  Corpus corpus(count);
  for (auto& seq : corpus) {
    for (std::size_t j = 0; j < length; ++j) seq.push_back(sample(scorer.score(seq), rng.next()));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Synthetic hidden distributions

ProbVector gaussian_logit_distribution(std::size_t size, double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> logits(size);
  for (double& z : logits) z = scale * rng.normal();
  return softmax(LogitVector(std::move(logits)));
}

ProbVector zipf_distribution(std::size_t size, double exponent, std::uint64_t seed) {
  std::vector<TokenId> ids(size);
  std::iota(ids.begin(), ids.end(), TokenId{0});
  Rng rng(seed);
  for (std::size_t i = size; i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  std::vector<double> weights(size);
  double total = 0.0;
  for (std::size_t rank = 0; rank < size; ++rank) {
    const double w = std::pow(static_cast<double>(rank + 1), -exponent);
    weights[ids[rank]] = w;
    total += w;
  }
  for (double& w : weights) w /= total;
  return ProbVector(std::move(weights));
}

}  // namespace lmprobe
