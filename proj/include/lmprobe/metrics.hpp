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
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lmprobe {

using Tokens = std::vector<std::string>;
using Tokenizer = std::function<Tokens(std::string_view)>;

/// Splits on runs of whitespace.
Tokens whitespace_tokenize(std::string_view text);

/// Strips leading and trailing whitespace.
std::string_view trim(std::string_view text);

/// Harmonic mean of multiset precision and recall. Both empty -> 1, one empty -> 0.
double token_f1(std::span<const std::string> original, std::span<const std::string> reconstruction);
double token_f1(std::string_view original, std::string_view reconstruction,
                const Tokenizer& tokenize = whitespace_tokenize);

/// Sentence BLEU-4 in [0, 100] with the original as the single reference:
/// clipped n-gram precisions, p_1 unsmoothed, p_n = (m_n + 1) / (t_n + 1)
/// for n >= 2, geometric mean, brevity penalty exp(1 - r/c) when c < r.
double bleu(std::span<const std::string> original, std::span<const std::string> reconstruction);
double bleu(std::string_view original, std::string_view reconstruction,
            const Tokenizer& tokenize = whitespace_tokenize);

/// 1 iff byte-equal after trimming surrounding whitespace.
int exact_match(std::string_view original, std::string_view reconstruction);

struct ReconstructionRecord {
  std::string original;
  std::string reconstruction;
  std::optional<std::string> id;

  /// Either side is empty after trimming.
  bool flagged_empty() const;
};

struct RecordScore {
  std::optional<std::string> id;
  double f1 = 0.0;
  double bleu = 0.0;
  double exact = 0.0;
  bool flagged_empty = false;
};

struct Aggregate {
  double mean = 0.0;
  std::optional<double> sem;  ///< Sample stddev / sqrt(n); absent for n == 1.
  std::size_t n = 0;
};

Aggregate aggregate(std::span<const double> scores);

struct MetricReport {
  std::vector<RecordScore> records;
  Aggregate f1;
  Aggregate bleu;
  Aggregate exact;
  std::string tokenizer = "whitespace";
};

RecordScore score_record(const ReconstructionRecord& record,
                         const Tokenizer& tokenize = whitespace_tokenize);

/// Scores records whose token sequences are supplied externally (for
/// instance model-tokenizer ids); exact match still compares the text.
RecordScore score_record(const ReconstructionRecord& record, std::span<const std::string> original_tokens,
                         std::span<const std::string> reconstruction_tokens);

MetricReport aggregate(std::vector<RecordScore> scores);

MetricReport evaluate(std::span<const ReconstructionRecord> records,
                      const Tokenizer& tokenize = whitespace_tokenize);

/// JSON report including a "recipe" metadata block naming every metric definition.
std::string report_json(const MetricReport& report);

/// JSONL of {"original": str, "reconstruction": str, "id"?: str}.
std::vector<ReconstructionRecord> read_records_jsonl(const std::filesystem::path& path);

/// JSONL of {"original": [ids], "reconstruction": [ids]} aligned line by line with a records file.
std::vector<std::pair<Tokens, Tokens>> read_token_ids_jsonl(const std::filesystem::path& path);

}  // namespace lmprobe
