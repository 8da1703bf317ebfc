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

#include "lmprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "lmprobe/error.hpp"

namespace lmprobe {
namespace {

constexpr std::string_view kWhitespace = " \t\n\r\f\v";
constexpr int kMaxOrder = 4;

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts count_ngrams(std::span<const std::string> tokens, std::size_t order) {
  NgramCounts counts;
  if (tokens.size() < order) return counts;
  for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
    std::vector<std::string_view> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens.begin() + static_cast<std::ptrdiff_t>(i + order));
    ++counts[std::move(gram)];
  }
  return counts;
}

}  // namespace

Tokens whitespace_tokenize(std::string_view text) {
  Tokens out;
  std::size_t pos = text.find_first_not_of(kWhitespace);
  while (pos != std::string_view::npos) {
    const std::size_t end = text.find_first_of(kWhitespace, pos);
    out.emplace_back(text.substr(pos, end - pos));
    if (end == std::string_view::npos) break;
    pos = text.find_first_not_of(kWhitespace, end);
  }
  return out;
}

std::string_view trim(std::string_view text) {
  const auto first = text.find_first_not_of(kWhitespace);
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(kWhitespace);
  return text.substr(first, last - first + 1);
}

double token_f1(std::span<const std::string> original, std::span<const std::string> reconstruction) {
  if (original.empty() && reconstruction.empty()) return 1.0;
  if (original.empty() || reconstruction.empty()) return 0.0;
  std::map<std::string_view, long> bag;
  for (const auto& t : original) ++bag[t];
  std::size_t common = 0;
  for (const auto& t : reconstruction) {
    auto it = bag.find(t);
    if (it != bag.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(reconstruction.size());
  const double recall = static_cast<double>(common) / static_cast<double>(original.size());
  return 2.0 * precision * recall / (precision + recall);
}

double token_f1(std::string_view original, std::string_view reconstruction, const Tokenizer& tokenize) {
  return token_f1(tokenize(original), tokenize(reconstruction));
}

double bleu(std::span<const std::string> original, std::span<const std::string> reconstruction) {
  const std::size_t c = reconstruction.size();
  const std::size_t r = original.size();
  if (c == 0) return r == 0 ? 100.0 : 0.0;

  double log_precision_sum = 0.0;
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto order = static_cast<std::size_t>(n);
    const auto hyp = count_ngrams(reconstruction, order);
    const auto ref = count_ngrams(original, order);
    std::size_t matches = 0;
    for (const auto& [gram, count] : hyp) {
      auto it = ref.find(gram);
      if (it != ref.end()) matches += std::min(count, it->second);
    }
    const std::size_t total = c >= order ? c - order + 1 : 0;
    if (n == 1) {
      if (matches == 0) return 0.0;
      log_precision_sum += std::log(static_cast<double>(matches) / static_cast<double>(total));
    } else {
      log_precision_sum +=
          std::log(static_cast<double>(matches + 1) / static_cast<double>(total + 1));
    }
  }
  const double brevity =
      c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return 100.0 * brevity * std::exp(log_precision_sum / kMaxOrder);
}

double bleu(std::string_view original, std::string_view reconstruction, const Tokenizer& tokenize) {
  return bleu(tokenize(original), tokenize(reconstruction));
}

int exact_match(std::string_view original, std::string_view reconstruction) {
  return trim(original) == trim(reconstruction) ? 1 : 0;
}

bool ReconstructionRecord::flagged_empty() const {
  return trim(original).empty() || trim(reconstruction).empty();
}

Aggregate aggregate(std::span<const double> scores) {
  Aggregate a;
  a.n = scores.size();
  if (a.n == 0) throw InvalidArgument("cannot aggregate zero scores");
  double sum = 0.0;
  for (double s : scores) sum += s;
  a.mean = sum / static_cast<double>(a.n);
  if (a.n >= 2) {
    double ss = 0.0;
    for (double s : scores) ss += (s - a.mean) * (s - a.mean);
    const double stddev = std::sqrt(ss / static_cast<double>(a.n - 1));
    a.sem = stddev / std::sqrt(static_cast<double>(a.n));
  }
  return a;
}

RecordScore score_record(const ReconstructionRecord& record, std::span<const std::string> original_tokens,
                         std::span<const std::string> reconstruction_tokens) {
  RecordScore s;
  s.id = record.id;
  s.f1 = token_f1(original_tokens, reconstruction_tokens);
  s.bleu = bleu(original_tokens, reconstruction_tokens);
  s.exact = exact_match(record.original, record.reconstruction);
  s.flagged_empty = record.flagged_empty();
  return s;
}

RecordScore score_record(const ReconstructionRecord& record, const Tokenizer& tokenize) {
  return score_record(record, tokenize(record.original), tokenize(record.reconstruction));
}

MetricReport aggregate(std::vector<RecordScore> scores) {
  MetricReport report;
  std::vector<double> f1, bl, ex;
  for (const auto& s : scores) {
    f1.push_back(s.f1);
    bl.push_back(s.bleu);
    ex.push_back(s.exact);
  }
  report.f1 = aggregate(f1);
  report.bleu = aggregate(bl);
  report.exact = aggregate(ex);
  report.records = std::move(scores);
  return report;
}

MetricReport evaluate(std::span<const ReconstructionRecord> records, const Tokenizer& tokenize) {
  std::vector<RecordScore> scores(records.size());
  const auto n = static_cast<std::ptrdiff_t>(records.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) scores[i] = score_record(records[i], tokenize);
  return aggregate(std::move(scores));
}

std::string report_json(const MetricReport& report) {
  using nlohmann::json;
  auto agg = [](const Aggregate& a) {
    return json{{"mean", a.mean}, {"sem", a.sem ? json(*a.sem) : json(nullptr)}, {"n", a.n}};
  };
  json records = json::array();
  for (const auto& s : report.records) {
    json r{{"f1", s.f1}, {"bleu", s.bleu}, {"exact", s.exact}};
    if (s.id) r["id"] = *s.id;
    if (s.flagged_empty) r["flagged_empty"] = true;
    records.push_back(std::move(r));
  }
  json doc;
  doc["recipe"] = {
      {"tokenizer", report.tokenizer},
      {"token_f1", "multiset precision/recall harmonic mean; both empty = 1, one empty = 0"},
      {"bleu",
       "sentence BLEU-4, single reference = original, clipped counts, p1 unsmoothed, "
       "add-one smoothing for n>=2, brevity penalty exp(1-r/c) if c<r, scale 0-100"},
      {"exact_match", "byte-equal after trimming leading/trailing whitespace"},
      {"sem", "sample stddev (n-1) / sqrt(n); null when n == 1"},
  };
  doc["aggregate"] = {{"f1", agg(report.f1)}, {"bleu", agg(report.bleu)}, {"exact", agg(report.exact)}};
  doc["records"] = std::move(records);
  return doc.dump(2);
}

std::vector<ReconstructionRecord> read_records_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<ReconstructionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto row = nlohmann::json::parse(line);
      ReconstructionRecord rec{row.at("original").get<std::string>(),
                               row.at("reconstruction").get<std::string>(), std::nullopt};
      if (row.contains("id")) rec.id = row["id"].is_string() ? row["id"].get<std::string>() : row["id"].dump();
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::pair<Tokens, Tokens>> read_token_ids_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::pair<Tokens, Tokens>> out;
  std::string line;
  auto to_tokens = [](const nlohmann::json& ids) {
    Tokens t;
    for (const auto& id : ids) t.push_back(std::to_string(id.get<long long>()));
    return t;
  };
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      const auto row = nlohmann::json::parse(line);
      out.emplace_back(to_tokens(row.at("original")), to_tokens(row.at("reconstruction")));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace lmprobe
