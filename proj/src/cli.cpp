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

#include "lmprobe/cli.hpp"

#include <signal.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmprobe/dist.hpp"
#include "lmprobe/error.hpp"
#include "lmprobe/extraction.hpp"
#include "lmprobe/lpd1.hpp"
#include "lmprobe/metrics.hpp"
#include "lmprobe/oracle.hpp"
#include "lmprobe/rng.hpp"
#include "lmprobe/scorer.hpp"
#include "lmprobe/service.hpp"

namespace lmprobe {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::string_view kEnvPrefix = "LMPROBE_";

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

TokenSequence parse_prompt(const std::string& text) {
  TokenSequence out;
  std::string normalized = text;
  std::replace(normalized.begin(), normalized.end(), ',', ' ');
  std::istringstream in(normalized);
  std::string item;
  while (in >> item) {
    long long id = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), id);
    if (ec != std::errc() || ptr != item.data() + item.size() || id < 0 || id > UINT32_MAX) {
      throw InvalidArgument("prompt token '" + item + "' is not a token id");
    }
    out.push_back(static_cast<TokenId>(id));
  }
  return out;
}

json counts_json(const QueryCounts& c) {
  return {{"argmax", c.argmax}, {"top_logprobs", c.top_logprobs}, {"sample", c.sample}, {"total", c.total()}};
}

/// Flat `key = value` lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (!trim(line).empty()) throw InvalidArgument("config line without '=': " + line);
      continue;
    }
    std::string key(trim(std::string_view(line).substr(0, eq)));
    std::string value(trim(std::string_view(line).substr(eq + 1)));
    while (!key.empty() && key.front() == '-') key.erase(0, 1);
    out[key] = value;
  }
  return out;
}

std::string env_name(std::string_view key) {
  std::string name(kEnvPrefix);
  for (char c : key) name.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return name;
}

bool mentions(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

/// Option values that fail to parse are usage errors.
template <typename Fn>
auto parse_option(const std::string& flag, Fn&& fn) {
  try {
    return fn();
  } catch (const InvalidArgument& e) {
    throw CLI::ValidationError(flag, e.what());
  }
}

// ---------------------------------------------------------------------------

struct Run {
  std::ostream& out;
  std::ostream& err;
  const CliHooks& hooks;
  CLI::App* sub = nullptr;
  std::vector<std::string> resolved_args;
  json inputs = json::array();
  json outputs = json::array();
  json seeds = json::object();
  std::optional<QueryCounts> queries;
  std::string manifest_path;
  std::string default_manifest;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

std::vector<std::string> resolve_args(CLI::App* sub) {
  std::vector<std::string> args{sub->get_name()};
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_name();
    if (name == "--help" || name == "--config" || opt->get_lnames().empty()) continue;
    std::vector<std::string> values;
    if (opt->count() > 0) {
      values = opt->results();
    } else {
      const auto def = opt->get_default_str();
      if (def.empty() || def == "[]") continue;
      values.push_back(def);
    }
    for (const auto& v : values) {
      args.push_back(name);
      args.push_back(v);
    }
  }
  return args;
}

void write_manifest(const Run& run, std::chrono::steady_clock::time_point start, const std::string& started_at) {
  std::string path = run.manifest_path.empty() ? run.default_manifest : run.manifest_path;
  if (path.empty()) return;
  json config = json::object();
  for (std::size_t i = 1; i + 1 < run.resolved_args.size(); i += 2) {
    const std::string key = run.resolved_args[i].substr(2);
    if (config.contains(key)) {
      if (!config[key].is_array()) config[key] = json::array({config[key]});
      config[key].push_back(run.resolved_args[i + 1]);
    } else {
      config[key] = run.resolved_args[i + 1];
    }
  }
  json doc;
  doc["tool"] = "lmprobe";
  doc["version"] = kVersion;
  doc["subcommand"] = run.sub->get_name();
  doc["args"] = run.resolved_args;
  doc["config"] = std::move(config);
  doc["inputs"] = run.inputs;
  doc["outputs"] = run.outputs;
  doc["seeds"] = run.seeds;
  doc["prng"] = kPrngId;
  doc["started_at"] = started_at;
  doc["wall_clock_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  doc["queries"] = run.queries ? counts_json(*run.queries) : json(nullptr);
  write_text(path, doc.dump(2) + "\n");
}

void default_serve_wait(OracleServer& server) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
}

std::unique_ptr<OracleAccess> open_oracle(const std::string& oracle, const std::string& scorer_path,
                                          double bias_cap, int timeout_ms, int attempts, Run& run) {
  if (oracle == "inproc") {
    if (scorer_path.empty()) throw CLI::ValidationError("--scorer", "required with --oracle inproc");
    run.inputs.push_back(scorer_path);
    return std::make_unique<LocalOracle>(Scorer::load(scorer_path), OracleOptions{ModeSet::all(), bias_cap, 0.0});
  }
  run.inputs.push_back(oracle);
  RemoteOptions options;
  options.timeout = std::chrono::milliseconds(timeout_ms);
  options.retry.max_attempts = attempts;
  return std::make_unique<RemoteOracle>(oracle, options);
}

QueryCounts oracle_counts(OracleAccess& oracle, const QueryCounts& fallback) {
  if (auto* local = dynamic_cast<LocalOracle*>(&oracle)) return local->log().snapshot();
  return fallback;
}

// ---------------------------------------------------------------------------
// Subcommands. Each registers its options and returns the action to run.

using Action = std::function<void(Run&)>;

Action add_gen_scorer(CLI::App& app) {
  auto* sub = app.add_subcommand("gen-scorer", "Create a categorical, n-gram or recurrent scorer");
  struct Opts {
    std::string kind = "recurrent";
    std::size_t vocab_size = 256;
    std::size_t hidden_dim = 64;
    std::uint64_t seed = 0;
    std::size_t order = 2;
    double alpha = 1.0;
    std::string corpus, text_corpus, vocab_file, table, dist = "gaussian";
    double scale = 2.0;
    double zipf_exponent = 1.1;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--kind", o->kind, "categorical | ngram | recurrent")
      ->check(CLI::IsMember({"categorical", "ngram", "recurrent"}))
      ->capture_default_str();
  sub->add_option("--vocab-size", o->vocab_size, "|V| (ignored when a table or vocab file sets it)")
      ->capture_default_str();
  sub->add_option("--hidden-dim", o->hidden_dim, "recurrent hidden size")->capture_default_str();
  sub->add_option("--seed", o->seed, "weights / random table seed")->capture_default_str();
  sub->add_option("--order", o->order, "n-gram order")->capture_default_str();
  sub->add_option("--alpha", o->alpha, "n-gram add-alpha smoothing")->default_str(fmt_double(o->alpha));
  sub->add_option("--corpus", o->corpus, "n-gram training corpus, JSONL {\"tokens\": [ids]}");
  sub->add_option("--text-corpus", o->text_corpus, "whitespace-tokenized corpus (needs --vocab-file)");
  sub->add_option("--vocab-file", o->vocab_file, "one token string per line, id = line index");
  sub->add_option("--table", o->table, "categorical table from an LPD1 file");
  sub->add_option("--dist", o->dist, "random categorical table: gaussian | zipf")
      ->check(CLI::IsMember({"gaussian", "zipf"}))
      ->capture_default_str();
  sub->add_option("--scale", o->scale, "gaussian logit scale")->default_str(fmt_double(o->scale));
  sub->add_option("--zipf-exponent", o->zipf_exponent, "zipf exponent")->default_str(fmt_double(o->zipf_exponent));
  sub->add_option("--out", o->out, "scorer JSON path")->required();
  return [o](Run& run) {
    std::optional<Scorer> scorer;
    std::optional<Vocab> vocab;
    if (!o->vocab_file.empty()) {
      vocab = read_vocab_file(o->vocab_file);
      run.inputs.push_back(o->vocab_file);
    }
    const std::size_t size = vocab ? vocab->size() : o->vocab_size;
    if (o->kind == "categorical") {
      if (!o->table.empty()) {
        run.inputs.push_back(o->table);
        scorer = Scorer::categorical(to_prob_vector(read_lpd1(o->table)));
      } else if (o->dist == "zipf") {
        scorer = Scorer::categorical(zipf_distribution(size, o->zipf_exponent, o->seed));
      } else {
        scorer = Scorer::categorical(gaussian_logit_distribution(size, o->scale, o->seed));
      }
      run.seeds["table"] = o->seed;
    } else if (o->kind == "recurrent") {
      scorer = Scorer::recurrent(size, o->hidden_dim, o->seed);
      run.seeds["weights"] = o->seed;
    } else {
      Corpus corpus;
      if (!o->corpus.empty()) {
        corpus = read_corpus_jsonl(o->corpus);
        run.inputs.push_back(o->corpus);
      } else if (!o->text_corpus.empty()) {
        if (!vocab) throw CLI::ValidationError("--text-corpus", "needs --vocab-file");
        corpus = read_corpus_text(o->text_corpus, *vocab);
        run.inputs.push_back(o->text_corpus);
      } else {
        throw CLI::ValidationError("--corpus", "an n-gram scorer needs --corpus or --text-corpus");
      }
      scorer = fit_ngram(corpus, o->order, o->alpha, vocab ? *vocab : Vocab(size));
    }
    if (vocab && scorer->kind() != ScorerKind::ngram) scorer = scorer->with_vocab(*vocab);
    scorer->save(o->out);
    run.outputs.push_back(o->out);
    run.default_manifest = o->out + ".manifest.json";
  };
}

Action add_gen_corpus(CLI::App& app) {
  auto* sub = app.add_subcommand("gen-corpus", "Sample token sequences (and optional swap cases) from a scorer");
  struct Opts {
    std::string scorer, out, swaps_out;
    std::size_t sequences = 100, length = 20, swap_position = 0;
    std::uint64_t seed = 0;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--scorer", o->scorer, "scorer JSON")->required();
  sub->add_option("--sequences", o->sequences, "number of sequences")->capture_default_str();
  sub->add_option("--length", o->length, "tokens per sequence")->capture_default_str();
  sub->add_option("--seed", o->seed, "sampling seed")->capture_default_str();
  sub->add_option("--out", o->out, "corpus JSONL path")->required();
  sub->add_option("--swaps-out", o->swaps_out, "also write one swap case per sequence (JSONL)");
  sub->add_option("--swap-position", o->swap_position, "0-based position of the swapped token")
      ->capture_default_str();
  return [o](Run& run) {
    const Scorer scorer = Scorer::load(o->scorer);
    run.inputs.push_back(o->scorer);
    const Corpus corpus = generate_corpus(scorer, o->sequences, o->length, o->seed);
    write_corpus_jsonl(o->out, corpus);
    run.outputs.push_back(o->out);
    run.seeds["sampling"] = o->seed;
    run.default_manifest = o->out + ".manifest.json";
    if (o->swaps_out.empty()) return;
    if (o->swap_position >= o->length) throw CLI::ValidationError("--swap-position", "must be < --length");
    std::ofstream f(o->swaps_out, std::ios::trunc);
    if (!f) throw Error("cannot open " + o->swaps_out);
    Rng rng(splitmix64(o->seed));
    const std::size_t n = scorer.vocab().size();
    for (const auto& seq : corpus) {
      TokenSequence swapped = seq;
      const auto offset = static_cast<TokenId>(1 + rng.below(n - 1));
      swapped[o->swap_position] = static_cast<TokenId>((seq[o->swap_position] + offset) % n);
      f << json{{"original", seq}, {"swapped", swapped}}.dump() << '\n';
    }
    run.outputs.push_back(o->swaps_out);
  };
}

Action add_serve(CLI::App& app) {
  auto* sub = app.add_subcommand("serve", "Serve a scorer over the next-token HTTP protocol");
  struct Opts {
    std::string scorer, bind = "127.0.0.1:8080", modes = "argmax,top_logprobs,sample", ready_file;
    double bias_cap = 100.0, logprob_quantum = 0.0;
    std::size_t threads = 64;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--scorer", o->scorer, "scorer JSON")->required();
  sub->add_option("--bind", o->bind, "host:port (env LMPROBE_BIND)")->capture_default_str();
  sub->add_option("--modes", o->modes, "allowed access modes")->capture_default_str();
  sub->add_option("--bias-cap", o->bias_cap, "maximum |logit bias|")->default_str(fmt_double(o->bias_cap));
  sub->add_option("--logprob-quantum", o->logprob_quantum, "round returned logprobs (0 = off)")
      ->default_str(fmt_double(o->logprob_quantum));
  sub->add_option("--threads", o->threads, "server worker threads")->capture_default_str();
  sub->add_option("--ready-file", o->ready_file, "write the server URL here once listening");
  return [o](Run& run) {
    ServerOptions options;
    parse_option("--bind", [&] { parse_bind_address(o->bind, options); });
    options.allowed = parse_option("--modes", [&] { return ModeSet::parse(o->modes); });
    options.bias_cap = o->bias_cap;
    options.logprob_quantum = o->logprob_quantum;
    options.threads = o->threads;
    run.inputs.push_back(o->scorer);
    run.default_manifest = "lmprobe-serve.manifest.json";

    // Signals must be blocked before the server spawns its threads so that
    // sigwait in this thread receives them.
    sigset_t set, old;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    const bool use_signals = !run.hooks.serve_wait;
    if (use_signals) pthread_sigmask(SIG_BLOCK, &set, &old);

    OracleServer server(Scorer::load(o->scorer), options);
    server.start();
    run.out << "listening on " << server.url() << std::endl;
    if (!o->ready_file.empty()) write_text(o->ready_file, server.url() + "\n");
    if (use_signals) {
      default_serve_wait(server);
      pthread_sigmask(SIG_SETMASK, &old, nullptr);
    } else {
      run.hooks.serve_wait(server);
      server.stop();
    }
    run.queries = server.queries();
  };
}

struct OracleOpts {
  std::string oracle = "inproc";
  std::string scorer;
  std::string prompt;
  int timeout_ms = 5000;
  int attempts = 3;
};

void add_oracle_options(CLI::App* sub, OracleOpts& o) {
  sub->add_option("--oracle", o.oracle, "'inproc' or a server URL such as http://127.0.0.1:8080")
      ->capture_default_str();
  sub->add_option("--scorer", o.scorer, "scorer JSON for --oracle inproc");
  sub->add_option("--prompt", o.prompt, "prompt token ids, space or comma separated")->capture_default_str();
  sub->add_option("--timeout-ms", o.timeout_ms, "remote request timeout")->capture_default_str();
  sub->add_option("--attempts", o.attempts, "remote attempts per call, retries included")->capture_default_str();
}

Action add_extract(CLI::App& app) {
  auto* sub = app.add_subcommand("extract", "Recover the next-token distribution through the oracle");
  struct Opts {
    OracleOpts oracle;
    std::string mode = "binary", out;
    double delta = 0x1.0p-12, epsilon = 1.0, bias_cap = 100.0;
    std::size_t workers = 1;
  };
  auto o = std::make_shared<Opts>();
  add_oracle_options(sub, o->oracle);
  sub->add_option("--mode", o->mode, "binary | top2-exact | top2-paper")
      ->check(CLI::IsMember({"binary", "top2-exact", "top2-paper"}))
      ->capture_default_str();
  sub->add_option("--delta", o->delta, "bisection precision")->default_str(fmt_double(o->delta));
  sub->add_option("--epsilon", o->epsilon, "initial doubling bound")->default_str(fmt_double(o->epsilon));
  sub->add_option("--bias-cap", o->bias_cap, "largest bias the search may use")->default_str(fmt_double(o->bias_cap));
  sub->add_option("--workers", o->workers, "parallel per-token searches")->capture_default_str();
  sub->add_option("--out", o->out, "LPD1 output (relative logits); sidecar at <out>.json")->required();
  return [o](Run& run) {
    ExtractionConfig cfg;
    cfg.delta = o->delta;
    cfg.epsilon = o->epsilon;
    cfg.bias_cap = o->bias_cap;
    cfg.workers = o->workers;
    if (o->mode == "binary") {
      cfg.mode = BinarySearchMode{};
    } else {
      cfg.mode = Top2Mode{o->mode == "top2-exact" ? Top2Variant::exact : Top2Variant::paper};
    }
    parse_option("--delta", [&] { cfg.validate(); });
    auto oracle = open_oracle(o->oracle.oracle, o->oracle.scorer, cfg.bias_cap, o->oracle.timeout_ms,
                              o->oracle.attempts, run);
    const auto prompt = parse_option("--prompt", [&] { return parse_prompt(o->oracle.prompt); });
    const auto result = extract(*oracle, prompt, cfg);
    write_lpd1(o->out, DistKind::logits, result.relative_logits);
    write_text(o->out + ".json", extraction_sidecar_json(result, cfg) + "\n");
    run.outputs.push_back(o->out);
    run.outputs.push_back(o->out + ".json");
    run.queries = oracle_counts(*oracle, result.queries);
    run.default_manifest = o->out + ".manifest.json";
    run.out << "extracted " << result.relative_logits.size() << " logits with " << result.queries.total()
            << " queries, " << result.saturated.size() << " saturated\n";
  };
}

Action add_mc_extract(CLI::App& app) {
  auto* sub = app.add_subcommand("mc-extract", "Monte Carlo baseline: estimate the distribution from samples");
  struct Opts {
    OracleOpts oracle;
    std::uint64_t samples = 10000, seed = 0;
    double alpha = 0.0;
    std::size_t workers = 1;
    std::string out;
  };
  auto o = std::make_shared<Opts>();
  add_oracle_options(sub, o->oracle);
  sub->add_option("--samples", o->samples, "number of draws")->capture_default_str();
  sub->add_option("--alpha", o->alpha, "additive smoothing")->default_str(fmt_double(o->alpha));
  sub->add_option("--seed", o->seed, "base draw seed")->capture_default_str();
  sub->add_option("--workers", o->workers, "parallel draws")->capture_default_str();
  sub->add_option("--out", o->out, "LPD1 output (probabilities); sidecar at <out>.json")->required();
  return [o](Run& run) {
    ExtractionConfig cfg;
    cfg.workers = o->workers;
    cfg.mode = MonteCarloMode{o->samples, o->alpha, o->seed};
    parse_option("--samples", [&] { cfg.validate(); });
    auto oracle = open_oracle(o->oracle.oracle, o->oracle.scorer, cfg.bias_cap, o->oracle.timeout_ms,
                              o->oracle.attempts, run);
    const auto prompt = parse_option("--prompt", [&] { return parse_prompt(o->oracle.prompt); });
    const auto result = extract_monte_carlo(*oracle, prompt, cfg);
    write_lpd1(o->out, DistKind::probabilities, result.reconstructed.values());
    write_text(o->out + ".json", extraction_sidecar_json(result, cfg) + "\n");
    run.outputs.push_back(o->out);
    run.outputs.push_back(o->out + ".json");
    run.seeds["draws"] = o->seed;
    run.queries = oracle_counts(*oracle, result.queries);
    run.default_manifest = o->out + ".manifest.json";
  };
}

Action add_defend(CLI::App& app) {
  auto* sub = app.add_subcommand("defend", "Apply a sampling policy to a distribution file");
  struct Opts {
    std::string in, policy, out;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--in", o->in, "LPD1 input")->required();
  sub->add_option("--policy", o->policy, "argmax | temp:TAU:log|prob | topp:P | topk:K")->required();
  sub->add_option("--out", o->out, "LPD1 output (probabilities)")->required();
  return [o](Run& run) {
    const auto policy = parse_option("--policy", [&] { return SamplingPolicy::parse(o->policy); });
    const auto input = read_lpd1(o->in);
    const auto defended = apply_policy(to_prob_vector(input), policy);
    write_lpd1(o->out, DistKind::probabilities, defended.values());
    run.inputs.push_back(o->in);
    run.outputs.push_back(o->out);
    run.default_manifest = o->out + ".manifest.json";
  };
}

Action add_redact(CLI::App& app) {
  auto* sub = app.add_subcommand("redact", "Keep k components of a distribution and fill the rest");
  struct Opts {
    std::string in, mode = "top", fill = "mean", out;
    std::size_t k = 1;
    std::uint64_t seed = 0;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--in", o->in, "LPD1 input")->required();
  sub->add_option("--mode", o->mode, "keep top | bottom | random k")
      ->check(CLI::IsMember({"top", "bottom", "random"}))
      ->capture_default_str();
  sub->add_option("--k", o->k, "components kept")->capture_default_str();
  sub->add_option("--seed", o->seed, "seed for --mode random")->capture_default_str();
  sub->add_option("--fill", o->fill, "'mean' or a number")->capture_default_str();
  sub->add_option("--out", o->out, "LPD1 output (unnormalized features, kind byte 1)")->required();
  return [o](Run& run) {
    RedactionSpec spec;
    spec.mode = o->mode == "top"      ? RedactionMode::keep_top_k
                : o->mode == "bottom" ? RedactionMode::keep_bottom_k
                                      : RedactionMode::keep_random_k;
    spec.k = o->k;
    spec.seed = o->seed;
    if (o->fill != "mean") {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(o->fill.data(), o->fill.data() + o->fill.size(), v);
      if (ec != std::errc() || ptr != o->fill.data() + o->fill.size()) {
        throw CLI::ValidationError("--fill", "must be 'mean' or a number");
      }
      spec.fill = v;
    }
    const auto redacted = redact(to_prob_vector(read_lpd1(o->in)), spec);
    write_lpd1(o->out, DistKind::probabilities, redacted);
    run.inputs.push_back(o->in);
    run.outputs.push_back(o->out);
    if (spec.mode == RedactionMode::keep_random_k) run.seeds["redaction"] = o->seed;
    run.default_manifest = o->out + ".manifest.json";
  };
}

Action add_analyze_residual(CLI::App& app) {
  auto* sub = app.add_subcommand("analyze-residual", "KL and 16-bit Hamming profiles after a one-token swap");
  struct Opts {
    std::string scorer, swaps, format = "binary16", out;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--scorer", o->scorer, "scorer JSON")->required();
  sub->add_option("--swaps", o->swaps, "JSONL of {\"original\": [ids], \"swapped\": [ids]}")->required();
  sub->add_option("--format", o->format, "binary16 | bfloat16")
      ->check(CLI::IsMember({"binary16", "bfloat16"}))
      ->capture_default_str();
  sub->add_option("--out", o->out, "CSV: case,position,distance,kl_nats,hamming_bits")->required();
  return [o](Run& run) {
    const Scorer scorer = Scorer::load(o->scorer);
    const auto cases = read_swap_cases(o->swaps);
    const auto format = parse_float16_format(o->format);
    std::ofstream csv(o->out, std::ios::trunc);
    if (!csv) throw Error("cannot open " + o->out);
    csv << "case,position,distance,kl_nats,hamming_bits\n";
    for (std::size_t c = 0; c < cases.size(); ++c) {
      for (const auto& e : residual_info_profile(scorer, cases[c], format)) {
        csv << c << ',' << e.position << ',' << e.distance << ','
            << (e.kl ? fmt_double(*e.kl) : std::string("inf")) << ',' << e.hamming << '\n';
      }
    }
    run.inputs = {o->scorer, o->swaps};
    run.outputs.push_back(o->out);
    run.default_manifest = o->out + ".manifest.json";
  };
}

Action add_eval(CLI::App& app) {
  auto* sub = app.add_subcommand("eval", "Score prompt reconstructions: token F1, BLEU, exact match");
  struct Opts {
    std::string records, token_ids, out;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--records", o->records, "JSONL of {\"original\": str, \"reconstruction\": str}")->required();
  sub->add_option("--token-ids", o->token_ids,
                  "optional JSONL of {\"original\": [ids], \"reconstruction\": [ids]} per record, "
                  "used instead of whitespace tokens for F1 and BLEU");
  sub->add_option("--out", o->out, "MetricReport JSON")->required();
  return [o](Run& run) {
    const auto records = read_records_jsonl(o->records);
    if (records.empty()) throw InvalidArgument("no records in " + o->records);
    run.inputs.push_back(o->records);
    MetricReport report;
    if (o->token_ids.empty()) {
      report = evaluate(records);
    } else {
      const auto ids = read_token_ids_jsonl(o->token_ids);
      if (ids.size() != records.size()) throw InvalidArgument("--token-ids does not match the record count");
      std::vector<RecordScore> scores;
      for (std::size_t i = 0; i < records.size(); ++i) {
        scores.push_back(score_record(records[i], ids[i].first, ids[i].second));
      }
      report = aggregate(std::move(scores));
      report.tokenizer = "external-token-ids";
      run.inputs.push_back(o->token_ids);
    }
    write_text(o->out, report_json(report) + "\n");
    run.outputs.push_back(o->out);
    run.default_manifest = o->out + ".manifest.json";
    run.out << "f1 " << report.f1.mean << "  bleu " << report.bleu.mean << "  exact " << report.exact.mean
            << "  (n = " << report.f1.n << ")\n";
  };
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

Action add_export_csv(CLI::App& app) {
  auto* sub = app.add_subcommand("export-csv", "Plot-ready CSV series");
  struct Opts {
    std::string kind = "residual", out;
    std::vector<std::string> in;
  };
  auto o = std::make_shared<Opts>();
  sub->add_option("--kind", o->kind,
                  "residual: position,kl_nats,hamming_bits (means by distance from the swap); "
                  "metrics: policy_param,metric,mean,sem")
      ->check(CLI::IsMember({"residual", "metrics"}))
      ->capture_default_str();
  sub->add_option("--in", o->in,
                  "residual: analyze-residual CSV; metrics: PARAM=report.json (repeatable)")
      ->required();
  sub->add_option("--out", o->out, "CSV output")->required();
  return [o](Run& run) {
    std::ofstream csv(o->out, std::ios::trunc);
    if (!csv) throw Error("cannot open " + o->out);
    if (o->kind == "residual") {
      struct Acc {
        double kl = 0.0;
        double hamming = 0.0;
        std::size_t n = 0;
      };
      std::map<std::size_t, Acc> by_distance;
      for (const auto& path : o->in) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open " + path);
        std::string line;
        std::getline(in, line);
        if (line != "case,position,distance,kl_nats,hamming_bits") throw FormatError(path + ": unexpected header");
        while (std::getline(in, line)) {
          const auto cells = split_csv_line(line);
          if (cells.size() != 5) throw FormatError(path + ": malformed row '" + line + "'");
          auto& acc = by_distance[std::stoul(cells[2])];
          acc.kl += cells[3] == "inf" ? INFINITY : std::stod(cells[3]);
          acc.hamming += std::stod(cells[4]);
          ++acc.n;
        }
        run.inputs.push_back(path);
      }
      csv << "position,kl_nats,hamming_bits\n";
      for (const auto& [d, acc] : by_distance) {
        const auto n = static_cast<double>(acc.n);
        csv << d << ',' << fmt_double(acc.kl / n) << ',' << fmt_double(acc.hamming / n) << '\n';
      }
    } else {
      csv << "policy_param,metric,mean,sem\n";
      for (const auto& spec : o->in) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--in", "metrics inputs are PARAM=report.json");
        const std::string param = spec.substr(0, eq);
        const std::string path = spec.substr(eq + 1);
        std::ifstream in(path);
        if (!in) throw Error("cannot open " + path);
        const auto doc = json::parse(in);
        for (const char* metric : {"f1", "bleu", "exact"}) {
          const auto& a = doc.at("aggregate").at(metric);
          csv << param << ',' << metric << ',' << fmt_double(a.at("mean").get<double>()) << ','
              << (a.at("sem").is_null() ? std::string() : fmt_double(a.at("sem").get<double>())) << '\n';
        }
        run.inputs.push_back(path);
      }
    }
    run.outputs.push_back(o->out);
    run.default_manifest = o->out + ".manifest.json";
  };
}

/// Appends `--key value` for options set only in the config file or the
/// environment, giving flags > config file > environment > defaults.
std::vector<std::string> merge_sources(CLI::App* sub, std::vector<std::string> args) {
  std::map<std::string, std::string> config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = read_config_file(args[i + 1]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = read_config_file(args[i].substr(9));
    }
  }
  const std::vector<std::string> given = args;
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string key = opt->get_lnames().front();
    if (key == "help" || key == "config" || mentions(given, "--" + key)) continue;
    if (auto it = config.find(key); it != config.end()) {
      args.push_back("--" + key);
      args.push_back(it->second);
    } else if (const char* env = std::getenv(env_name(key).c_str())) {
      args.push_back("--" + key);
      args.push_back(env);
    }
  }
  for (const auto& [key, value] : config) {
    if (!sub->get_option_no_throw("--" + key)) throw InvalidArgument("unknown config key '" + key + "'");
  }
  return args;
}

int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err, const CliHooks& hooks) {
  if (!args.empty() && args[0] == "--replay") {
    if (args.size() != 2) {
      err << "usage: lmprobe --replay MANIFEST\n";
      return 2;
    }
    std::ifstream in(args[1]);
    if (!in) {
      err << "error: cannot open manifest " << args[1] << "\n";
      return 1;
    }
    json doc;
    try {
      doc = json::parse(in);
      args = doc.at("args").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      err << "error: bad manifest: " << e.what() << "\n";
      return 1;
    }
    return dispatch(std::move(args), out, err, hooks);
  }

  CLI::App app{"Recover, defend and analyze next-token distributions behind constrained LM APIs.\n"
               "Options may also come from --config FILE (key = value lines) or LMPROBE_<OPTION>\n"
               "environment variables; precedence: flags > config file > environment > defaults.\n"
               "`lmprobe --replay MANIFEST` reruns a recorded invocation.",
               "lmprobe"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::map<std::string, Action> actions;
  actions["gen-scorer"] = add_gen_scorer(app);
  actions["gen-corpus"] = add_gen_corpus(app);
  actions["serve"] = add_serve(app);
  actions["extract"] = add_extract(app);
  actions["mc-extract"] = add_mc_extract(app);
  actions["defend"] = add_defend(app);
  actions["redact"] = add_redact(app);
  actions["analyze-residual"] = add_analyze_residual(app);
  actions["eval"] = add_eval(app);
  actions["export-csv"] = add_export_csv(app);

  std::string manifest;
  std::string config_path;
  for (auto* sub : app.get_subcommands({})) {
    sub->add_option("--config", config_path, "flat key = value config file");
    sub->add_option("--manifest", manifest, "run manifest path (default <out>.manifest.json)");
  }

  auto usage = [&](const std::string& message) {
    err << "usage error: " << message << "\n\n" << app.help();
    return 2;
  };

  std::vector<std::string> merged = args;
  try {
    const auto name = std::find_if(args.begin(), args.end(), [](const std::string& a) { return a.rfind('-', 0) != 0; });
    if (name != args.end() && actions.count(*name)) merged = merge_sources(app.get_subcommand(*name), args);
  } catch (const Error& e) {
    return usage(e.what());
  }

  std::vector<const char*> argv{"lmprobe"};
  for (const auto& a : merged) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    return usage(e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->get_option("--help")->count() > 0) {
    out << sub->help();
    return 0;
  }
  Run run{out, err, hooks, sub, {}, json::array(), json::array(), json::object(), std::nullopt, {}, {}};
  run.manifest_path = manifest;
  run.resolved_args = resolve_args(sub);
  const auto start = std::chrono::steady_clock::now();
  const auto started_at = iso_now();
  try {
    actions.at(sub->get_name())(run);
    write_manifest(run, start, started_at);
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n\n" << sub->help();
    return 2;
  } catch (const TransportError& e) {
    err << "transport error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const CliHooks& hooks) {
  return dispatch(args, out, err, hooks);
}

}  // namespace lmprobe
