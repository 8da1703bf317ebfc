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

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lmprobe/cli.hpp"
#include "lmprobe/lpd1.hpp"
#include "lmprobe/scorer.hpp"
#include "lmprobe/service.hpp"

using namespace lmprobe;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome cli(std::vector<std::string> args, const CliHooks& hooks = {}) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err, hooks);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("lmprobe_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("help, version and usage errors") {
  auto r = cli({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("flags > config file > environment > defaults") != std::string::npos);
  CHECK(cli({"--version"}).out == std::string(kVersion) + "\n");
  CHECK(cli({"extract", "--help"}).code == 0);

  r = cli({});
  CHECK(r.code == 2);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"extract", "--scorer", "x.json"}).code == 2);  // --out missing
  CHECK(cli({"extract", "--out", "x", "--mode", "fast"}).code == 2);
  CHECK(cli({"defend", "--in", "a", "--out", "b", "--policy", "temp:zero"}).code == 2);
  CHECK(cli({"extract", "--out", "x", "--oracle", "inproc"}).code == 2);  // needs --scorer
  CHECK(cli({"--replay"}).code == 2);
}

TEST_CASE("domain errors exit 1") {
  TempDir dir;
  CHECK(cli({"extract", "--scorer", dir / "missing.json", "--out", dir / "x.lpd1"}).code == 1);
  std::ofstream(dir / "bad.lpd1") << "LPD2";
  CHECK(cli({"defend", "--in", dir / "bad.lpd1", "--out", dir / "o.lpd1", "--policy", "argmax"}).code == 1);
  CHECK(cli({"--replay", dir / "missing.json"}).code == 1);
}

TEST_CASE("extract against a served scorer") {
  TempDir dir;
  REQUIRE(cli({"gen-scorer", "--kind", "categorical", "--vocab-size", "64", "--seed", "5", "--out", dir / "s.json"}).code == 0);
  const auto scorer = Scorer::load(dir / "s.json");
  OracleServer server(scorer, ServerOptions{});
  server.start();
  const auto r = cli({"extract", "--oracle", server.url(), "--delta", "0.000244140625", "--workers", "8",
                      "--out", dir / "x.lpd1"});
  REQUIRE(r.code == 0);
  const auto got = to_prob_vector(read_lpd1(dir / "x.lpd1"));
  const auto want = scorer.score({});
  const double delta = 0x1.0p-12;
  for (std::size_t i = 0; i < 64; ++i) CHECK(std::fabs(got[i] - want[i]) <= 2 * delta);

  const auto sidecar = json::parse(slurp(dir / "x.lpd1.json"));
  CHECK(sidecar["mode"] == "binary");
  CHECK(sidecar["queries_total"] == server.queries().total());
  const auto manifest = json::parse(slurp(dir / "x.lpd1.manifest.json"));
  CHECK(manifest["subcommand"] == "extract");
  CHECK(manifest["queries"]["total"] == server.queries().total());
  CHECK(manifest["config"]["oracle"] == server.url());
  CHECK(manifest["prng"] == "mt19937_64+splitmix64/v1");
}

TEST_CASE("defend with the identity policy copies the file") {
  TempDir dir;
  write_lpd1(dir / "p.lpd1", DistKind::probabilities, std::vector<double>{0.125, 0.5, 0.25, 0.125});
  REQUIRE(cli({"defend", "--in", dir / "p.lpd1", "--policy", "temp:1:log", "--out", dir / "q.lpd1"}).code == 0);
  CHECK(slurp(dir / "p.lpd1") == slurp(dir / "q.lpd1"));
  REQUIRE(cli({"defend", "--in", dir / "p.lpd1", "--policy", "topk:1", "--out", dir / "k.lpd1"}).code == 0);
  CHECK(read_lpd1(dir / "k.lpd1").values == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("redact") {
  TempDir dir;
  write_lpd1(dir / "p.lpd1", DistKind::probabilities, std::vector<double>{0.5, 0.25, 0.25});
  REQUIRE(cli({"redact", "--in", dir / "p.lpd1", "--k", "1", "--out", dir / "r.lpd1"}).code == 0);
  const auto r = read_lpd1(dir / "r.lpd1");
  CHECK(r.kind == DistKind::probabilities);
  CHECK(r.values[0] == 0.5);
  CHECK(r.values[1] == doctest::Approx(1.0 / 3).epsilon(1e-7));
  CHECK(cli({"redact", "--in", dir / "p.lpd1", "--fill", "abc", "--out", dir / "r.lpd1"}).code == 2);
}

TEST_CASE("residual analysis of an n-gram scorer") {
  TempDir dir;
  {
    std::ofstream corpus(dir / "corpus.jsonl");
    for (int i = 0; i < 20; ++i) {
      corpus << json{{"tokens", {i % 7, (i * 3) % 7, (i * 5 + 1) % 7, i % 3, (i + 4) % 7, 2, 6, i % 5}}}.dump() << "\n";
    }
  }
  REQUIRE(cli({"gen-scorer", "--kind", "ngram", "--order", "2", "--vocab-size", "7", "--corpus", dir / "corpus.jsonl",
               "--out", dir / "ng.json"}).code == 0);
  std::ofstream(dir / "swaps.jsonl") << R"({"original": [1, 2, 3, 4, 5, 6], "swapped": [1, 2, 0, 4, 5, 6]})" << "\n"
                                     << R"({"original": [0, 0, 0, 0], "swapped": [5, 0, 0, 0]})" << "\n";
  REQUIRE(cli({"analyze-residual", "--scorer", dir / "ng.json", "--swaps", dir / "swaps.jsonl", "--out",
               dir / "res.csv"}).code == 0);
  std::ifstream csv(dir / "res.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "case,position,distance,kl_nats,hamming_bits");
  int rows = 0;
  bool swap_row_nonzero = false;
  while (std::getline(csv, line)) {
    ++rows;
    std::stringstream ss(line);
    std::string c, pos, dist, kl, ham;
    std::getline(ss, c, ',');
    std::getline(ss, pos, ',');
    std::getline(ss, dist, ',');
    std::getline(ss, kl, ',');
    std::getline(ss, ham, ',');
    if (dist == "0") {
      swap_row_nonzero |= ham != "0";
    } else {
      CHECK(kl == "0");
      CHECK(ham == "0");
    }
  }
  CHECK(rows == 4 + 4);
  CHECK(swap_row_nonzero);

  REQUIRE(cli({"export-csv", "--kind", "residual", "--in", dir / "res.csv", "--out", dir / "series.csv"}).code == 0);
  std::ifstream series(dir / "series.csv");
  std::getline(series, line);
  CHECK(line == "position,kl_nats,hamming_bits");
  std::getline(series, line);
  CHECK(line.rfind("0,", 0) == 0);
}

TEST_CASE("corpus generation and swap cases") {
  TempDir dir;
  REQUIRE(cli({"gen-scorer", "--kind", "recurrent", "--vocab-size", "32", "--hidden-dim", "8", "--seed", "3",
               "--out", dir / "rnn.json"}).code == 0);
  REQUIRE(cli({"gen-corpus", "--scorer", dir / "rnn.json", "--sequences", "5", "--length", "12", "--seed", "4",
               "--out", dir / "c.jsonl", "--swaps-out", dir / "sw.jsonl", "--swap-position", "2"}).code == 0);
  const auto corpus = read_corpus_jsonl(dir / "c.jsonl");
  CHECK(corpus.size() == 5);
  const auto swaps = read_swap_cases(dir / "sw.jsonl");
  REQUIRE(swaps.size() == 5);
  for (const auto& s : swaps) CHECK(s.position == 2);
  CHECK(cli({"analyze-residual", "--scorer", dir / "rnn.json", "--swaps", dir / "sw.jsonl", "--format", "bfloat16",
             "--out", dir / "r.csv"}).code == 0);
}

TEST_CASE("eval and metrics export") {
  TempDir dir;
  std::ofstream(dir / "rec.jsonl") << R"({"original": "a b c", "reconstruction": "a b c"})" << "\n"
                                   << R"({"original": "a b c", "reconstruction": "a b d"})" << "\n";
  auto r = cli({"eval", "--records", dir / "rec.jsonl", "--out", dir / "report.json"});
  REQUIRE(r.code == 0);
  const auto report = json::parse(slurp(dir / "report.json"));
  CHECK(report["aggregate"]["exact"]["mean"] == 0.5);
  CHECK(report["recipe"]["tokenizer"] == "whitespace");

  std::ofstream(dir / "ids.jsonl") << R"({"original": [1, 2, 3], "reconstruction": [1, 2, 3]})" << "\n"
                                   << R"({"original": [1, 2, 3], "reconstruction": [1, 2, 3]})" << "\n";
  REQUIRE(cli({"eval", "--records", dir / "rec.jsonl", "--token-ids", dir / "ids.jsonl", "--out", dir / "ids.json"}).code == 0);
  CHECK(json::parse(slurp(dir / "ids.json"))["aggregate"]["f1"]["mean"] == 1.0);

  REQUIRE(cli({"export-csv", "--kind", "metrics", "--in", "1=" + (dir / "report.json"), "--in",
               "2=" + (dir / "ids.json"), "--out", dir / "m.csv"}).code == 0);
  const auto csv = slurp(dir / "m.csv");
  CHECK(csv.rfind("policy_param,metric,mean,sem\n", 0) == 0);
  CHECK(csv.find("\n1,exact,0.5,0.5\n") != std::string::npos);
  CHECK(csv.find("\n2,f1,1,0\n") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}

TEST_CASE("manifests replay bitwise") {
  TempDir dir;
  REQUIRE(cli({"gen-scorer", "--kind", "categorical", "--dist", "zipf", "--vocab-size", "100", "--seed", "9",
               "--out", dir / "z.json"}).code == 0);
  for (const std::string mode : {"binary", "top2-paper"}) {
    REQUIRE(cli({"extract", "--scorer", dir / "z.json", "--mode", mode, "--workers", "3", "--out", dir / "e.lpd1"}).code == 0);
    const auto first = slurp(dir / "e.lpd1");
    fs::remove(dir / "e.lpd1");
    REQUIRE(cli({"--replay", dir / "e.lpd1.manifest.json"}).code == 0);
    CHECK(slurp(dir / "e.lpd1") == first);
  }
  REQUIRE(cli({"mc-extract", "--scorer", dir / "z.json", "--samples", "500", "--seed", "4", "--out", dir / "m.lpd1"}).code == 0);
  const auto mc = slurp(dir / "m.lpd1");
  REQUIRE(cli({"--replay", dir / "m.lpd1.manifest.json"}).code == 0);
  CHECK(slurp(dir / "m.lpd1") == mc);
  const auto manifest = json::parse(slurp(dir / "m.lpd1.manifest.json"));
  CHECK(manifest["seeds"]["draws"] == 4);
  CHECK(manifest["config"]["alpha"] == "0");
  CHECK(manifest["queries"]["sample"] == 500);
}

TEST_CASE("config precedence") {
  TempDir dir;
  REQUIRE(cli({"gen-scorer", "--kind", "categorical", "--vocab-size", "8", "--out", dir / "s.json"}).code == 0);
  std::ofstream(dir / "cfg.txt") << "# extraction settings\n"
                                  << "delta = 0.01\n"
                                  << "--epsilon=2\n";
  ::setenv("LMPROBE_DELTA", "0.02", 1);
  ::setenv("LMPROBE_WORKERS", "2", 1);
  ::setenv("LMPROBE_EPSILON", "4", 1);
  auto config_of = [&](std::vector<std::string> extra) {
    std::vector<std::string> args{"extract", "--scorer", dir / "s.json", "--out", dir / "x.lpd1"};
    args.insert(args.end(), extra.begin(), extra.end());
    REQUIRE(cli(args).code == 0);
    return json::parse(slurp(dir / "x.lpd1.manifest.json"))["config"];
  };
  auto c = config_of({});
  CHECK(c["delta"] == "0.02");
  CHECK(c["workers"] == "2");
  c = config_of({"--config", dir / "cfg.txt"});
  CHECK(c["delta"] == "0.01");
  CHECK(c["epsilon"] == "2");
  CHECK(c["workers"] == "2");
  c = config_of({"--config", dir / "cfg.txt", "--delta", "0.001"});
  CHECK(c["delta"] == "0.001");
  ::unsetenv("LMPROBE_DELTA");
  ::unsetenv("LMPROBE_WORKERS");
  ::unsetenv("LMPROBE_EPSILON");
  c = config_of({});
  CHECK(c["delta"] == "0.000244140625");
  CHECK(c["workers"] == "1");

  std::ofstream(dir / "bad.txt") << "no_such_option = 1\n";
  CHECK(cli({"extract", "--scorer", dir / "s.json", "--out", dir / "x.lpd1", "--config", dir / "bad.txt"}).code == 2);
}

TEST_CASE("serve until the hook returns") {
  TempDir dir;
  REQUIRE(cli({"gen-scorer", "--kind", "recurrent", "--vocab-size", "16", "--hidden-dim", "4", "--out", dir / "r.json"}).code == 0);
  ::setenv("LMPROBE_BIND", "127.0.0.1:0", 1);
  std::uint64_t seen = 0;
  CliHooks hooks;
  hooks.serve_wait = [&](OracleServer& server) {
    RemoteOracle remote(server.url());
    remote.argmax(std::vector<TokenId>{1, 2}, {});
    remote.top_logprobs(std::vector<TokenId>{}, {}, 3);
    seen = server.queries().total();
  };
  const auto r = cli({"serve", "--scorer", dir / "r.json", "--ready-file", dir / "url.txt", "--manifest",
                      dir / "serve.json"},
                     hooks);
  ::unsetenv("LMPROBE_BIND");
  REQUIRE(r.code == 0);
  CHECK(seen == 2);
  CHECK(r.out.find("listening on http://127.0.0.1:") != std::string::npos);
  CHECK(slurp(dir / "url.txt").rfind("http://127.0.0.1:", 0) == 0);
  const auto manifest = json::parse(slurp(dir / "serve.json"));
  CHECK(manifest["queries"]["total"] == 2);
  CHECK(manifest["config"]["bind"] == "127.0.0.1:0");
  CHECK(cli({"serve", "--scorer", dir / "r.json", "--modes", "logits"}, hooks).code == 2);
}
