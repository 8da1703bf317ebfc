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

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "lmprobe/oracle.hpp"
#include "lmprobe/scorer.hpp"

namespace httplib {
class Client;
class Server;
}  // namespace httplib

namespace lmprobe {

// Wire protocol (JSON, UTF-8):
//   POST /v1/next_token  {"prompt": [ids], "logit_bias": {"id": b, ...},
//                         "mode": "argmax" | "top_logprobs" | "sample",
//                         "k": int (top_logprobs only), "seed": int (sample only)}
//     argmax, sample  -> {"token": id}
//     top_logprobs    -> {"top": [[id, logprob], ...]}  descending
//     errors: 400 malformed request or unknown token id, 403 mode not
//     allowed, 422 bias cap exceeded or k too large; body {"error": code,
//     "message": text}.
//   GET /v1/vocab -> {"size": |V|}
//   GET /v1/stats -> {"argmax": n, "top_logprobs": n, "sample": n, "total": n}
// Every response carries X-Query-Count, the server's running call total.

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 0;  ///< 0 picks a free port.
  ModeSet allowed = ModeSet::all();
  double bias_cap = 100.0;
  double logprob_quantum = 0.0;
  std::size_t threads = 64;
};

/// "host:port" (or ":port"); throws InvalidArgument.
void parse_bind_address(const std::string& text, ServerOptions& options);

class OracleServer {
 public:
  OracleServer(Scorer scorer, ServerOptions options);
  ~OracleServer();

  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Blocks until stop() is called from elsewhere.
  void wait();
  void stop();

  int port() const noexcept { return port_; }
  std::string url() const;
  QueryCounts queries() const noexcept { return oracle_.log().snapshot(); }
  LocalOracle& oracle() noexcept { return oracle_; }

 private:
  void install_routes();

  ServerOptions options_;
  LocalOracle oracle_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

struct RetryPolicy {
  int max_attempts = 3;  ///< Total attempts per call, including the first.
  std::chrono::milliseconds backoff{20};
};

struct RemoteOptions {
  std::chrono::milliseconds timeout{5000};
  RetryPolicy retry;
};

/// OracleAccess over HTTP. Safe to call from many threads; each call uses
/// one pooled connection. Transport failures and 5xx responses are retried
/// (responses are deterministic, so retries are idempotent) and surface as
/// TransportError once attempts run out; 4xx responses map back to the
/// domain errors the in-process oracle would raise.
class RemoteOracle final : public OracleAccess {
 public:
  explicit RemoteOracle(std::string base_url, RemoteOptions options = {});
  ~RemoteOracle() override;

  std::size_t vocab_size() override;
  TokenId argmax(std::span<const TokenId> prefix, const BiasMap& bias) override;
  std::vector<TokenLogprob> top_logprobs(std::span<const TokenId> prefix, const BiasMap& bias,
                                         std::size_t k) override;
  TokenId sample(std::span<const TokenId> prefix, const BiasMap& bias, std::uint64_t seed) override;

  /// HTTP requests sent to /v1/next_token, retries included.
  std::uint64_t attempts() const noexcept { return attempts_.load(); }
  /// Server-side QueryLog via GET /v1/stats.
  QueryCounts server_queries();

 private:
  std::string post(const std::string& body);
  std::string get(const std::string& path);
  std::unique_ptr<httplib::Client> acquire();
  void release(std::unique_ptr<httplib::Client> client);

  std::string base_url_;
  RemoteOptions options_;
  std::atomic<std::uint64_t> attempts_{0};
  std::atomic<std::size_t> vocab_size_{0};
  std::mutex pool_mutex_;
  std::vector<std::unique_ptr<httplib::Client>> pool_;
};

}  // namespace lmprobe
