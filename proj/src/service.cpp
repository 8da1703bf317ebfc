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

#include "lmprobe/service.hpp"

#include <charconv>

#define CPPHTTPLIB_LISTEN_BACKLOG 256
#include <httplib.h>
#include <json.hpp>

#include "lmprobe/error.hpp"

namespace lmprobe {

using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";

struct HttpError {
  int status;
  std::string code;
  std::string message;
  std::optional<std::int64_t> token;
};

struct ParsedRequest {
  TokenSequence prompt;
  BiasMap bias;
  AccessMode mode = AccessMode::argmax_bias;
  std::size_t k = 0;
  std::uint64_t seed = 0;
};

[[noreturn]] void malformed(const std::string& message) {
  throw HttpError{400, "malformed_request", message, std::nullopt};
}

ParsedRequest parse_request(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::exception& e) {
    malformed(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) malformed("request must be a JSON object");

  ParsedRequest req;
  if (!doc.contains("prompt") || !doc["prompt"].is_array()) malformed("'prompt' must be an array");
  for (const auto& t : doc["prompt"]) {
    if (!t.is_number_integer()) malformed("prompt entries must be integers");
    const auto id = t.get<std::int64_t>();
    if (id < 0 || id > static_cast<std::int64_t>(UINT32_MAX)) {
      throw HttpError{400, "unknown_token", "unknown token id " + std::to_string(id), id};
    }
    req.prompt.push_back(static_cast<TokenId>(id));
  }

  if (doc.contains("logit_bias")) {
    const auto& lb = doc["logit_bias"];
    if (!lb.is_object()) malformed("'logit_bias' must be an object");
    for (const auto& [key, value] : lb.items()) {
      std::int64_t id = 0;
      auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
      if (ec != std::errc() || ptr != key.data() + key.size()) {
        malformed("logit_bias key '" + key + "' is not a token id");
      }
      if (!value.is_number()) malformed("logit_bias values must be numbers");
      if (id < 0) throw HttpError{400, "unknown_token", "unknown token id " + key, id};
      req.bias.set(static_cast<TokenId>(std::min<std::int64_t>(id, UINT32_MAX)), value.get<double>());
    }
  }

  if (!doc.contains("mode") || !doc["mode"].is_string()) malformed("'mode' must be a string");
  const auto mode = doc["mode"].get<std::string>();
  if (mode == "argmax") {
    req.mode = AccessMode::argmax_bias;
  } else if (mode == "top_logprobs") {
    req.mode = AccessMode::top_logprobs;
  } else if (mode == "sample") {
    req.mode = AccessMode::sample;
  } else {
    malformed("unknown mode '" + mode + "'");
  }

  const bool wants_k = req.mode == AccessMode::top_logprobs;
  const bool wants_seed = req.mode == AccessMode::sample;
  if (doc.contains("k") != wants_k) malformed(wants_k ? "'k' is required" : "'k' only applies to top_logprobs");
  if (doc.contains("seed") != wants_seed) {
    malformed(wants_seed ? "'seed' is required" : "'seed' only applies to sample");
  }
  if (wants_k) {
    if (!doc["k"].is_number_integer() || doc["k"].get<std::int64_t>() < 1) {
      malformed("'k' must be a positive integer");
    }
    req.k = doc["k"].get<std::size_t>();
  }
  if (wants_seed) {
    if (!doc["seed"].is_number_unsigned()) malformed("'seed' must be a non-negative integer");
    req.seed = doc["seed"].get<std::uint64_t>();
  }
  return req;
}

json stats_json(const QueryCounts& c) {
  return {{"argmax", c.argmax}, {"top_logprobs", c.top_logprobs}, {"sample", c.sample}, {"total", c.total()}};
}

}  // namespace

void parse_bind_address(const std::string& text, ServerOptions& options) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw InvalidArgument("bind address must be host:port");
  int port = 0;
  const char* begin = text.data() + colon + 1;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, port);
  if (ec != std::errc() || ptr != end || port < 0 || port > 65535) {
    throw InvalidArgument("invalid port in bind address '" + text + "'");
  }
  if (colon > 0) options.host = text.substr(0, colon);
  options.port = port;
}

// ---------------------------------------------------------------------------
// Server

OracleServer::OracleServer(Scorer scorer, ServerOptions options)
    : options_(std::move(options)),
      oracle_(std::move(scorer), OracleOptions{options_.allowed, options_.bias_cap, options_.logprob_quantum}),
      server_(std::make_unique<httplib::Server>()) {
  const std::size_t threads = std::max<std::size_t>(options_.threads, 1);
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  server_->set_keep_alive_max_count(1u << 20);
  server_->set_tcp_nodelay(true);
  install_routes();
}

OracleServer::~OracleServer() { stop(); }

void OracleServer::install_routes() {
  server_->Post("/v1/next_token", [this](const httplib::Request& request, httplib::Response& response) {
    json body;
    int status = 200;
    try {
      const auto req = parse_request(request.body);
      try {
        switch (req.mode) {
          case AccessMode::argmax_bias:
            body = {{"token", oracle_.argmax(req.prompt, req.bias)}};
            break;
          case AccessMode::sample:
            body = {{"token", oracle_.sample(req.prompt, req.bias, req.seed)}};
            break;
          case AccessMode::top_logprobs: {
            json top = json::array();
            for (const auto& [id, lp] : oracle_.top_logprobs(req.prompt, req.bias, req.k)) {
              top.push_back({id, lp});
            }
            body = {{"top", std::move(top)}};
            break;
          }
        }
      } catch (const ModeNotAllowed& e) {
        throw HttpError{403, "mode_not_allowed", e.what(), std::nullopt};
      } catch (const UnknownToken& e) {
        throw HttpError{400, "unknown_token", e.what(), e.id()};
      } catch (const BiasCapExceeded& e) {
        throw HttpError{422, "bias_cap_exceeded", e.what(), std::nullopt};
      } catch (const KTooLarge& e) {
        throw HttpError{422, "k_too_large", e.what(), std::nullopt};
      } catch (const Error& e) {
        throw HttpError{400, "malformed_request", e.what(), std::nullopt};
      }
    } catch (const HttpError& e) {
      status = e.status;
      body = {{"error", e.code}, {"message", e.message}};
      if (e.token) body["token"] = *e.token;
    }
    response.status = status;
    response.set_header("X-Query-Count", std::to_string(oracle_.log().total()));
    response.set_content(body.dump(), kJson);
  });

  server_->Get("/v1/vocab", [this](const httplib::Request&, httplib::Response& response) {
    response.set_header("X-Query-Count", std::to_string(oracle_.log().total()));
    response.set_content(json{{"size", oracle_.vocab_size()}}.dump(), kJson);
  });

  server_->Get("/v1/stats", [this](const httplib::Request&, httplib::Response& response) {
    const auto counts = oracle_.log().snapshot();
    response.set_header("X-Query-Count", std::to_string(counts.total()));
    response.set_content(stats_json(counts).dump(), kJson);
  });
}

int OracleServer::start() {
  if (thread_.joinable()) return port_;
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
  } else {
    port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (port_ < 0) {
    throw Error("cannot bind " + options_.host + ":" + std::to_string(options_.port));
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void OracleServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void OracleServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string OracleServer::url() const {
  return "http://" + options_.host + ":" + std::to_string(port_);
}

// ---------------------------------------------------------------------------
// Client

RemoteOracle::RemoteOracle(std::string base_url, RemoteOptions options)
    : base_url_(std::move(base_url)), options_(options) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
  if (options_.retry.max_attempts < 1) throw InvalidArgument("retry policy needs at least one attempt");
}

RemoteOracle::~RemoteOracle() = default;

std::unique_ptr<httplib::Client> RemoteOracle::acquire() {
  {
    std::lock_guard lock(pool_mutex_);
    if (!pool_.empty()) {
      auto client = std::move(pool_.back());
      pool_.pop_back();
      return client;
    }
  }
  auto client = std::make_unique<httplib::Client>(base_url_);
  if (!client->is_valid()) throw InvalidArgument("invalid oracle URL '" + base_url_ + "'");
  const auto ms = options_.timeout.count();
  client->set_connection_timeout(ms / 1000, static_cast<time_t>((ms % 1000) * 1000));
  client->set_read_timeout(ms / 1000, static_cast<time_t>((ms % 1000) * 1000));
  client->set_write_timeout(ms / 1000, static_cast<time_t>((ms % 1000) * 1000));
  client->set_keep_alive(true);
  client->set_tcp_nodelay(true);
  return client;
}

void RemoteOracle::release(std::unique_ptr<httplib::Client> client) {
  std::lock_guard lock(pool_mutex_);
  pool_.push_back(std::move(client));
}

namespace {

[[noreturn]] void raise_domain_error(int status, const std::string& body) {
  json doc = json::parse(body, nullptr, false);
  const std::string code = doc.is_object() && doc.contains("error") ? doc["error"].get<std::string>() : "";
  const std::string message = doc.is_object() && doc.contains("message") ? doc["message"].get<std::string>() : body;
  if (status == 403) throw ModeNotAllowed(message);
  if (status == 422 && code == "k_too_large") throw KTooLarge(message);
  if (status == 422) throw BiasCapExceeded(message);
  if (status == 400 && code == "unknown_token") {
    throw UnknownToken(doc.contains("token") ? doc["token"].get<std::int64_t>() : -1);
  }
  if (status == 400) throw InvalidArgument(message);
  throw TransportError("unexpected HTTP status " + std::to_string(status) + ": " + message, status);
}

}  // namespace

std::string RemoteOracle::post(const std::string& body) {
  std::string last_error;
  int last_status = 0;
  for (int attempt = 0; attempt < options_.retry.max_attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options_.retry.backoff * attempt);
    auto client = acquire();
    attempts_.fetch_add(1);
    auto res = client->Post("/v1/next_token", body, kJson);
    if (!res) {
      last_error = httplib::to_string(res.error());
      last_status = 0;
      continue;  // drop the connection
    }
    last_status = res->status;
    if (res->status >= 500) {
      last_error = res->body;
      continue;
    }
    std::string payload = std::move(res->body);
    const int status = res->status;
    release(std::move(client));
    if (status != 200) raise_domain_error(status, payload);
    return payload;
  }
  throw TransportError("POST " + base_url_ + "/v1/next_token failed: " + last_error, last_status);
}

std::string RemoteOracle::get(const std::string& path) {
  auto client = acquire();
  auto res = client->Get(path);
  if (!res) throw TransportError("GET " + base_url_ + path + " failed: " + httplib::to_string(res.error()), 0);
  if (res->status != 200) throw TransportError("GET " + path + " returned " + std::to_string(res->status), res->status);
  std::string body = std::move(res->body);
  release(std::move(client));
  return body;
}

std::size_t RemoteOracle::vocab_size() {
  if (auto n = vocab_size_.load()) return n;
  const auto doc = json::parse(get("/v1/vocab"));
  const auto n = doc.at("size").get<std::size_t>();
  vocab_size_.store(n);
  return n;
}

namespace {

json request_body(std::span<const TokenId> prefix, const BiasMap& bias, const char* mode) {
  json bias_doc = json::object();
  for (const auto& [id, b] : bias.entries()) bias_doc[std::to_string(id)] = b;
  return {{"prompt", std::vector<TokenId>(prefix.begin(), prefix.end())},
          {"logit_bias", std::move(bias_doc)},
          {"mode", mode}};
}

json parse_response(const std::string& payload) {
  try {
    return json::parse(payload);
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed response: ") + e.what(), 200);
  }
}

}  // namespace

TokenId RemoteOracle::argmax(std::span<const TokenId> prefix, const BiasMap& bias) {
  return parse_response(post(request_body(prefix, bias, "argmax").dump())).at("token").get<TokenId>();
}

std::vector<TokenLogprob> RemoteOracle::top_logprobs(std::span<const TokenId> prefix, const BiasMap& bias,
                                                     std::size_t k) {
  auto body = request_body(prefix, bias, "top_logprobs");
  body["k"] = k;
  const auto doc = parse_response(post(body.dump()));
  std::vector<TokenLogprob> out;
  for (const auto& entry : doc.at("top")) {
    out.push_back({entry.at(0).get<TokenId>(), entry.at(1).get<double>()});
  }
  return out;
}

TokenId RemoteOracle::sample(std::span<const TokenId> prefix, const BiasMap& bias, std::uint64_t seed) {
  auto body = request_body(prefix, bias, "sample");
  body["seed"] = seed;
  return parse_response(post(body.dump())).at("token").get<TokenId>();
}

QueryCounts RemoteOracle::server_queries() {
  const auto doc = json::parse(get("/v1/stats"));
  QueryCounts c;
  c.argmax = doc.at("argmax").get<std::uint64_t>();
  c.top_logprobs = doc.at("top_logprobs").get<std::uint64_t>();
  c.sample = doc.at("sample").get<std::uint64_t>();
  return c;
}

}  // namespace lmprobe
