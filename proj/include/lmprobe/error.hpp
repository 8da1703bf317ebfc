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

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lmprobe {

/// Base class for domain errors. Transport failures are deliberately not
/// part of this hierarchy (see TransportError).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class UnknownToken : public Error {
 public:
  explicit UnknownToken(std::int64_t id)
      : Error("unknown token id " + std::to_string(id)), id_(id) {}
  std::int64_t id() const noexcept { return id_; }

 private:
  std::int64_t id_;
};

class InfiniteDivergence : public Error {
 public:
  InfiniteDivergence() : Error("KL divergence is infinite: p > 0 where q == 0") {}
};

class BiasCapExceeded : public Error {
 public:
  using Error::Error;
};

class KTooLarge : public Error {
 public:
  using Error::Error;
};

class ModeNotAllowed : public Error {
 public:
  using Error::Error;
};

class Saturated : public Error {
 public:
  explicit Saturated(std::uint32_t id)
      : Error("token " + std::to_string(id) + " never became argmax under the bias cap"), id_(id) {}
  std::uint32_t id() const noexcept { return id_; }

 private:
  std::uint32_t id_;
};

class DegenerateDelta : public Error {
 public:
  using Error::Error;
};

class EmptyCorpus : public Error {
 public:
  EmptyCorpus() : Error("corpus is empty") {}
};

class FormatError : public Error {
 public:
  using Error::Error;
};

/// Network-level failure talking to a remote oracle: connection refused,
/// timeout, or an unexpected HTTP status.
class TransportError : public std::runtime_error {
 public:
  TransportError(const std::string& what, int status)
      : std::runtime_error(what), status_(status) {}
  /// HTTP status, or 0 when no response was received.
  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace lmprobe
