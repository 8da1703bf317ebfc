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

#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace lmprobe {

inline constexpr std::string_view kVersion = "0.1.0";

class OracleServer;

struct CliHooks {
  /// Called by `serve` once the server is listening; returns when the server
  /// should shut down. Defaults to waiting for SIGINT/SIGTERM.
  std::function<void(OracleServer&)> serve_wait;
};

/// Runs one command line (without the program name). Returns 0 on success,
/// 1 on a domain or I/O error, 2 on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const CliHooks& hooks = {});

}  // namespace lmprobe
