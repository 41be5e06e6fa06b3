/*
 * longiseg: longitudinal MS lesion segmentation toolkit
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/// Command-line front end. Subcommands: generate | train | evaluate |
/// segment | plot. Every run writes exactly one manifest.json into --out and
/// refuses to reuse a directory that already has one unless --force is given.
///
/// Exit codes: 0 success, 1 runtime failure, 2 config/validation failure.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace longiseg::cli {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Invalid configuration/usage; mapped to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parses and dispatches; returns the process exit code.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace longiseg::cli
