/* Copyright 2026 The meshvit Authors
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
#pragma once

#include <string>

#include "runspec.hpp"

namespace meshvit::commands {

// Status values shared with the C API and the CLI exit codes:
// 0 success, 1 verification failure, 2 config error, 3 divergence.
struct CommandResult {
  int status = 0;
  std::string report;
};

CommandResult inspect(const runspec::RunSpec& rs);
CommandResult verify(const runspec::RunSpec& rs, const std::string& scope);
CommandResult simulate(const runspec::RunSpec& rs, const std::string& out_dir);
CommandResult train(const runspec::RunSpec& rs, const std::string& out_dir, bool ablate);
CommandResult schedule(const runspec::RunSpec& rs, const std::string& out_dir);

}  // namespace meshvit::commands
