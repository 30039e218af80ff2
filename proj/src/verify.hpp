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
#include <vector>

namespace meshvit::verify {

struct PropertyResult {
  std::string scope;
  std::string name;
  bool pass = false;
  std::string detail;
};

// Scopes: tensor | model | shard | mesh | all. Cases may run on up to
// `threads` workers; the result order is canonical regardless.
std::vector<PropertyResult> run(const std::string& scope, int64_t threads);

bool valid_scope(const std::string& scope);

}  // namespace meshvit::verify
