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

#include "model.hpp"

namespace meshvit::checkpoint {

// Checkpoints are a flat JSON manifest (name -> shape, dtype, byte offset
// into the blob) next to a raw little-endian f64 blob. The manifest alone
// (shapes only, no blob) doubles as the golden architecture record for the
// presets.

std::string manifest_json(const model::VitConfig& cfg);

// Writes <path>.json and <path>.bin.
void save(const std::string& path_prefix, const model::VitParams& params,
          const model::VitConfig& cfg);

model::VitParams load(const std::string& path_prefix, const model::VitConfig& cfg);

}  // namespace meshvit::checkpoint
