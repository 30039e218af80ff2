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
#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace meshvit::checkpoint {

using nlohmann::json;

namespace {

json manifest_object(const model::VitConfig& cfg) {
  json tensors = json::array();
  int64_t offset = 0;
  for (const model::ParamSpec& spec : model::param_schema(cfg)) {
    json t;
    t["name"] = spec.name;
    t["shape"] = spec.shape;
    t["dtype"] = "f64";
    t["offset"] = offset;
    tensors.push_back(t);
    offset += spec.size() * 8;
  }
  json m;
  m["format"] = "meshvit-checkpoint-v1";
  m["byte_order"] = "little";
  m["total_bytes"] = offset;
  m["tensors"] = tensors;
  return m;
}

void write_f64_le(std::ofstream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  if constexpr (std::endian::native == std::endian::big) {
    uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r = (r << 8) | ((bits >> (8 * i)) & 0xFF);
    bits = r;
  }
  char buf[8];
  std::memcpy(buf, &bits, 8);
  out.write(buf, 8);
}

double read_f64_le(std::ifstream& in) {
  char buf[8];
  in.read(buf, 8);
  require(in.good(), ErrorKind::state, "checkpoint blob truncated");
  uint64_t bits;
  std::memcpy(&bits, buf, 8);
  if constexpr (std::endian::native == std::endian::big) {
    uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r = (r << 8) | ((bits >> (8 * i)) & 0xFF);
    bits = r;
  }
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

std::string manifest_json(const model::VitConfig& cfg) {
  return manifest_object(cfg).dump(2) + "\n";
}

void save(const std::string& path_prefix, const model::VitParams& params,
          const model::VitConfig& cfg) {
  std::vector<model::ParamSpec> schema = model::param_schema(cfg);
  require(schema.size() == params.names.size(), ErrorKind::state,
          "parameters do not match the config schema");
  {
    std::ofstream mf(path_prefix + ".json", std::ios::binary);
    require(mf.good(), ErrorKind::config, "cannot write manifest: " + path_prefix);
    mf << manifest_json(cfg);
  }
  std::ofstream bf(path_prefix + ".bin", std::ios::binary);
  require(bf.good(), ErrorKind::config, "cannot write blob: " + path_prefix);
  for (size_t i = 0; i < schema.size(); ++i) {
    require(schema[i].name == params.names[i] &&
                schema[i].shape == params.tensors[i].shape,
            ErrorKind::state, "parameter order diverged from the schema");
    for (double v : params.tensors[i].data) write_f64_le(bf, v);
  }
}

model::VitParams load(const std::string& path_prefix, const model::VitConfig& cfg) {
  std::ifstream mf(path_prefix + ".json", std::ios::binary);
  require(mf.good(), ErrorKind::config, "cannot read manifest: " + path_prefix);
  json m = json::parse(mf, nullptr, /*allow_exceptions=*/false);
  require(!m.is_discarded(), ErrorKind::config, "manifest is not valid JSON");
  require(m.value("format", "") == "meshvit-checkpoint-v1", ErrorKind::config,
          "unknown checkpoint format");

  json expect = manifest_object(cfg);
  require(m["tensors"] == expect["tensors"], ErrorKind::config,
          "manifest does not match the config schema");

  std::ifstream bf(path_prefix + ".bin", std::ios::binary);
  require(bf.good(), ErrorKind::config, "cannot read blob: " + path_prefix);
  model::VitParams params;
  for (const model::ParamSpec& spec : model::param_schema(cfg)) {
    Tensor t = Tensor::zeros(spec.shape);
    for (double& v : t.data) v = read_f64_le(bf);
    params.names.push_back(spec.name);
    params.tensors.push_back(std::move(t));
  }
  return params;
}

}  // namespace meshvit::checkpoint
