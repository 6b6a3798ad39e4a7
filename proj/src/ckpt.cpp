// Copyright 2026 PCST Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pcst/ckpt.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace pcst {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace {

constexpr char kMagic[4] = {'P', 'C', 'S', 'T'};

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

json shape_json(const TensorF& t) { return json(t.shape()); }

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json header;
  json tensors = json::object();
  uint64_t offset = 0;
  for (const auto& [name, entry] : ckpt.params) {
    tensors[name] = {{"dtype", "f32"},
                     {"shape", shape_json(entry.value)},
                     {"offset", offset},
                     {"group", group_name(entry.group)}};
    offset += static_cast<uint64_t>(entry.value.numel()) * 4;
  }
  json moments = json::object();
  for (const auto& [name, mv] : ckpt.moments) {
    if (!ckpt.params.has(name))
      throw IntegrityError("save_checkpoint: moment for unknown tensor " + name);
    moments[name] = {{"m_offset", offset},
                     {"v_offset", offset + static_cast<uint64_t>(mv.first.numel()) * 4},
                     {"shape", shape_json(mv.first)}};
    offset += static_cast<uint64_t>(mv.first.numel() + mv.second.numel()) * 4;
  }
  header["tensors"] = tensors;
  header["moments"] = moments;
  header["step"] = ckpt.step;
  header["rng"] = ckpt.rng_state;
  header["config"] = ckpt.config_echo;
  header["tiers"] = {{"frontend", ckpt.frontend_tier}, {"backend", ckpt.backend_tier}};
  header["payload_bytes"] = offset;
  const std::string hstr = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("save_checkpoint: cannot open " + tmp);
    f.write(kMagic, 4);
    write_u32(f, Checkpoint::kVersion);
    write_u64(f, hstr.size());
    f.write(hstr.data(), static_cast<std::streamsize>(hstr.size()));
    for (const auto& [name, entry] : ckpt.params) {
      f.write(reinterpret_cast<const char*>(entry.value.data()),
              static_cast<std::streamsize>(entry.value.numel() * 4));
    }
    for (const auto& [name, mv] : ckpt.moments) {
      f.write(reinterpret_cast<const char*>(mv.first.data()),
              static_cast<std::streamsize>(mv.first.numel() * 4));
      f.write(reinterpret_cast<const char*>(mv.second.data()),
              static_cast<std::streamsize>(mv.second.numel() * 4));
    }
    if (!f) throw ConfigError("save_checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw VersionError("load_checkpoint: bad magic in " + path);
  const uint32_t version = read_u32(f);
  if (version != Checkpoint::kVersion)
    throw VersionError("load_checkpoint: unsupported version " + std::to_string(version));
  const uint64_t hlen = read_u64(f);
  std::string hstr(hlen, '\0');
  f.read(hstr.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw IntegrityError("load_checkpoint: truncated header in " + path);
  json header;
  try {
    header = json::parse(hstr);
  } catch (const std::exception& e) {
    throw IntegrityError("load_checkpoint: corrupt header: " + std::string(e.what()));
  }
  const uint64_t payload_bytes = header.at("payload_bytes").get<uint64_t>();
  std::vector<char> payload(payload_bytes);
  f.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
  if (static_cast<uint64_t>(f.gcount()) != payload_bytes)
    throw IntegrityError("load_checkpoint: truncated payload in " + path);

  Checkpoint ckpt;
  ckpt.step = header.at("step").get<int64_t>();
  ckpt.rng_state = header.at("rng").get<std::string>();
  ckpt.config_echo = header.at("config").get<std::map<std::string, std::string>>();
  ckpt.frontend_tier = header.at("tiers").at("frontend").get<std::string>();
  ckpt.backend_tier = header.at("tiers").at("backend").get<std::string>();

  auto read_tensor = [&](const json& meta, uint64_t offset) {
    const auto shape = meta.get<std::vector<int64_t>>();
    int64_t numel = 1;
    for (int64_t e : shape) numel *= e;
    if (offset + static_cast<uint64_t>(numel) * 4 > payload_bytes)
      throw IntegrityError("load_checkpoint: tensor payload out of bounds");
    TensorF t(shape);
    std::memcpy(t.data(), payload.data() + offset, static_cast<size_t>(numel) * 4);
    return t;
  };

  for (const auto& [name, meta] : header.at("tensors").items()) {
    if (meta.at("dtype").get<std::string>() != "f32")
      throw VersionError("load_checkpoint: unsupported dtype for " + name);
    ckpt.params.add(name, group_from_name(meta.at("group").get<std::string>()),
                    read_tensor(meta.at("shape"), meta.at("offset").get<uint64_t>()));
  }
  for (const auto& [name, meta] : header.at("moments").items()) {
    TensorF m = read_tensor(meta.at("shape"), meta.at("m_offset").get<uint64_t>());
    TensorF v = read_tensor(meta.at("shape"), meta.at("v_offset").get<uint64_t>());
    ckpt.moments.emplace(name, std::make_pair(std::move(m), std::move(v)));
  }
  return ckpt;
}

void apply_checkpoint(const Checkpoint& ckpt, ParamStoreF& target, bool strict) {
  if (strict && ckpt.params.size() != target.size()) {
    throw IntegrityError("apply_checkpoint: tensor count mismatch, checkpoint has " +
                         std::to_string(ckpt.params.size()) + ", model has " +
                         std::to_string(target.size()));
  }
  for (const auto& [name, entry] : ckpt.params) {
    if (!target.has(name))
      throw IntegrityError("apply_checkpoint: model has no tensor named " + name);
    TensorF& dst = target.at(name);
    if (dst.shape() != entry.value.shape())
      throw IntegrityError("apply_checkpoint: shape mismatch for " + name + ": " +
                           dst.shape_str() + " vs " + entry.value.shape_str());
    dst = entry.value;
  }
}

Checkpoint average_checkpoints(const std::vector<std::string>& paths) {
  if (paths.size() < 2)
    throw UsageError("average_checkpoints: need at least two checkpoints");
  const Checkpoint first = load_checkpoint(paths[0]);
  std::map<std::string, std::vector<double>> acc;
  std::map<std::string, std::vector<int64_t>> shapes;
  for (const auto& [name, entry] : first.params) {
    acc[name].assign(static_cast<size_t>(entry.value.numel()), 0.0);
    shapes[name] = entry.value.shape();
  }

  int64_t max_step = first.step;
  for (const auto& path : paths) {
    const Checkpoint c = load_checkpoint(path);
    if (c.params.size() != acc.size())
      throw IntegrityError("average_checkpoints: tensor set differs in " + path);
    for (const auto& [name, entry] : c.params) {
      auto it = acc.find(name);
      if (it == acc.end())
        throw IntegrityError("average_checkpoints: unexpected tensor " + name + " in " + path);
      if (entry.value.shape() != shapes.at(name))
        throw IntegrityError("average_checkpoints: shape mismatch for " + name + " in " + path);
      for (int64_t i = 0; i < entry.value.numel(); ++i)
        it->second[static_cast<size_t>(i)] += static_cast<double>(entry.value.at(i));
    }
    max_step = std::max(max_step, c.step);
  }
  Checkpoint out;
  out.step = max_step;
  out.frontend_tier = first.frontend_tier;
  out.backend_tier = first.backend_tier;
  const double inv = 1.0 / static_cast<double>(paths.size());
  for (const auto& [name, entry] : first.params) {
    TensorF t(entry.value.shape());
    const auto& a = acc.at(name);
    for (int64_t i = 0; i < t.numel(); ++i)
      t.at(i) = static_cast<float>(a[static_cast<size_t>(i)] * inv);
    out.params.add(name, entry.group, std::move(t));
  }
  return out;
}

}  // namespace pcst
