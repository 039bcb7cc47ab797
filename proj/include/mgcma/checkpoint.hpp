#pragma once

#include <array>
#include <string>

#include "json.hpp"
#include "mgcma/data_io.hpp"
#include "mgcma/pipeline.hpp"

namespace mgcma {

// "MGCMAMDL", u32 version, u64 config length, config JSON, then per
// parameter in store order: u32 name length, name, u32 rank, u64 extents,
// f64 data. Integers and floats little-endian.
inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'G', 'C', 'M', 'A', 'M', 'D', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const Model& model) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  binary::put_u32(out, kCheckpointVersion);
  const std::string config = to_json(model.config()).dump();
  binary::put_u64(out, config.size());
  out += config;
  const ParameterStore& store = model.parameters();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name(i);
    const Tensor& t = store.at(i);
    binary::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    binary::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t extent : t.shape()) binary::put_u64(out, extent);
    for (double v : t.data()) binary::put_f64(out, v);
  }
  return out;
}

inline Model decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint") {
  binary::Reader in(bytes, what);
  const std::string magic = in.take(kCheckpointMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin())) throw FormatError(what + ": bad magic");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  const std::uint64_t config_len = in.u64();
  in.need(config_len);
  PipelineConfig config;
  try {
    config = pipeline_config_from_json(nlohmann::json::parse(in.take(config_len)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": config is not valid JSON: " + e.what());
  }

  Model model(config, 0);
  ParameterStore& store = model.parameters();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string name = in.take(in.u32());
    if (name != store.name(i)) throw FormatError(what + ": expected parameter " + store.name(i) + ", found " + name);
    const std::uint32_t rank = in.u32();
    Shape shape(rank);
    for (auto& extent : shape) extent = in.u64();
    Tensor& t = store.at(i);
    if (shape != t.shape()) throw FormatError(what + ": shape mismatch for " + name);
    in.need(t.size() * 8);
    for (double& v : t.data()) v = in.f64();
  }
  if (!in.at_end()) throw CorruptionError(what + ": unexpected trailing data");
  return model;
}

inline void save_checkpoint(const Model& model, const fs::path& path) {
  binary::write_file(path, encode_checkpoint(model));
}

inline Model load_checkpoint(const fs::path& path) { return decode_checkpoint(binary::read_file(path), path.string()); }

}  // namespace mgcma
