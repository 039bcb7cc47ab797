#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mgcma/error.hpp"
#include "mgcma/random.hpp"
#include "mgcma/tensor.hpp"

namespace mgcma {

namespace fs = std::filesystem;

inline constexpr std::size_t kNumSessions = 5;

enum class Modality { speech, text };

inline const char* modality_name(Modality m) { return m == Modality::speech ? "speech" : "text"; }

struct FeatureSequence {
  std::string utterance_id;
  Modality modality = Modality::speech;
  Tensor tokens;  // L x D
  int session = 1;

  std::size_t length() const { return tokens.rows(); }
  std::size_t dim() const { return tokens.cols(); }
};

struct LabeledPair {
  FeatureSequence speech;
  FeatureSequence text;
  std::size_t label = 0;
};

/// Non-owning view of N pairs forming one contrastive batch.
class PairBatch {
 public:
  PairBatch() = default;

  static PairBatch of(const std::vector<LabeledPair>& pairs) {
    PairBatch batch;
    for (const auto& p : pairs) batch.add(p);
    return batch;
  }

  void add(const LabeledPair& pair) {
    if (pair.speech.utterance_id != pair.text.utterance_id || pair.speech.session != pair.text.session) {
      throw ContractError("pair members disagree on utterance id or session: " + pair.speech.utterance_id);
    }
    pairs_.push_back(&pair);
  }

  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const LabeledPair& operator[](std::size_t i) const { return *pairs_[i]; }

 private:
  std::vector<const LabeledPair*> pairs_;
};

// ---------------------------------------------------------------------------
// Feature files: "MGCF", u32 version, u32 L, u32 D, then L*D f32, all LE.

inline constexpr std::array<char, 4> kFeatureMagic{'M', 'G', 'C', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

namespace binary {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

/// Bounds-checked little-endian cursor over a byte buffer.
class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  void need(std::size_t n) const {
    if (remaining() < n) throw CorruptionError(what_ + ": truncated at byte " + std::to_string(pos_));
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace binary

inline std::string encode_feature_file(const Tensor& tokens) {
  std::string out(kFeatureMagic.begin(), kFeatureMagic.end());
  binary::put_u32(out, kFeatureVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(tokens.rows()));
  binary::put_u32(out, static_cast<std::uint32_t>(tokens.cols()));
  for (double v : tokens.data()) binary::put_f32(out, static_cast<float>(v));
  return out;
}

/// Parses a feature file image. Identity fields of the result are left
/// empty; the manifest supplies them.
inline FeatureSequence decode_feature_file(const std::string& bytes, const std::string& what = "feature file") {
  binary::Reader in(bytes, what);
  if (in.remaining() < kFeatureMagic.size()) throw CorruptionError(what + ": truncated header");
  const std::string magic = in.take(kFeatureMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kFeatureMagic.begin())) throw FormatError(what + ": bad magic");
  const std::uint32_t version = in.u32();
  if (version != kFeatureVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  const std::uint32_t length = in.u32();
  const std::uint32_t dim = in.u32();
  if (length == 0 || dim == 0) throw FormatError(what + ": empty sequence");
  const std::uint64_t count = static_cast<std::uint64_t>(length) * dim;
  if (in.remaining() / 4 < count) throw CorruptionError(what + ": truncated payload");
  if (in.remaining() != count * 4) throw CorruptionError(what + ": trailing bytes after payload");
  FeatureSequence seq;
  seq.tokens = Tensor::zeros(length, dim);
  for (double& v : seq.tokens.data()) v = static_cast<double>(in.f32());
  if (!seq.tokens.all_finite()) throw CorruptionError(what + ": non-finite feature value");
  return seq;
}

inline FeatureSequence read_feature_file(const fs::path& path) {
  return decode_feature_file(binary::read_file(path), path.string());
}

inline void write_feature_file(const FeatureSequence& seq, const fs::path& path) {
  binary::write_file(path, encode_feature_file(seq.tokens));
}

// ---------------------------------------------------------------------------
// Manifest: JSON Lines, one record per utterance.

struct ManifestRecord {
  std::string utterance_id;
  std::size_t label = 0;
  int session = 1;
  std::string speech_path;  // relative to the manifest directory
  std::string text_path;
  std::size_t length_speech = 0;
  std::size_t length_text = 0;
};

struct DatasetManifest {
  fs::path root;  // directory holding manifest.jsonl
  std::size_t dim = 0;
  std::vector<ManifestRecord> records;
};

inline constexpr const char* kManifestName = "manifest.jsonl";

inline fs::path manifest_file(const fs::path& dir_or_file) {
  return fs::is_directory(dir_or_file) ? dir_or_file / kManifestName : dir_or_file;
}

inline std::string manifest_line(const ManifestRecord& r, std::size_t dim) {
  nlohmann::ordered_json j;
  j["utterance_id"] = r.utterance_id;
  j["label"] = r.label;
  j["session"] = r.session;
  j["speech_path"] = r.speech_path;
  j["text_path"] = r.text_path;
  j["L_s"] = r.length_speech;
  j["L_t"] = r.length_text;
  j["dim"] = dim;
  return j.dump();
}

inline void write_manifest(const DatasetManifest& manifest) {
  std::string text;
  for (const auto& r : manifest.records) text += manifest_line(r, manifest.dim) + "\n";
  binary::write_file(manifest.root / kManifestName, text);
}

inline DatasetManifest read_manifest(const fs::path& dir_or_file) {
  const fs::path file = manifest_file(dir_or_file);
  std::istringstream in(binary::read_file(file));
  DatasetManifest manifest;
  manifest.root = file.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = file.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.utterance_id = j.at("utterance_id").get<std::string>();
      r.label = j.at("label").get<std::size_t>();
      r.session = j.at("session").get<int>();
      r.speech_path = j.at("speech_path").get<std::string>();
      r.text_path = j.at("text_path").get<std::string>();
      r.length_speech = j.at("L_s").get<std::size_t>();
      r.length_text = j.at("L_t").get<std::size_t>();
      const auto dim = j.at("dim").get<std::size_t>();
      if (manifest.records.empty()) manifest.dim = dim;
      if (dim != manifest.dim) throw FormatError(where + ": dim disagrees with earlier records");
      if (r.session < 1 || r.session > static_cast<int>(kNumSessions))
        throw FormatError(where + ": session out of range 1-5");
      manifest.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  if (manifest.records.empty()) throw FormatError(file.string() + ": no records");
  return manifest;
}

/// Reads every feature file and checks headers against the manifest.
inline std::vector<LabeledPair> load_dataset(const DatasetManifest& manifest) {
  std::vector<LabeledPair> pairs;
  pairs.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    LabeledPair p;
    p.label = r.label;
    p.speech = read_feature_file(manifest.root / r.speech_path);
    p.text = read_feature_file(manifest.root / r.text_path);
    if (p.speech.length() != r.length_speech || p.text.length() != r.length_text)
      throw FormatError(r.utterance_id + ": sequence length disagrees with manifest");
    if (p.speech.dim() != manifest.dim || p.text.dim() != manifest.dim)
      throw FormatError(r.utterance_id + ": feature dim disagrees with manifest");
    p.speech.utterance_id = p.text.utterance_id = r.utterance_id;
    p.speech.session = p.text.session = r.session;
    p.speech.modality = Modality::speech;
    p.text.modality = Modality::text;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
  std::size_t n_pairs = 200;
  std::size_t n_classes = 4;
  std::size_t dim = 32;
  std::size_t len_speech = 8;
  std::size_t len_text = 6;
  double separation = 4.0;
  std::uint64_t seed = 0;
  double session_shift = 0.0;  // scale of a per-session additive bias

  void validate() const {
    if (n_classes == 0 || dim == 0 || len_speech == 0 || len_text == 0)
      throw ConfigError("synthetic: classes, dim and lengths must be positive");
    if (n_pairs < n_classes) throw ConfigError("synthetic: n_pairs must be >= n_classes");
    if (!(separation >= 0.0) || !std::isfinite(separation)) throw ConfigError("synthetic: separation must be >= 0");
    if (!(session_shift >= 0.0)) throw ConfigError("synthetic: session_shift must be >= 0");
  }
};

namespace detail {

inline std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double ss = 0.0;
  for (double& x : v) {
    x = rng.normal();
    ss += x * x;
  }
  const double norm = std::sqrt(ss);
  for (double& x : v) x /= norm;
  return v;
}

inline Tensor random_map(Rng& rng, std::size_t dim) {
  Tensor a = Tensor::zeros(dim, dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& x : a.data()) x = rng.normal() * s;
  return a;
}

}  // namespace detail

/// Draws the dataset in memory. Token values are rounded to f32 so the
/// result equals what load_dataset returns after writing.
///
/// Per pair i: label = i mod n_classes, session = i mod 5 + 1. Each class
/// has an anchor separation * u_c (u_c a seeded unit vector); every token is
/// anchor * A_modality + N(0, I), with A_speech and A_text fixed seeded maps.
inline std::vector<LabeledPair> generate_synthetic_pairs(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng map_rng(derive_seed(cfg.seed, 1));
  const Tensor map_speech = detail::random_map(map_rng, cfg.dim);
  const Tensor map_text = detail::random_map(map_rng, cfg.dim);

  std::vector<std::vector<double>> anchors;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    Rng rng(derive_seed(cfg.seed, 100 + c));
    auto u = detail::random_unit(rng, cfg.dim);
    for (double& x : u) x *= cfg.separation;
    anchors.push_back(std::move(u));
  }
  std::vector<std::vector<double>> session_bias;
  for (std::size_t s = 0; s < kNumSessions; ++s) {
    Rng rng(derive_seed(cfg.seed, 200 + s));
    auto u = detail::random_unit(rng, cfg.dim);
    for (double& x : u) x *= cfg.session_shift;
    session_bias.push_back(std::move(u));
  }

  auto project = [&](const std::vector<double>& v, const Tensor& map) {
    std::vector<double> out(cfg.dim, 0.0);
    for (std::size_t i = 0; i < cfg.dim; ++i)
      for (std::size_t j = 0; j < cfg.dim; ++j) out[j] += v[i] * map(i, j);
    return out;
  };

  std::vector<LabeledPair> pairs;
  pairs.reserve(cfg.n_pairs);
  for (std::size_t i = 0; i < cfg.n_pairs; ++i) {
    LabeledPair p;
    p.label = i % cfg.n_classes;
    const int session = static_cast<int>(i % kNumSessions) + 1;
    char id[32];
    std::snprintf(id, sizeof id, "utt%05zu", i);
    Rng noise(derive_seed(cfg.seed, 1000 + i));
    auto make = [&](Modality m, const Tensor& map, std::size_t length) {
      const auto center = project(anchors[p.label], map);
      const auto& bias = session_bias[static_cast<std::size_t>(session - 1)];
      FeatureSequence seq;
      seq.utterance_id = id;
      seq.modality = m;
      seq.session = session;
      seq.tokens = Tensor::zeros(length, cfg.dim);
      for (std::size_t l = 0; l < length; ++l)
        for (std::size_t j = 0; j < cfg.dim; ++j)
          seq.tokens(l, j) = static_cast<double>(static_cast<float>(center[j] + bias[j] + noise.normal()));
      return seq;
    };
    p.speech = make(Modality::speech, map_speech, cfg.len_speech);
    p.text = make(Modality::text, map_text, cfg.len_text);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

/// Writes pairs as feature files under out_dir/features plus the manifest.
inline DatasetManifest write_dataset(const std::vector<LabeledPair>& pairs, const fs::path& out_dir) {
  if (pairs.empty()) throw EmptyInputError("write_dataset: no pairs");
  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.dim = pairs.front().speech.dim();
  for (const auto& p : pairs) {
    ManifestRecord r;
    r.utterance_id = p.speech.utterance_id;
    r.label = p.label;
    r.session = p.speech.session;
    r.speech_path = "features/" + r.utterance_id + ".speech.mgcf";
    r.text_path = "features/" + r.utterance_id + ".text.mgcf";
    r.length_speech = p.speech.length();
    r.length_text = p.text.length();
    write_feature_file(p.speech, out_dir / r.speech_path);
    write_feature_file(p.text, out_dir / r.text_path);
    manifest.records.push_back(std::move(r));
  }
  write_manifest(manifest);
  return manifest;
}

inline DatasetManifest generate_synthetic(const SyntheticConfig& cfg, const fs::path& out_dir) {
  return write_dataset(generate_synthetic_pairs(cfg), out_dir);
}

// ---------------------------------------------------------------------------
// Leave-one-session-out folds

struct Fold {
  int test_session = 1;
  std::vector<std::size_t> train;  // indices into the dataset, ascending
  std::vector<std::size_t> test;
};

inline std::array<Fold, kNumSessions> split_folds(std::span<const int> sessions) {
  std::array<Fold, kNumSessions> folds;
  std::array<bool, kNumSessions> seen{};
  for (int s : sessions) {
    if (s < 1 || s > static_cast<int>(kNumSessions)) throw FormatError("split_folds: session out of range");
    seen[static_cast<std::size_t>(s - 1)] = true;
  }
  for (std::size_t f = 0; f < kNumSessions; ++f) {
    if (!seen[f]) throw FormatError("split_folds: session " + std::to_string(f + 1) + " missing");
    folds[f].test_session = static_cast<int>(f + 1);
    for (std::size_t i = 0; i < sessions.size(); ++i)
      (sessions[i] == folds[f].test_session ? folds[f].test : folds[f].train).push_back(i);
  }
  return folds;
}

inline std::array<Fold, kNumSessions> split_folds(const DatasetManifest& manifest) {
  std::vector<int> sessions;
  for (const auto& r : manifest.records) sessions.push_back(r.session);
  return split_folds(sessions);
}

inline std::array<Fold, kNumSessions> split_folds(const std::vector<LabeledPair>& pairs) {
  std::vector<int> sessions;
  for (const auto& p : pairs) sessions.push_back(p.speech.session);
  return split_folds(sessions);
}

}  // namespace mgcma
