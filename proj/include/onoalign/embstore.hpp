// Embedding packs: records of frozen-encoder vectors plus metadata, the
// on-disk pack format, validation, illustrator-wise splitting and the
// synthetic dataset generator.
//
// On-disk layout for a pack with stem S:
//   S.meta.jsonl  one JSON object per record with keys
//                 id, modality, class_id, class_name, illustrator_id, pair_id, split
//   S.vec         "OEMBPK01" | u32 record_count | u32 dim | count*dim f32 | u64 FNV-1a
//                 (all little-endian; checksum covers the f32 payload bytes)
//   S.info.json   optional sidecar {class_count, provenance}
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "onoalign/binary_io.hpp"
#include "onoalign/rng.hpp"
#include "onoalign/tensor.hpp"

namespace onoalign {

enum class Modality { image, audio };
enum class Split { train, val, test };

inline constexpr std::array<Split, 3> kAllSplits{Split::train, Split::val, Split::test};

inline std::string to_string(Modality m) { return m == Modality::image ? "image" : "audio"; }

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Modality parse_modality(const std::string& text) {
  if (text == "image") return Modality::image;
  if (text == "audio") return Modality::audio;
  throw std::invalid_argument("unknown modality '" + text + "'");
}

inline Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + text + "'");
}

enum class PackErrorKind {
  io,
  bad_magic,
  dimension_mismatch,
  payload_size,
  checksum,
  metadata,
  invariant,
  manifest,
};

class PackError : public FormatError {
 public:
  PackError(PackErrorKind kind, const std::string& what) : FormatError(what), kind_(kind) {}
  PackErrorKind kind() const { return kind_; }

 private:
  PackErrorKind kind_;
};

struct EmbeddingRecord {
  std::string id;
  Modality modality = Modality::image;
  int class_id = 0;
  std::string class_name;
  std::optional<std::string> illustrator_id;
  std::string pair_id;
  Split split = Split::train;
  std::vector<float> vector;  // stored precision; compute converts to double

  bool operator==(const EmbeddingRecord&) const = default;
};

struct EmbeddingPack {
  std::size_t dim = 0;
  std::size_t class_count = 0;
  std::vector<EmbeddingRecord> records;
  std::string provenance;

  bool operator==(const EmbeddingPack&) const = default;

  std::size_t size() const { return records.size(); }

  std::vector<std::size_t> indices(std::optional<Modality> modality = std::nullopt,
                                   std::optional<Split> split = std::nullopt) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (modality && records[i].modality != *modality) continue;
      if (split && records[i].split != *split) continue;
      out.push_back(i);
    }
    return out;
  }

  // class_id -> class_name for the classes present.
  std::map<int, std::string> class_names() const {
    std::map<int, std::string> names;
    for (const auto& r : records) names.emplace(r.class_id, r.class_name);
    return names;
  }
};

// Vectors of the selected records as a double-precision batch.
inline Matrix pack_matrix(const EmbeddingPack& pack, std::span<const std::size_t> indices) {
  Matrix m(indices.size(), pack.dim);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& v = pack.records[indices[i]].vector;
    auto row = m.row(i);
    for (std::size_t k = 0; k < pack.dim; ++k) row[k] = static_cast<double>(v[k]);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

[[noreturn]] inline void invariant_failure(const std::string& what) {
  throw PackError(PackErrorKind::invariant, what);
}

inline void check_pairing(const std::vector<const EmbeddingRecord*>& images,
                          const std::vector<const EmbeddingRecord*>& audio) {
  std::unordered_map<std::string, const EmbeddingRecord*> image_by_pair;
  for (const auto* r : images) {
    if (!image_by_pair.emplace(r->pair_id, r).second) {
      invariant_failure("record '" + r->id + "': pair_id '" + r->pair_id +
                        "' used by more than one image record");
    }
  }
  std::unordered_map<std::string, const EmbeddingRecord*> audio_by_pair;
  for (const auto* r : audio) {
    if (!audio_by_pair.emplace(r->pair_id, r).second) {
      invariant_failure("record '" + r->id + "': pair_id '" + r->pair_id +
                        "' used by more than one audio record");
    }
  }
  if (images.empty() || audio.empty()) return;
  for (const auto& [pair, img] : image_by_pair) {
    auto it = audio_by_pair.find(pair);
    if (it == audio_by_pair.end()) {
      invariant_failure("record '" + img->id + "': pair_id '" + pair + "' has no audio record");
    }
    const auto* aud = it->second;
    if (aud->class_id != img->class_id) {
      invariant_failure("record '" + aud->id + "': class differs from paired image '" + img->id +
                        "'");
    }
    if (aud->split != img->split) {
      invariant_failure("record '" + aud->id + "': split differs from paired image '" + img->id +
                        "'");
    }
  }
  for (const auto& [pair, aud] : audio_by_pair) {
    if (!image_by_pair.contains(pair)) {
      invariant_failure("record '" + aud->id + "': pair_id '" + pair + "' has no image record");
    }
  }
}

}  // namespace detail

// Checks every pack invariant; throws PackError naming the offending record.
inline void validate_pack(const EmbeddingPack& pack) {
  if (pack.dim == 0) detail::invariant_failure("pack dim must be positive");
  if (pack.class_count == 0) detail::invariant_failure("pack class_count must be positive");

  std::set<std::string> ids;
  std::unordered_map<int, std::string> name_of;
  std::unordered_map<std::string, int> id_of;
  std::unordered_map<std::string, Split> illustrator_split;
  std::vector<const EmbeddingRecord*> images;
  std::vector<const EmbeddingRecord*> audio;

  for (const auto& r : pack.records) {
    if (r.id.empty()) detail::invariant_failure("record with empty id");
    if (!ids.insert(r.id).second) detail::invariant_failure("duplicate record id '" + r.id + "'");
    if (r.vector.size() != pack.dim) {
      detail::invariant_failure("record '" + r.id + "': vector length " +
                                std::to_string(r.vector.size()) + " != pack dim " +
                                std::to_string(pack.dim));
    }
    for (float v : r.vector) {
      if (!std::isfinite(v)) detail::invariant_failure("record '" + r.id + "': non-finite component");
    }
    if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= pack.class_count) {
      detail::invariant_failure("record '" + r.id + "': class_id " + std::to_string(r.class_id) +
                                " outside [0, " + std::to_string(pack.class_count) + ")");
    }
    if (auto [it, fresh] = name_of.emplace(r.class_id, r.class_name); !fresh && it->second != r.class_name) {
      detail::invariant_failure("record '" + r.id + "': class_id " + std::to_string(r.class_id) +
                                " named both '" + it->second + "' and '" + r.class_name + "'");
    }
    if (auto [it, fresh] = id_of.emplace(r.class_name, r.class_id); !fresh && it->second != r.class_id) {
      detail::invariant_failure("record '" + r.id + "': class_name '" + r.class_name +
                                "' mapped to two class ids");
    }
    if (r.pair_id.empty()) detail::invariant_failure("record '" + r.id + "': empty pair_id");
    if (r.modality == Modality::audio) {
      if (r.illustrator_id) detail::invariant_failure("record '" + r.id + "': audio record has an illustrator");
      audio.push_back(&r);
    } else {
      images.push_back(&r);
      if (r.illustrator_id) {
        auto [it, fresh] = illustrator_split.emplace(*r.illustrator_id, r.split);
        if (!fresh && it->second != r.split) {
          detail::invariant_failure("record '" + r.id + "': illustrator '" + *r.illustrator_id +
                                    "' appears in splits " + to_string(it->second) + " and " +
                                    to_string(r.split));
        }
      }
    }
  }
  detail::check_pairing(images, audio);
}

// Cross-pack checks for a separately stored image pack and audio pack.
inline void validate_pair_packs(const EmbeddingPack& images, const EmbeddingPack& audio) {
  validate_pack(images);
  validate_pack(audio);
  if (images.dim != audio.dim) {
    detail::invariant_failure("image dim " + std::to_string(images.dim) + " != audio dim " +
                              std::to_string(audio.dim));
  }
  if (images.class_count != audio.class_count) {
    detail::invariant_failure("image and audio packs disagree on class_count");
  }
  std::vector<const EmbeddingRecord*> img;
  std::vector<const EmbeddingRecord*> aud;
  for (const auto& r : images.records) {
    if (r.modality != Modality::image) detail::invariant_failure("record '" + r.id + "': audio record in image pack");
    img.push_back(&r);
  }
  for (const auto& r : audio.records) {
    if (r.modality != Modality::audio) detail::invariant_failure("record '" + r.id + "': image record in audio pack");
    aud.push_back(&r);
  }
  const auto img_names = images.class_names();
  for (const auto& [id, name] : audio.class_names()) {
    auto it = img_names.find(id);
    if (it != img_names.end() && it->second != name) {
      detail::invariant_failure("class " + std::to_string(id) + " is '" + it->second +
                                "' in the image pack but '" + name + "' in the audio pack");
    }
  }
  detail::check_pairing(img, aud);
}

// ---------------------------------------------------------------------------
// Pack files

struct PackPaths {
  std::filesystem::path meta;
  std::filesystem::path vec;
  std::filesystem::path info;

  explicit PackPaths(const std::filesystem::path& stem)
      : meta(stem.string() + ".meta.jsonl"),
        vec(stem.string() + ".vec"),
        info(stem.string() + ".info.json") {}
};

inline constexpr std::string_view kPackMagic = "OEMBPK01";

inline nlohmann::ordered_json record_meta_json(const EmbeddingRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["modality"] = to_string(r.modality);
  j["class_id"] = r.class_id;
  j["class_name"] = r.class_name;
  j["illustrator_id"] = r.illustrator_id ? nlohmann::ordered_json(*r.illustrator_id) : nullptr;
  j["pair_id"] = r.pair_id;
  j["split"] = to_string(r.split);
  return j;
}

inline std::vector<std::byte> encode_vec_file(const EmbeddingPack& pack) {
  std::vector<std::byte> out;
  out.reserve(kPackMagic.size() + 16 + pack.records.size() * pack.dim * 4);
  for (char c : kPackMagic) out.push_back(static_cast<std::byte>(c));
  append_le(out, static_cast<std::uint32_t>(pack.records.size()));
  append_le(out, static_cast<std::uint32_t>(pack.dim));
  const std::size_t payload_begin = out.size();
  for (const auto& r : pack.records) {
    for (float v : r.vector) append_le(out, v);
  }
  const auto payload = std::span<const std::byte>(out).subspan(payload_begin);
  append_le(out, fnv1a64(payload));
  return out;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw PackError(PackErrorKind::io, "cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw PackError(PackErrorKind::io, "failed writing '" + path.string() + "'");
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::as_bytes(std::span(text.data(), text.size())));
}

inline std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PackError(PackErrorKind::io, "cannot open '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  std::memcpy(bytes.data(), raw.data(), raw.size());
  return bytes;
}

inline void save_pack(const EmbeddingPack& pack, const std::filesystem::path& stem) {
  validate_pack(pack);
  const PackPaths paths(stem);
  std::string meta;
  for (const auto& r : pack.records) {
    meta += record_meta_json(r).dump();
    meta += '\n';
  }
  write_text_file(paths.meta, meta);
  write_file(paths.vec, encode_vec_file(pack));
  nlohmann::ordered_json info;
  info["class_count"] = pack.class_count;
  info["provenance"] = pack.provenance;
  write_text_file(paths.info, info.dump(2) + "\n");
}

inline EmbeddingRecord parse_meta_line(const std::string& line, std::size_t line_no) {
  try {
    const auto j = nlohmann::json::parse(line);
    static const std::set<std::string> expected{"id",       "modality", "class_id", "class_name",
                                                "illustrator_id", "pair_id", "split"};
    std::set<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.insert(k);
    if (keys != expected) throw PackError(PackErrorKind::metadata, "unexpected key set");
    EmbeddingRecord r;
    r.id = j.at("id").get<std::string>();
    r.modality = parse_modality(j.at("modality").get<std::string>());
    r.class_id = j.at("class_id").get<int>();
    r.class_name = j.at("class_name").get<std::string>();
    if (!j.at("illustrator_id").is_null()) r.illustrator_id = j.at("illustrator_id").get<std::string>();
    r.pair_id = j.at("pair_id").get<std::string>();
    r.split = parse_split(j.at("split").get<std::string>());
    return r;
  } catch (const std::exception& e) {
    throw PackError(PackErrorKind::metadata,
                    "metadata line " + std::to_string(line_no) + ": " + e.what());
  }
}

inline EmbeddingPack load_pack(const std::filesystem::path& stem) {
  const PackPaths paths(stem);
  const auto bytes = read_file(paths.vec);
  const std::size_t header = kPackMagic.size() + 8;
  if (bytes.size() < header ||
      std::memcmp(bytes.data(), kPackMagic.data(), kPackMagic.size()) != 0) {
    throw PackError(PackErrorKind::bad_magic, "'" + paths.vec.string() + "': bad magic or version");
  }
  const auto count = read_le<std::uint32_t>(bytes, kPackMagic.size());
  const auto dim = read_le<std::uint32_t>(bytes, kPackMagic.size() + 4);
  const std::size_t expected_payload = std::size_t{count} * dim * 4;
  if (bytes.size() < header + 8) {
    throw PackError(PackErrorKind::payload_size, "'" + paths.vec.string() + "': truncated file");
  }
  const std::size_t actual_payload = bytes.size() - header - 8;
  if (actual_payload != expected_payload) {
    if (count > 0 && actual_payload % (std::size_t{count} * 4) == 0) {
      throw PackError(PackErrorKind::dimension_mismatch,
                      "'" + paths.vec.string() + "': header declares dim " + std::to_string(dim) +
                          " but payload holds dim " +
                          std::to_string(actual_payload / (std::size_t{count} * 4)));
    }
    throw PackError(PackErrorKind::payload_size,
                    "'" + paths.vec.string() + "': payload has " + std::to_string(actual_payload) +
                        " bytes, header requires " + std::to_string(expected_payload));
  }
  const auto payload = std::span<const std::byte>(bytes).subspan(header, expected_payload);
  const auto stored = read_le<std::uint64_t>(bytes, header + expected_payload);
  if (fnv1a64(payload) != stored) {
    throw PackError(PackErrorKind::checksum, "'" + paths.vec.string() + "': checksum mismatch");
  }

  std::ifstream meta(paths.meta);
  if (!meta) throw PackError(PackErrorKind::io, "cannot open '" + paths.meta.string() + "'");
  EmbeddingPack pack;
  pack.dim = dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(meta, line)) {
    ++line_no;
    if (line.empty()) continue;
    pack.records.push_back(parse_meta_line(line, line_no));
  }
  if (pack.records.size() != count) {
    throw PackError(PackErrorKind::metadata,
                    "'" + paths.meta.string() + "' has " + std::to_string(pack.records.size()) +
                        " records, vector file has " + std::to_string(count));
  }
  for (std::size_t i = 0; i < count; ++i) {
    auto& v = pack.records[i].vector;
    v.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) v[k] = read_le<float>(payload, (i * dim + k) * 4);
  }

  int max_class = -1;
  for (const auto& r : pack.records) max_class = std::max(max_class, r.class_id);
  pack.class_count = static_cast<std::size_t>(std::max(max_class + 1, 1));
  if (std::filesystem::exists(paths.info)) {
    try {
      std::ifstream f(paths.info);
      const auto info = nlohmann::json::parse(f);
      pack.class_count = info.at("class_count").get<std::size_t>();
      pack.provenance = info.value("provenance", std::string{});
    } catch (const nlohmann::json::exception& e) {
      throw PackError(PackErrorKind::metadata, "'" + paths.info.string() + "': " + e.what());
    }
  }
  validate_pack(pack);
  return pack;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitManifest {
  std::set<std::string> train;
  std::set<std::string> val;
  std::set<std::string> test;

  const std::set<std::string>& of(Split s) const {
    return s == Split::train ? train : (s == Split::val ? val : test);
  }
};

inline SplitManifest parse_split_manifest(const nlohmann::json& j) {
  SplitManifest m;
  try {
    for (Split s : kAllSplits) {
      auto& target = s == Split::train ? m.train : (s == Split::val ? m.val : m.test);
      for (const auto& id : j.at(to_string(s))) target.insert(id.get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw PackError(PackErrorKind::manifest, std::string("split manifest: ") + e.what());
  }
  return m;
}

inline SplitManifest load_split_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw PackError(PackErrorKind::io, "cannot open split manifest '" + path.string() + "'");
  try {
    return parse_split_manifest(nlohmann::json::parse(f));
  } catch (const nlohmann::json::parse_error& e) {
    throw PackError(PackErrorKind::manifest, "split manifest '" + path.string() + "': " + e.what());
  }
}

namespace detail {

inline void check_manifest_disjoint(const SplitManifest& m) {
  for (const auto& id : m.train) {
    if (m.val.contains(id) || m.test.contains(id)) {
      throw PackError(PackErrorKind::manifest, "illustrator '" + id + "' assigned to more than one split");
    }
  }
  for (const auto& id : m.val) {
    if (m.test.contains(id)) {
      throw PackError(PackErrorKind::manifest, "illustrator '" + id + "' assigned to more than one split");
    }
  }
}

inline Split split_for_illustrator(const SplitManifest& m, const EmbeddingRecord& r) {
  if (!r.illustrator_id) {
    throw PackError(PackErrorKind::manifest, "image record '" + r.id + "' has no illustrator_id");
  }
  for (Split s : kAllSplits) {
    if (m.of(s).contains(*r.illustrator_id)) return s;
  }
  throw PackError(PackErrorKind::manifest,
                  "illustrator '" + *r.illustrator_id + "' not covered by the split manifest");
}

}  // namespace detail

// Relabels a pack holding both modalities: images by illustrator, audio by
// the split of the image it is paired with.
inline EmbeddingPack split_by_illustrator(const EmbeddingPack& pack, const SplitManifest& manifest) {
  detail::check_manifest_disjoint(manifest);
  EmbeddingPack out = pack;
  std::unordered_map<std::string, Split> split_of_pair;
  for (auto& r : out.records) {
    if (r.modality != Modality::image) continue;
    r.split = detail::split_for_illustrator(manifest, r);
    split_of_pair[r.pair_id] = r.split;
  }
  for (auto& r : out.records) {
    if (r.modality != Modality::audio) continue;
    auto it = split_of_pair.find(r.pair_id);
    if (it == split_of_pair.end()) {
      throw PackError(PackErrorKind::invariant,
                      "audio record '" + r.id + "' has no paired image to take its split from");
    }
    r.split = it->second;
  }
  validate_pack(out);
  return out;
}

inline std::pair<EmbeddingPack, EmbeddingPack> split_by_illustrator(const EmbeddingPack& images,
                                                                    const EmbeddingPack& audio,
                                                                    const SplitManifest& manifest) {
  detail::check_manifest_disjoint(manifest);
  std::pair<EmbeddingPack, EmbeddingPack> out{images, audio};
  std::unordered_map<std::string, Split> split_of_pair;
  for (auto& r : out.first.records) {
    r.split = detail::split_for_illustrator(manifest, r);
    split_of_pair[r.pair_id] = r.split;
  }
  for (auto& r : out.second.records) {
    auto it = split_of_pair.find(r.pair_id);
    if (it == split_of_pair.end()) {
      throw PackError(PackErrorKind::invariant,
                      "audio record '" + r.id + "' has no paired image to take its split from");
    }
    r.split = it->second;
  }
  validate_pair_packs(out.first, out.second);
  return out;
}

// Illustrator-free random split of paired packs. Pairs are shuffled with the
// pinned stream, then the first round(train_fraction * n) go to train, the
// next round(val_fraction * n) to val and the rest to test.
inline std::pair<EmbeddingPack, EmbeddingPack> assign_random_split(const EmbeddingPack& images,
                                                                   const EmbeddingPack& audio,
                                                                   double train_fraction,
                                                                   double val_fraction,
                                                                   std::uint64_t seed) {
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0) {
    throw std::invalid_argument("assign_random_split: bad fractions");
  }
  std::vector<std::string> pairs;
  for (const auto& r : images.records) pairs.push_back(r.pair_id);
  RngStream rng(seed);
  shuffle(pairs, rng);
  const auto n = pairs.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train,
                              static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))));
  std::unordered_map<std::string, Split> split_of_pair;
  for (std::size_t i = 0; i < n; ++i) {
    split_of_pair[pairs[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  }
  std::pair<EmbeddingPack, EmbeddingPack> out{images, audio};
  for (auto* pack : {&out.first, &out.second}) {
    for (auto& r : pack->records) {
      auto it = split_of_pair.find(r.pair_id);
      if (it == split_of_pair.end()) {
        throw PackError(PackErrorKind::invariant, "record '" + r.id + "' has no paired image");
      }
      r.split = it->second;
    }
  }
  validate_pair_packs(out.first, out.second);
  return out;
}

// Reassigns class ids so that alphabetical order of class_name gives
// contiguous ids 0..C-1, consistently across both packs.
inline std::pair<EmbeddingPack, EmbeddingPack> relabel_classes_alphabetically(
    const EmbeddingPack& images, const EmbeddingPack& audio) {
  std::set<std::string> names;
  for (const auto* pack : {&images, &audio}) {
    for (const auto& r : pack->records) names.insert(r.class_name);
  }
  std::unordered_map<std::string, int> id_of;
  for (const auto& n : names) id_of.emplace(n, static_cast<int>(id_of.size()));
  std::pair<EmbeddingPack, EmbeddingPack> out{images, audio};
  for (auto* pack : {&out.first, &out.second}) {
    for (auto& r : pack->records) r.class_id = id_of.at(r.class_name);
    pack->class_count = std::max(pack->class_count, names.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  std::size_t class_count = 50;
  std::size_t dim = 512;
  std::size_t pairs_per_class = 8;
  double intra_class_audio_spread = 0.01;
  double intra_class_image_spread = 0.05;
  std::uint64_t cross_modal_rotation_seed = 1;
  std::uint64_t noise_seed = 2;
  bool identity_rotation = false;
  // Images get illustrator "ill-<k mod n>" when n > 0; otherwise none.
  std::size_t illustrator_count = 0;
};

// Haar-like random rotation: Gram-Schmidt QR of a seeded Gaussian matrix.
// Gram-Schmidt yields an R factor with positive diagonal, which is the
// sign-fixed QR that makes the construction unique.
inline Matrix random_orthogonal(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  Matrix cols(n, n);  // row j holds column j of the Gaussian matrix
  for (double& v : cols.values()) v = rng.normal();
  for (std::size_t j = 0; j < n; ++j) {
    auto qj = cols.row(j);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < j; ++i) {
        const auto qi = cols.row(i);
        const double proj = dot(qi, qj);
        for (std::size_t k = 0; k < n; ++k) qj[k] -= proj * qi[k];
      }
    }
    const double norm = l2_norm(qj);
    for (double& v : qj) v /= norm;
  }
  Matrix q(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) q(k, j) = cols(j, k);
  }
  return q;
}

inline std::string synthetic_class_name(std::size_t c) {
  std::ostringstream s;
  s << "class_" << std::setw(3) << std::setfill('0') << c;
  return s.str();
}

inline std::pair<EmbeddingPack, EmbeddingPack> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.class_count == 0 || spec.dim == 0) {
    throw std::invalid_argument("generate_synthetic: class_count and dim must be positive");
  }
  if (!(spec.intra_class_audio_spread >= 0.0) || !(spec.intra_class_image_spread >= 0.0)) {
    throw std::invalid_argument("generate_synthetic: spreads must be nonnegative");
  }
  const std::size_t d = spec.dim;
  const Matrix rotation =
      spec.identity_rotation ? Matrix::identity(d) : random_orthogonal(d, spec.cross_modal_rotation_seed);

  RngStream centroid_rng = RngStream(spec.noise_seed).fork(1);
  RngStream audio_rng = RngStream(spec.noise_seed).fork(2);
  RngStream image_rng = RngStream(spec.noise_seed).fork(3);

  const std::string provenance = "synthetic classes=" + std::to_string(spec.class_count) +
                                 " dim=" + std::to_string(d);
  EmbeddingPack images{d, spec.class_count, {}, provenance};
  EmbeddingPack audio{d, spec.class_count, {}, provenance};

  std::vector<double> centroid(d);
  std::vector<double> noisy(d);
  for (std::size_t c = 0; c < spec.class_count; ++c) {
    for (double& v : centroid) v = centroid_rng.normal();
    const double norm = l2_norm(centroid);
    for (double& v : centroid) v /= norm;

    for (std::size_t k = 0; k < spec.pairs_per_class; ++k) {
      const std::string suffix = std::to_string(c) + "-" + std::to_string(k);
      EmbeddingRecord a;
      a.id = "aud-" + suffix;
      a.modality = Modality::audio;
      a.class_id = static_cast<int>(c);
      a.class_name = synthetic_class_name(c);
      a.pair_id = "pair-" + suffix;
      a.vector.resize(d);
      for (std::size_t i = 0; i < d; ++i) {
        a.vector[i] = static_cast<float>(centroid[i] + spec.intra_class_audio_spread * audio_rng.normal());
      }

      EmbeddingRecord img = a;
      img.id = "img-" + suffix;
      img.modality = Modality::image;
      if (spec.illustrator_count > 0) {
        img.illustrator_id = "ill-" + std::to_string(k % spec.illustrator_count);
      }
      for (std::size_t i = 0; i < d; ++i) {
        noisy[i] = centroid[i] + spec.intra_class_image_spread * image_rng.normal();
      }
      for (std::size_t r = 0; r < d; ++r) {
        img.vector[r] = static_cast<float>(dot(rotation.row(r), noisy));
      }
      audio.records.push_back(std::move(a));
      images.records.push_back(std::move(img));
    }
  }
  return {std::move(images), std::move(audio)};
}

}  // namespace onoalign
