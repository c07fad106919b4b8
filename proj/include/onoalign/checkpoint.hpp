// Checkpoint persistence: <stem>.manifest.json describes every tensor
// (name, shape, dtype "f64", byte_offset) and carries an FNV-1a checksum of
// <stem>.blob, which holds the raw little-endian parameter bytes.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "onoalign/binary_io.hpp"
#include "onoalign/embstore.hpp"
#include "onoalign/model.hpp"

namespace onoalign {

class CheckpointError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct CheckpointPaths {
  std::filesystem::path manifest;
  std::filesystem::path blob;

  explicit CheckpointPaths(const std::filesystem::path& stem)
      : manifest(stem.string() + ".manifest.json"), blob(stem.string() + ".blob") {}
};

inline constexpr std::string_view kCheckpointFormat = "onoalign-checkpoint";

inline std::vector<std::byte> encode_parameters(const AlignmentModel& model) {
  std::vector<std::byte> blob;
  blob.reserve(parameter_count(model) * sizeof(double));
  for_each_tensor(model, [&](const TensorInfo&, std::span<const double> v) {
    for (double x : v) append_le(blob, x);
  });
  return blob;
}

inline nlohmann::ordered_json checkpoint_manifest(const AlignmentModel& model,
                                                  std::span<const std::byte> blob) {
  nlohmann::ordered_json m;
  m["format"] = kCheckpointFormat;
  m["version"] = 1;
  m["dims"] = {{"input", model.dims.input},
               {"hidden", model.dims.hidden},
               {"joint", model.dims.joint},
               {"classes", model.dims.classes}};
  auto tensors = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for_each_tensor(model, [&](const TensorInfo& info, std::span<const double> v) {
    nlohmann::ordered_json t;
    t["name"] = info.name;
    t["shape"] = info.shape;
    t["dtype"] = "f64";
    t["byte_offset"] = offset;
    tensors.push_back(std::move(t));
    offset += v.size() * sizeof(double);
  });
  m["tensors"] = std::move(tensors);
  m["blob_bytes"] = blob.size();
  m["fnv1a64"] = to_hex64(fnv1a64(blob));
  return m;
}

inline void save_checkpoint(const AlignmentModel& model, const std::filesystem::path& stem) {
  const CheckpointPaths paths(stem);
  const auto blob = encode_parameters(model);
  write_file(paths.blob, blob);
  write_text_file(paths.manifest, checkpoint_manifest(model, blob).dump(2) + "\n");
}

inline AlignmentModel load_checkpoint(const std::filesystem::path& stem) {
  const CheckpointPaths paths(stem);
  nlohmann::json manifest;
  {
    std::ifstream f(paths.manifest);
    if (!f) throw CheckpointError("cannot open '" + paths.manifest.string() + "'");
    try {
      manifest = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
      throw CheckpointError("corrupt manifest '" + paths.manifest.string() + "': " + e.what());
    }
  }
  std::vector<std::byte> blob;
  try {
    blob = read_file(paths.blob);
  } catch (const PackError& e) {
    throw CheckpointError(e.what());
  }

  try {
    if (manifest.at("format").get<std::string>() != kCheckpointFormat ||
        manifest.at("version").get<int>() != 1) {
      throw CheckpointError("unsupported checkpoint format");
    }
    const auto& d = manifest.at("dims");
    ModelDims dims{d.at("input").get<std::size_t>(), d.at("hidden").get<std::size_t>(),
                   d.at("joint").get<std::size_t>(), d.at("classes").get<std::size_t>()};
    if (dims.input == 0 || dims.hidden == 0 || dims.joint == 0 || dims.classes == 0) {
      throw CheckpointError("manifest dims must be positive");
    }
    if (manifest.at("blob_bytes").get<std::size_t>() != blob.size()) {
      throw CheckpointError("blob size " + std::to_string(blob.size()) +
                            " disagrees with manifest blob_bytes");
    }
    if (from_hex64(manifest.at("fnv1a64").get<std::string>()) != fnv1a64(blob)) {
      throw CheckpointError("checksum mismatch for '" + paths.blob.string() + "'");
    }

    AlignmentModel model = zero_model(dims);
    const auto& tensors = manifest.at("tensors");
    std::size_t index = 0;
    std::size_t expected_offset = 0;
    for_each_tensor(model, [&](const TensorInfo& info, std::span<double> values) {
      if (index >= tensors.size()) throw CheckpointError("manifest lists too few tensors");
      const auto& t = tensors[index++];
      if (t.at("name").get<std::string>() != info.name) {
        throw CheckpointError("expected tensor '" + info.name + "', manifest has '" +
                              t.at("name").get<std::string>() + "'");
      }
      if (t.at("shape").get<std::vector<std::size_t>>() != info.shape) {
        throw CheckpointError("tensor '" + info.name + "': shape does not match dims");
      }
      if (t.at("dtype").get<std::string>() != "f64") {
        throw CheckpointError("tensor '" + info.name + "': unsupported dtype");
      }
      const auto offset = t.at("byte_offset").get<std::size_t>();
      if (offset != expected_offset || offset + values.size() * sizeof(double) > blob.size()) {
        throw CheckpointError("tensor '" + info.name + "': byte_offset " + std::to_string(offset) +
                              " inconsistent with blob layout");
      }
      for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = read_le<double>(blob, offset + i * sizeof(double));
      }
      expected_offset = offset + values.size() * sizeof(double);
    });
    if (index != tensors.size()) throw CheckpointError("manifest lists unexpected extra tensors");
    if (expected_offset != blob.size()) throw CheckpointError("blob has trailing bytes");
    for_each_tensor(model, [&](const TensorInfo& info, std::span<const double> v) {
      if (!all_finite(v)) throw CheckpointError("tensor '" + info.name + "' has non-finite values");
    });
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt manifest '" + paths.manifest.string() + "': " + e.what());
  }
}

}  // namespace onoalign
