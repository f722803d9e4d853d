#pragma once

// On-disk container shared by datasets and checkpoints: a directory holding
// one raw little-endian tensor file per field plus `manifest.json`.
//
//   manifest.json
//     format        "mmcrl-tensors"
//     version       1
//     kind          free-form tag ("dataset", "checkpoint", ...)
//     fields        [{name, file, dtype: "float32"|"float64", shape: [rows, cols]}]
//     meta          arbitrary JSON owned by the producer
//     content_hash  "fnv1a64:<16 hex digits>" over field names and raw bytes
//
// Tensors are 2-D and stored row-major.

#include "mmcrl/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace mmcrl {

using Json = nlohmann::json;

enum class DType { Float32, Float64 };

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

class TensorStore {
public:
  explicit TensorStore(std::string kind = "dataset") : kind_(std::move(kind)) {}

  void put(const std::string& name, const Matrix& value, DType dtype = DType::Float32);
  bool contains(const std::string& name) const { return fields_.count(name) != 0; }
  const Matrix& get(const std::string& name) const;
  std::vector<std::string> names() const;

  Json& meta() { return meta_; }
  const Json& meta() const { return meta_; }
  const std::string& kind() const { return kind_; }

  /// Hash over field names and the exact bytes that are (or would be) written.
  std::string content_hash() const;

  /// Writes every field plus the manifest. Creates the directory if needed.
  void save(const std::filesystem::path& dir) const;

  /// Loads and verifies the content hash. Throws IoError on mismatch.
  static TensorStore load(const std::filesystem::path& dir);

private:
  struct Field {
    Matrix value;
    DType dtype;
  };
  std::string kind_;
  std::map<std::string, Field> fields_;
  std::vector<std::string> order_;
  Json meta_ = Json::object();
};

/// Writes JSON with a trailing newline; throws IoError on failure.
void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);

}  // namespace mmcrl
