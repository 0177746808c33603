#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icar/numcore/tensor.hpp"

// Bit-exact little-endian persistence formats.
//
// Embedding store (`<path>`):
//   "ICAREMB1" | u16 version | u32 dim | u64 count | count*dim f32, row-major
// plus a JSON sidecar at `<path>.json`: {"ids", "categories", "domains"} and the
// optional per-row "hues" and "labels" arrays.
//
// Checkpoint:
//   "ICARCKP1" | u16 version | u64 config digest | u32 len, kind | u32 len, config JSON
//   | u32 tensor count | per tensor: u32 len, name | u32 rank | u64 dims[rank] | f32 data
//   | u8 has optimizer | [u64 step | f64 beta1, beta2, eps, weight decay | m tensors | v tensors]

namespace icar::store {

inline constexpr char kEmbeddingMagic[9] = "ICAREMB1";
inline constexpr char kCheckpointMagic[9] = "ICARCKP1";
inline constexpr std::uint16_t kFormatVersion = 1;

struct EmbeddingStore {
  std::uint32_t dim = 0;
  std::vector<float> data;
  std::vector<std::uint64_t> ids;
  std::vector<std::uint32_t> categories;
  std::vector<std::string> domains;
  std::vector<std::uint16_t> hues;     // optional; empty or one per row
  std::vector<std::int32_t> labels;    // optional style labels; empty or one per row

  std::uint64_t count() const noexcept { return ids.size(); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(data).subspan(i * dim, dim);
  }
  void append(std::uint64_t id, std::uint32_t category, std::string domain, std::span<const float> v,
              std::uint16_t hue = 0, std::int32_t label = -1);
};

void write_store(const std::filesystem::path& path, const EmbeddingStore& store);
/// Throws FormatError: "not an embedding store" on bad magic; "corrupt:
/// expected N bytes, got M" on a short or long body.
EmbeddingStore read_store(const std::filesystem::path& path);

struct ManifestItem {
  std::uint64_t item_id = 0;
  std::uint32_t category = 0;
  std::uint64_t embedding_row = 0;
};

struct ManifestRecord {
  std::uint64_t scene_id = 0;
  std::uint64_t scene_embedding_row = 0;
  std::vector<ManifestItem> items;
  std::optional<int> style_label;
};

/// JSON-lines, one record per scene.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
/// Throws FormatError if a row index is outside the given store counts.
void validate_manifest(const std::vector<ManifestRecord>& records, std::uint64_t scene_rows,
                       std::uint64_t item_rows);

struct NamedTensor {
  std::string name;
  nc::Shape shape;
  std::vector<float> data;
};

struct OptimizerSnapshot {
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::uint64_t config_digest = 0;
  std::vector<NamedTensor> tensors;
  std::optional<OptimizerSnapshot> optimizer;
};

/// FNV-1a over the canonical (key-sorted, compact) dump of `config`.
std::uint64_t config_digest(const nlohmann::json& config);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace icar::store
