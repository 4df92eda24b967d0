#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace tskd {

struct CheckpointMetadata {
  std::string model_kind;
  std::int64_t step = 0;
  std::string config_hash;
  /// Free-form flags, e.g. {"task_adapted": "true"}.
  std::map<std::string, std::string> extra;

  bool operator==(const CheckpointMetadata&) const = default;
};

/// Named tensors plus metadata. Names are unique by construction (map key)
/// and iterate in lexicographic order, which makes serialization canonical.
struct CheckpointBundle {
  std::map<std::string, torch::Tensor> tensors;
  CheckpointMetadata metadata;
};

/// Binary layout (little endian):
///   "TSKDCKPT" u32 version
///   u64 metadata_len, metadata JSON
///   u64 record_count, records: u32 name_len, name, u8 dtype, u32 ndim,
///     i64 dims[ndim], u64 nbytes, raw bytes
///   u32 crc32 of every preceding byte
void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path);
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

/// In-memory form of the same encoding (used for hashing and tests).
std::string serialize_checkpoint(const CheckpointBundle& bundle);
CheckpointBundle deserialize_checkpoint(const std::string& bytes);

/// Every parameter and buffer of `module`, keyed by its dotted path.
CheckpointBundle bundle_from_module(const torch::nn::Module& module, CheckpointMetadata metadata = {});

/// Strict restore: every module tensor must appear in the bundle with the
/// same shape. Throws IntegrityError otherwise.
void load_module_strict(torch::nn::Module& module, const CheckpointBundle& bundle);

struct PartialLoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> skipped;   // name matched, shape did not
  std::vector<std::string> unknown;   // present in bundle only
  std::vector<std::string> missing;   // present in module only
};

/// Copies every bundle tensor whose name and shape both match a module
/// tensor. Mismatches are reported, never fatal, and skipped tensors are
/// left untouched.
PartialLoadReport load_pretrained_partial(torch::nn::Module& module, const CheckpointBundle& bundle);

/// Hex digest of the canonical serialization.
std::string checkpoint_digest(const CheckpointBundle& bundle);

}  // namespace tskd
