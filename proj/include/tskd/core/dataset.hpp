#pragma once

#include <cstdint>
#include <filesystem>

#include "tskd/core/sample.hpp"

namespace tskd {

/// 8-bit PNG (gray or color) to H×W×channels float32 in [0,1].
torch::Tensor read_image_png(const std::filesystem::path& path);
/// H×W×channels float in [0,1] to 8-bit PNG; values are clamped and rounded.
void write_image_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Single-channel 8-bit class-index PNG to uint8 H×W.
torch::Tensor read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask);

/// Reads `<root>/images/<id>.png` + `<root>/masks/<id>.png` pairs. Every
/// image must have a mask and vice versa; mask values must be < class_count.
LabeledDataset load_dataset(const std::filesystem::path& root, int class_count);

/// Writes a dataset in the layout `load_dataset` reads.
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& root);

/// Deterministic label subset: seeded shuffle of the id-sorted samples, then
/// a prefix of length `budget`. Subsets are nested in `budget` for a fixed
/// seed.
LabeledDataset subset_labels(const LabeledDataset& ds, std::int64_t budget, std::uint64_t seed);

/// Splits off the first `count` samples of a seeded permutation as a
/// held-out set; the remainder is returned second.
std::pair<LabeledDataset, LabeledDataset> split_holdout(const LabeledDataset& ds,
                                                        std::int64_t count, std::uint64_t seed);

}  // namespace tskd
