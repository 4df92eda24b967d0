#pragma once

#include <cstdint>
#include <string>

#include "tskd/core/sample.hpp"

namespace tskd {

/// Procedural grayscale segmentation tasks used for desk-scale experiments.
///
/// `target`: 3 classes (background, ellipse, rectangle). Every image holds
/// one ellipse and one rectangle; a triangle may appear as an unlabeled
/// distractor. Foreground intensities are drawn from the same
/// range for every shape kind and images carry multiplicative speckle.
/// Rectangles are striped, triangles checkered, other shapes flat.
///
/// `foundation`: a broader distribution (ellipse, rectangle, triangle, ring,
/// cross, all labeled) with additive noise; it stands in for the generic
/// pretraining data of a vision foundation model.
enum class ShapesTask { target, foundation };

int shapes_class_count(ShapesTask task);
std::vector<std::string> shapes_class_names(ShapesTask task);

/// Deterministic in (task, seed, index, size).
SegmentationSample make_shapes_sample(ShapesTask task, std::uint64_t seed, std::int64_t index,
                                      std::int64_t size = 64);

LabeledDataset make_shapes_dataset(ShapesTask task, std::int64_t count, std::uint64_t seed,
                                   std::int64_t size = 64);

/// Images only, provenance `procedural`.
TransferSet make_shapes_images(ShapesTask task, std::int64_t count, std::uint64_t seed,
                               std::int64_t size = 64);

}  // namespace tskd
