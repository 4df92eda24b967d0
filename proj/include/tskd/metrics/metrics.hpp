#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tskd::metrics {

/// Row-major boolean mask.
struct BinaryGrid {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> data;

  BinaryGrid() = default;
  BinaryGrid(std::int64_t h, std::int64_t w) : height(h), width(w), data(static_cast<std::size_t>(h * w), 0) {}

  bool at(std::int64_t y, std::int64_t x) const { return data[static_cast<std::size_t>(y * width + x)] != 0; }
  void set(std::int64_t y, std::int64_t x, bool v = true) {
    data[static_cast<std::size_t>(y * width + x)] = v ? 1 : 0;
  }
  std::int64_t count() const;
  bool empty() const { return count() == 0; }
};

/// Row-major class-index mask.
struct ClassGrid {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::int32_t> data;

  BinaryGrid binary(std::int32_t cls) const;
};

struct BinaryMaskPair {
  BinaryGrid predicted;
  BinaryGrid reference;
  double spacing_y = 1.0;
  double spacing_x = 1.0;
};

struct DiceResult {
  double value = 0.0;
  bool skipped = false;  // both masks empty; value is 1 by convention
};

/// 2|A∩B| / (|A|+|B|).
DiceResult dice(const BinaryMaskPair& pair);

struct IoUResult {
  double value = 0.0;
  bool skipped = false;
};
IoUResult iou(const BinaryMaskPair& pair);

enum class HdMode {
  pooled,        // percentile of the union of both directed distance sets
  max_directed,  // max of the two directed percentiles
};

/// Pixels of the mask having at least one 4-neighbor outside the mask
/// (pixels on the image border count as boundary).
std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const BinaryGrid& g);

/// Linear-interpolation percentile (q in [0,100]) of a nonempty sample.
double percentile(std::vector<double> values, double q);

/// 95th-percentile boundary distance in spacing units; nullopt when either
/// mask is empty.
std::optional<double> hd95(const BinaryMaskPair& pair, HdMode mode = HdMode::pooled);

/// Exact Euclidean distance from every pixel to the nearest set pixel of
/// `g`, honoring anisotropic spacing. Pixels are +inf when `g` is empty.
std::vector<double> distance_transform(const BinaryGrid& g, double spacing_y = 1.0, double spacing_x = 1.0);

struct MiouResult {
  double value = 1.0;
  int classes_used = 0;   // foreground classes present in either mask
  int classes_skipped = 0;
};

/// Mean IoU over foreground classes (1..C−1) present in either mask.
MiouResult miou(const ClassGrid& predicted, const ClassGrid& reference, int class_count);

struct PsnrMse {
  double psnr_db = 0.0;  // +inf when mse == 0
  double mse = 0.0;
};

double psnr_from_mse(double mse, double peak = 255.0);
/// Inputs already on the peak scale (e.g. 8-bit values for peak 255).
PsnrMse psnr_mse(std::span<const double> a, std::span<const double> b, double peak = 255.0);

struct ClassMetrics {
  std::string name;
  double dice = 0.0;
  double hd95 = 0.0;      // NaN when undefined on every sample
  double iou = 0.0;
  int dice_samples = 0;
  int hd95_samples = 0;
  int skipped = 0;        // empty in both prediction and reference
  int hd95_undefined = 0; // empty in exactly one
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;  // foreground classes only
  double mean_dice = 0.0;
  double mean_hd95 = 0.0;
  double mean_iou = 0.0;
  std::int64_t samples = 0;

  /// Columns class,dice,hd95,iou,flags; one row per class then a mean row.
  std::string to_csv() const;
};

/// Per-class averages over samples (skipping empty-in-both cases) and
/// foreground means of those averages.
MetricsReport evaluate(const std::vector<ClassGrid>& predicted, const std::vector<ClassGrid>& reference,
                       int class_count, const std::vector<std::string>& class_names = {},
                       double spacing = 1.0, HdMode mode = HdMode::pooled);

}  // namespace tskd::metrics
