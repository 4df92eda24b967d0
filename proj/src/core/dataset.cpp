#include "tskd/core/dataset.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tskd/core/rng.hpp"
#include "tskd/error.hpp"

namespace fs = std::filesystem;

namespace tskd {

namespace {

std::map<std::string, fs::path> list_pngs(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    out.emplace(entry.path().stem().string(), entry.path());
  }
  return out;
}

LabeledDataset take_permuted(const LabeledDataset& ds, const std::vector<std::size_t>& order,
                             std::size_t begin, std::size_t end) {
  std::vector<SegmentationSample> picked;
  picked.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) picked.push_back(ds[order[i]]);
  return LabeledDataset(std::move(picked), ds.class_count(), ds.class_names());
}

std::vector<std::size_t> seeded_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix64(seed));
  deterministic_shuffle(order, rng);
  return order;
}

}  // namespace

torch::Tensor read_image_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw ValidationError("cannot read image '" + path.string() + "'");
  if (m.depth() != CV_8U) throw ValidationError("image '" + path.string() + "' is not 8-bit");
  if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2RGB);
  auto t = torch::from_blob(m.data, {m.rows, m.cols, m.channels()}, torch::kUInt8).clone();
  return t.to(torch::kFloat).div_(255.0f);
}

void write_image_png(const fs::path& path, const torch::Tensor& image) {
  if (image.dim() != 3) throw ValidationError("write_image_png expects H×W×channels");
  auto bytes = image.detach().to(torch::kFloat).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).contiguous();
  const int channels = static_cast<int>(bytes.size(2));
  cv::Mat m(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC(channels), bytes.data_ptr());
  cv::Mat out = m;
  if (channels == 3) cv::cvtColor(m, out, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw Error("cannot write '" + path.string() + "'");
}

torch::Tensor read_mask_png(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw ValidationError("cannot read mask '" + path.string() + "'");
  if (m.depth() != CV_8U || m.channels() != 1) {
    throw ValidationError("mask '" + path.string() + "' must be single-channel 8-bit");
  }
  return torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone();
}

void write_mask_png(const fs::path& path, const torch::Tensor& mask) {
  if (mask.dim() != 2) throw ValidationError("write_mask_png expects H×W");
  auto bytes = mask.detach().to(torch::kUInt8).contiguous();
  cv::Mat m(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC1, bytes.data_ptr());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw Error("cannot write '" + path.string() + "'");
}

LabeledDataset load_dataset(const fs::path& root, int class_count) {
  if (class_count < 1) throw ValidationError("class count must be positive");
  const auto images = list_pngs(root / "images");
  const auto masks = list_pngs(root / "masks");
  if (images.empty()) throw ValidationError("no images found under '" + (root / "images").string() + "'");
  for (const auto& [id, path] : images) {
    if (!masks.count(id)) throw ValidationError("image '" + path.string() + "' has no matching mask");
  }
  for (const auto& [id, path] : masks) {
    if (!images.count(id)) throw ValidationError("mask '" + path.string() + "' has no matching image");
  }

  std::vector<SegmentationSample> samples;
  samples.reserve(images.size());
  for (const auto& [id, image_path] : images) {
    SegmentationSample s{read_image_png(image_path), read_mask_png(masks.at(id)), id};
    const auto max_value = s.mask.max().item<std::int64_t>();
    if (max_value >= class_count) {
      throw ValidationError("mask '" + masks.at(id).string() + "' contains value " +
                            std::to_string(max_value) + " but class count is " +
                            std::to_string(class_count));
    }
    samples.push_back(std::move(s));
  }
  return LabeledDataset(std::move(samples), class_count);
}

void save_dataset(const LabeledDataset& ds, const fs::path& root) {
  for (const auto& s : ds.samples()) {
    write_image_png(root / "images" / (s.id + ".png"), s.image);
    write_mask_png(root / "masks" / (s.id + ".png"), s.mask);
  }
}

LabeledDataset subset_labels(const LabeledDataset& ds, std::int64_t budget, std::uint64_t seed) {
  if (budget <= 0 || budget > static_cast<std::int64_t>(ds.size())) {
    throw ValidationError("label budget " + std::to_string(budget) + " outside [1, " +
                          std::to_string(ds.size()) + "]");
  }
  if (budget == static_cast<std::int64_t>(ds.size())) return ds;
  const auto order = seeded_order(ds.size(), seed);
  return take_permuted(ds, order, 0, static_cast<std::size_t>(budget));
}

std::pair<LabeledDataset, LabeledDataset> split_holdout(const LabeledDataset& ds, std::int64_t count,
                                                        std::uint64_t seed) {
  if (count <= 0 || count >= static_cast<std::int64_t>(ds.size())) {
    throw ValidationError("holdout size must leave both parts nonempty");
  }
  const auto order = seeded_order(ds.size(), seed ^ 0x5eedULL);
  return {take_permuted(ds, order, 0, static_cast<std::size_t>(count)),
          take_permuted(ds, order, static_cast<std::size_t>(count), ds.size())};
}

}  // namespace tskd
