#include "tskd/core/sample.hpp"

#include <algorithm>
#include <set>

#include "tskd/error.hpp"

namespace tskd {

void validate_sample(const SegmentationSample& s, int class_count) {
  if (!s.image.defined() || s.image.dim() != 3) {
    throw ValidationError("sample '" + s.id + "': image must be H×W×channels");
  }
  if (!s.mask.defined() || s.mask.dim() != 2) {
    throw ValidationError("sample '" + s.id + "': mask must be H×W");
  }
  if (s.image.size(0) != s.mask.size(0) || s.image.size(1) != s.mask.size(1)) {
    throw ValidationError("sample '" + s.id + "': image and mask spatial dims differ");
  }
  if (!torch::isfinite(s.image).all().item<bool>()) {
    throw ValidationError("sample '" + s.id + "': image has non-finite values");
  }
  if (s.mask.numel() > 0) {
    const auto max_value = s.mask.max().item<std::int64_t>();
    if (max_value >= class_count) {
      throw ValidationError("sample '" + s.id + "': mask value " + std::to_string(max_value) +
                            " >= class count " + std::to_string(class_count));
    }
  }
}

LabeledDataset::LabeledDataset(std::vector<SegmentationSample> samples, int class_count,
                               std::vector<std::string> class_names)
    : samples_(std::move(samples)), class_count_(class_count), class_names_(std::move(class_names)) {
  if (samples_.empty()) throw ValidationError("dataset is empty");
  if (class_count_ < 1) throw ValidationError("class count must be positive");
  std::sort(samples_.begin(), samples_.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  std::set<std::string> seen;
  for (const auto& s : samples_) {
    if (!seen.insert(s.id).second) throw ValidationError("duplicate sample id '" + s.id + "'");
    validate_sample(s, class_count_);
  }
  if (class_names_.empty()) {
    class_names_.push_back("background");
    for (int c = 1; c < class_count_; ++c) class_names_.push_back("class" + std::to_string(c));
  }
  if (static_cast<int>(class_names_.size()) != class_count_) {
    throw ValidationError("class_names size does not match class count");
  }
}

std::vector<std::string> LabeledDataset::ids() const {
  std::vector<std::string> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.id);
  return out;
}

torch::Tensor LabeledDataset::image_batch() const {
  std::vector<torch::Tensor> images;
  images.reserve(samples_.size());
  for (const auto& s : samples_) images.push_back(s.image);
  return stack_images(images);
}

torch::Tensor LabeledDataset::mask_batch() const {
  std::vector<torch::Tensor> masks;
  masks.reserve(samples_.size());
  for (const auto& s : samples_) masks.push_back(s.mask.to(torch::kLong));
  return torch::stack(masks);
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::augmented: return "augmented";
    case Provenance::diffusion_sampled: return "diffusion_sampled";
    case Provenance::procedural: return "procedural";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "augmented") return Provenance::augmented;
  if (s == "diffusion_sampled") return Provenance::diffusion_sampled;
  if (s == "procedural") return Provenance::procedural;
  throw ValidationError("unknown provenance '" + s + "'");
}

void TransferSet::validate() const {
  if (images.empty()) return;
  const auto shape = images.front().sizes();
  for (const auto& img : images) {
    if (img.sizes() != shape) throw ValidationError("transfer set images have differing shapes");
  }
}

torch::Tensor TransferSet::batch() const {
  if (images.empty()) throw ValidationError("transfer set is empty");
  return stack_images(images);
}

torch::Tensor stack_images(const std::vector<torch::Tensor>& images) {
  std::vector<torch::Tensor> chw;
  chw.reserve(images.size());
  for (const auto& img : images) chw.push_back(img.permute({2, 0, 1}));
  return torch::stack(chw).contiguous().to(torch::kFloat);
}

}  // namespace tskd
