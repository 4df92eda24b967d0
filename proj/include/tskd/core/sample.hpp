#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace tskd {

/// One supervised datum. `image` is float32 H×W×channels in [0,1]; `mask`
/// is uint8 H×W holding class indices (0 = background).
struct SegmentationSample {
  torch::Tensor image;
  torch::Tensor mask;
  std::string id;

  std::int64_t height() const { return image.size(0); }
  std::int64_t width() const { return image.size(1); }
  std::int64_t channels() const { return image.size(2); }
};

/// Throws ValidationError unless the sample satisfies its invariants for
/// `class_count` classes.
void validate_sample(const SegmentationSample& s, int class_count);

/// Immutable, id-sorted collection of labeled samples.
class LabeledDataset {
 public:
  LabeledDataset(std::vector<SegmentationSample> samples, int class_count,
                 std::vector<std::string> class_names = {});

  const std::vector<SegmentationSample>& samples() const noexcept { return samples_; }
  const SegmentationSample& operator[](std::size_t i) const { return samples_.at(i); }
  std::size_t size() const noexcept { return samples_.size(); }
  int class_count() const noexcept { return class_count_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }

  std::vector<std::string> ids() const;

  /// Images stacked as N×channels×H×W float32.
  torch::Tensor image_batch() const;
  /// Masks stacked as N×H×W int64.
  torch::Tensor mask_batch() const;

 private:
  std::vector<SegmentationSample> samples_;
  int class_count_;
  std::vector<std::string> class_names_;
};

enum class Provenance { augmented, diffusion_sampled, procedural };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// Unlabeled image collection used for pretraining and distillation.
struct TransferSet {
  std::vector<torch::Tensor> images;  // each H×W×channels float32 in [0,1]
  Provenance provenance = Provenance::augmented;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }

  /// Throws ValidationError if the images do not all share one shape.
  void validate() const;
  /// Images stacked as N×channels×H×W float32.
  torch::Tensor batch() const;
};

/// H×W×C image tensors to N×C×H×W.
torch::Tensor stack_images(const std::vector<torch::Tensor>& images);

}  // namespace tskd
