#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "tskd/core/config.hpp"
#include "tskd/models/layers.hpp"

namespace tskd {

/// Final-layer hidden states on the token grid: B×grid_h×grid_w×d.
struct EncoderOutput {
  torch::Tensor tokens;
};

enum class Resolution { full, low };

/// Class logits B×C×H×W.
struct SegLogits {
  torch::Tensor logits;
  Resolution resolution = Resolution::full;
};

class ViTEncoderImpl : public torch::nn::Module {
 public:
  explicit ViTEncoderImpl(ViTEncoderConfig cfg);

  /// images: B×in_channels×S×S.
  EncoderOutput forward(const torch::Tensor& images);

  /// Patch embeddings plus positional embeddings, B×N×d.
  torch::Tensor embed(const torch::Tensor& images);
  /// Runs the blocks and final norm over an arbitrary token subset, B×n×d.
  torch::Tensor encode_tokens(const torch::Tensor& tokens);

  const ViTEncoderConfig& config() const { return cfg_; }

  torch::nn::Conv2d patch_embed{nullptr};
  torch::Tensor pos_embed;
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr};

 private:
  void check_input(const torch::Tensor& images) const;
  ViTEncoderConfig cfg_;
};
TORCH_MODULE(ViTEncoder);

/// Multi-scale head over the final encoder layer: the single token map is
/// resampled into a four-level pyramid (½×, 1×, 2×, 4× the grid), fused
/// top-down, and decoded to full-resolution class logits.
class FPNHeadImpl : public torch::nn::Module {
 public:
  FPNHeadImpl(std::int64_t embed_dim, std::int64_t channels, std::int64_t classes, std::int64_t image_size);
  /// features: B×grid×grid×d.
  torch::Tensor forward(const torch::Tensor& features);

  torch::nn::Conv2d lateral_down{nullptr}, lateral_mid{nullptr};
  torch::nn::ConvTranspose2d up1{nullptr}, up2{nullptr};
  torch::nn::Conv2d smooth{nullptr}, classifier{nullptr};
  std::int64_t image_size;
};
TORCH_MODULE(FPNHead);

struct StudentOutput {
  EncoderOutput encoder;
  SegLogits logits;  // full resolution
};

class StudentModelImpl : public torch::nn::Module {
 public:
  StudentModelImpl(ViTEncoderConfig cfg, std::int64_t classes, std::int64_t fpn_channels = 32);
  StudentOutput forward(const torch::Tensor& images);

  std::int64_t classes() const { return classes_; }

  ViTEncoder encoder{nullptr};
  FPNHead head{nullptr};

 private:
  std::int64_t classes_;
};
TORCH_MODULE(StudentModel);

/// Promptless dense mask decoder: one transformer block over the encoder
/// tokens, a learned 2× upscaling, and logits at ¼ of the input resolution.
/// Emits C class channels plus one class-agnostic objectness channel.
class MaskDecoderImpl : public torch::nn::Module {
 public:
  MaskDecoderImpl(const ViTEncoderConfig& cfg, std::int64_t classes);
  /// tokens: B×grid×grid×d. Returns B×(C+1)×S/4×S/4.
  torch::Tensor forward(const torch::Tensor& tokens);

  Block block{nullptr};
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::ConvTranspose2d upscale{nullptr};
  torch::nn::Conv2d refine{nullptr};
  torch::nn::Conv2d class_head{nullptr};
  torch::nn::Conv2d objectness_head{nullptr};
  std::int64_t low_size;
};
TORCH_MODULE(MaskDecoder);

struct TeacherOutput {
  EncoderOutput encoder;
  SegLogits logits;         // C channels, low resolution
  torch::Tensor raw_logits; // C+1 channels (objectness last), low resolution
};

class TeacherModelImpl : public torch::nn::Module {
 public:
  TeacherModelImpl(ViTEncoderConfig cfg, std::int64_t classes);
  TeacherOutput forward(const torch::Tensor& images);

  std::int64_t classes() const { return classes_; }

  ViTEncoder encoder{nullptr};
  MaskDecoder decoder{nullptr};
  /// Set once LoRA fine-tuning on the target task has completed.
  bool task_adapted = false;

 private:
  std::int64_t classes_;
};
TORCH_MODULE(TeacherModel);

/// Bilinear (align_corners = false) resize of B×C×h×w to B×C×size×size.
torch::Tensor resize_logits(const torch::Tensor& logits, std::int64_t size);

}  // namespace tskd
