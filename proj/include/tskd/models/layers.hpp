#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace tskd {

/// Low-rank factors attached to one square projection: ΔW = A·B with
/// A ∈ R^{d×r}, B ∈ R^{r×d}.
class LoraAdapterImpl : public torch::nn::Module {
 public:
  LoraAdapterImpl(std::int64_t dim, std::int64_t rank);

  torch::Tensor delta() const { return torch::matmul(A, B); }
  std::int64_t rank() const { return A.size(1); }

  torch::Tensor A;
  torch::Tensor B;
};
TORCH_MODULE(LoraAdapter);

/// Linear layer y = x·Wᵀ + b whose weight may carry a LoRA adapter. With an
/// adapter attached the effective weight is W₀ + A·B.
class AdaptableLinearImpl : public torch::nn::Module {
 public:
  AdaptableLinearImpl(std::int64_t in_features, std::int64_t out_features, bool bias = true);

  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor effective_weight() const;

  bool has_adapter() const { return !adapter.is_empty(); }
  void attach_adapter(LoraAdapter a);
  /// Removes and returns the adapter; throws if none is attached.
  LoraAdapter detach_adapter();

  torch::Tensor weight;
  torch::Tensor bias;
  LoraAdapter adapter{nullptr};
};
TORCH_MODULE(AdaptableLinear);

class AttentionImpl : public torch::nn::Module {
 public:
  AttentionImpl(std::int64_t dim, std::int64_t heads);
  /// x: B×N×d.
  torch::Tensor forward(const torch::Tensor& x);

  std::int64_t heads;
  AdaptableLinear q{nullptr}, k{nullptr}, v{nullptr};
  torch::nn::Linear proj{nullptr};
};
TORCH_MODULE(Attention);

/// Pre-norm transformer block.
class BlockImpl : public torch::nn::Module {
 public:
  BlockImpl(std::int64_t dim, std::int64_t heads, double mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  Attention attn{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Block);

/// Exact count of scalar parameters (optionally only those requiring grad).
std::int64_t param_count(const torch::nn::Module& module, bool trainable_only = false);

/// ViT-style initialization: N(0, 0.02) weights, zero biases, unit norms.
void init_vit_weights(torch::nn::Module& module);

}  // namespace tskd
