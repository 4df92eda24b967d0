#include "tskd/models/layers.hpp"

#include <cmath>

#include "tskd/error.hpp"

namespace tskd {

LoraAdapterImpl::LoraAdapterImpl(std::int64_t dim, std::int64_t rank) {
  A = register_parameter("A", torch::zeros({dim, rank}));
  B = register_parameter("B", torch::zeros({rank, dim}));
}

AdaptableLinearImpl::AdaptableLinearImpl(std::int64_t in_features, std::int64_t out_features, bool with_bias) {
  weight = register_parameter("weight", torch::empty({out_features, in_features}));
  torch::nn::init::normal_(weight, 0.0, 0.02);
  if (with_bias) bias = register_parameter("bias", torch::zeros({out_features}));
}

torch::Tensor AdaptableLinearImpl::effective_weight() const {
  if (adapter.is_empty()) return weight;
  return weight + adapter->delta();
}

torch::Tensor AdaptableLinearImpl::forward(const torch::Tensor& x) {
  return torch::nn::functional::linear(x, effective_weight(), bias);
}

void AdaptableLinearImpl::attach_adapter(LoraAdapter a) {
  if (has_adapter()) throw ValidationError("projection already carries an adapter");
  if (weight.size(0) != weight.size(1)) throw ValidationError("LoRA targets must be square projections");
  if (a->A.size(0) != weight.size(0) || a->B.size(1) != weight.size(1)) {
    throw ValidationError("adapter shape does not match projection");
  }
  a->to(weight.scalar_type());
  adapter = register_module("lora", std::move(a));
}

LoraAdapter AdaptableLinearImpl::detach_adapter() {
  if (!has_adapter()) throw ValidationError("projection has no adapter");
  auto a = adapter;
  unregister_module("lora");
  adapter = LoraAdapter{nullptr};
  return a;
}

AttentionImpl::AttentionImpl(std::int64_t dim, std::int64_t heads_) : heads(heads_) {
  q = register_module("q", AdaptableLinear(dim, dim));
  k = register_module("k", AdaptableLinear(dim, dim));
  v = register_module("v", AdaptableLinear(dim, dim));
  proj = register_module("proj", torch::nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0);
  const auto n = x.size(1);
  const auto d = x.size(2);
  const auto hd = d / heads;
  auto split = [&](const torch::Tensor& t) { return t.view({b, n, heads, hd}).transpose(1, 2); };
  auto qh = split(q->forward(x));
  auto kh = split(k->forward(x));
  auto vh = split(v->forward(x));
  auto scores = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd));
  auto out = torch::matmul(torch::softmax(scores, -1), vh);
  return proj->forward(out.transpose(1, 2).reshape({b, n, d}));
}

BlockImpl::BlockImpl(std::int64_t dim, std::int64_t heads, double mlp_ratio) {
  const auto hidden = static_cast<std::int64_t>(std::llround(dim * mlp_ratio));
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
  attn = register_module("attn", Attention(dim, heads));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}).eps(1e-6)));
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor BlockImpl::forward(const torch::Tensor& x) {
  auto h = x + attn->forward(norm1->forward(x));
  return h + fc2->forward(torch::gelu(fc1->forward(norm2->forward(h))));
}

std::int64_t param_count(const torch::nn::Module& module, bool trainable_only) {
  std::int64_t total = 0;
  for (const auto& p : module.parameters(/*recurse=*/true)) {
    if (!trainable_only || p.requires_grad()) total += p.numel();
  }
  return total;
}

void init_vit_weights(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* lin = m->as<torch::nn::Linear>()) {
      torch::nn::init::normal_(lin->weight, 0.0, 0.02);
      if (lin->bias.defined()) lin->bias.zero_();
    } else if (auto* ln = m->as<torch::nn::LayerNorm>()) {
      ln->weight.fill_(1.0);
      ln->bias.zero_();
    }
  }
}

}  // namespace tskd
