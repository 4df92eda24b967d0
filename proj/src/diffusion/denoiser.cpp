#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "tskd/core/rng.hpp"
#include "tskd/diffusion/diffusion.hpp"
#include "tskd/error.hpp"

namespace tskd::diffusion {

torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim) {
  if (dim < 2 || dim % 2 != 0) throw ValidationError("timestep embedding dim must be even and >= 2");
  const auto half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat) / static_cast<double>(half));
  auto args = t.to(torch::kFloat).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

void DenoiserConfig::validate() const {
  if (image_size < 1 || channels < 1 || patch_size < 1 || dim < 1 || depth < 0 || heads < 1) {
    throw ValidationError("denoiser sizes must be positive");
  }
  if (image_size % patch_size != 0) throw ValidationError("denoiser patch size must divide image size");
  if (dim % heads != 0) throw ValidationError("denoiser dim must be divisible by heads");
  if (time_dim < 2 || time_dim % 2 != 0) throw ValidationError("denoiser time_dim must be even");
}

DenoiserConfig DenoiserConfig::from_experiment(const ExperimentConfig& cfg, std::int64_t channels) {
  DenoiserConfig d;
  d.image_size = cfg.student.image_size;
  d.channels = channels;
  d.patch_size = cfg.denoiser_patch;
  d.dim = cfg.denoiser_dim;
  d.depth = cfg.denoiser_depth;
  d.time_dim = cfg.denoiser_dim;
  d.validate();
  return d;
}

DenoiserImpl::DenoiserImpl(DenoiserConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto p2c = cfg_.patch_size * cfg_.patch_size * cfg_.channels;
  const auto tokens = (cfg_.image_size / cfg_.patch_size) * (cfg_.image_size / cfg_.patch_size);
  patch_in = register_module("patch_in", torch::nn::Linear(p2c, cfg_.dim));
  time_fc1 = register_module("time_fc1", torch::nn::Linear(cfg_.time_dim, cfg_.dim));
  time_fc2 = register_module("time_fc2", torch::nn::Linear(cfg_.dim, cfg_.dim));
  pos_embed = register_parameter("pos_embed", torch::randn({1, tokens, cfg_.dim}) * 0.02);
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < cfg_.depth; ++i) blocks->push_back(Block(cfg_.dim, cfg_.heads, 2.0));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.dim})));
  patch_out = register_module("patch_out", torch::nn::Linear(cfg_.dim, p2c));
  init_vit_weights(*this);
  torch::NoGradGuard ng;
  patch_out->weight.zero_();
  patch_out->bias.zero_();
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& x_t, const torch::Tensor& t) {
  const auto B = x_t.size(0);
  const auto C = cfg_.channels, S = cfg_.image_size, P = cfg_.patch_size, g = S / P;
  if (x_t.dim() != 4 || x_t.size(1) != C || x_t.size(2) != S || x_t.size(3) != S) {
    throw ConfigError("denoiser expects B×" + std::to_string(C) + "×" + std::to_string(S) + "×" +
                      std::to_string(S) + " input");
  }
  auto patches = x_t.reshape({B, C, g, P, g, P}).permute({0, 2, 4, 1, 3, 5}).reshape({B, g * g, C * P * P});
  auto h = patch_in->forward(patches) + pos_embed;
  auto temb = time_fc2->forward(torch::gelu(time_fc1->forward(timestep_embedding(t, cfg_.time_dim))));
  h = h + temb.unsqueeze(1);
  for (auto& m : *blocks) h = m->as<BlockImpl>()->forward(h);
  auto out = patch_out->forward(norm->forward(h));
  return out.reshape({B, g, g, C, P, P}).permute({0, 3, 1, 4, 2, 5}).reshape({B, C, S, S});
}

DenoiserTraining train_denoiser(const torch::Tensor& images, const DenoiserConfig& cfg,
                                const DiffusionSchedule& sched, std::int64_t steps, std::uint64_t seed,
                                std::int64_t batch_size, double lr) {
  if (images.dim() != 4 || images.size(0) < 1) throw ValidationError("denoiser training needs N×C×S×S images");
  if (steps < 1 || batch_size < 1) throw ValidationError("steps and batch size must be >= 1");
  const SeedStream seeds(seed);
  torch::manual_seed(seeds.derive("denoiser_init"));
  DenoiserTraining out;
  out.model = Denoiser(cfg);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seeds.derive("denoiser_noise"));
  torch::optim::AdamW opt(out.model->parameters(), torch::optim::AdamWOptions(lr).weight_decay(0.0));
  const auto data = images.to(torch::kFloat) * 2.0 - 1.0;
  const auto n = data.size(0);
  const auto b = std::min(batch_size, n);
  auto order_rng = seeds.engine("denoiser_order");
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::size_t cursor = order.size();
  out.model->train();
  for (std::int64_t step = 0; step < steps; ++step) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < b; ++i) {
      if (cursor == order.size()) {
        for (std::int64_t k = 0; k < n; ++k) order[k] = k;
        deterministic_shuffle(order, order_rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    auto x0 = data.index_select(0, torch::tensor(idx, torch::kLong));
    auto t = torch::randint(1, sched.T() + 1, {b}, gen, torch::kLong);
    auto eps = torch::randn(x0.sizes(), gen, torch::kFloat);
    std::vector<float> sa(b), sb(b);
    for (std::int64_t i = 0; i < b; ++i) {
      const double ab = sched.alpha_bar(t[i].item<std::int64_t>());
      sa[i] = static_cast<float>(std::sqrt(ab));
      sb[i] = static_cast<float>(std::sqrt(1.0 - ab));
    }
    auto ca = torch::tensor(sa).view({b, 1, 1, 1});
    auto cb = torch::tensor(sb).view({b, 1, 1, 1});
    auto x_t = ca * x0 + cb * eps;
    auto loss = torch::mse_loss(out.model->forward(x_t, t), eps);
    const double v = loss.item<double>();
    if (!std::isfinite(v)) throw NumericalError("denoiser loss became non-finite at step " + std::to_string(step));
    opt.zero_grad();
    loss.backward();
    opt.step();
    out.losses.push_back(v);
  }
  out.model->eval();
  return out;
}

EpsilonPredictor predictor(Denoiser model) {
  return [model](const torch::Tensor& x_t, std::int64_t t) mutable {
    torch::NoGradGuard ng;
    auto tt = torch::full({x_t.size(0)}, t, torch::kLong);
    return model->forward(x_t, tt);
  };
}

TransferSet sample(const EpsilonPredictor& eps_model, const DiffusionSchedule& sched, std::int64_t count,
                   std::uint64_t seed, std::int64_t channels, std::int64_t size, std::int64_t batch) {
  if (count < 0 || channels < 1 || size < 1 || batch < 1) throw ValidationError("invalid sampling request");
  const SeedStream seeds(seed);
  TransferSet set;
  set.provenance = Provenance::diffusion_sampled;
  torch::NoGradGuard ng;
  for (std::int64_t start = 0; start < count; start += batch) {
    const auto nb = std::min(batch, count - start);
    std::vector<at::Generator> gens;
    std::vector<torch::Tensor> init;
    for (std::int64_t i = 0; i < nb; ++i) {
      gens.push_back(at::make_generator<at::CPUGeneratorImpl>(seeds.derive("sample", start + i)));
      init.push_back(torch::randn({channels, size, size}, gens.back(), torch::kFloat));
    }
    auto x = torch::stack(init);
    for (std::int64_t t = sched.T(); t >= 1; --t) {
      auto mean = posterior_mean(x, eps_model(x, t), t, sched);
      if (t > 1) {
        std::vector<torch::Tensor> z;
        for (auto& g : gens) z.push_back(torch::randn({channels, size, size}, g, torch::kFloat));
        x = mean + std::sqrt(sched.sigma2(t)) * torch::stack(z);
      } else {
        x = mean;
      }
    }
    auto imgs = ((x + 1.0) * 0.5).clamp(0.0, 1.0).permute({0, 2, 3, 1}).contiguous();
    for (std::int64_t i = 0; i < nb; ++i) set.images.push_back(imgs[i].clone());
  }
  return set;
}

}  // namespace tskd::diffusion
