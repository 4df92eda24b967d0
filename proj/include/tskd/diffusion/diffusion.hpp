#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "tskd/core/config.hpp"
#include "tskd/core/sample.hpp"
#include "tskd/models/layers.hpp"

namespace tskd::diffusion {

/// Per-step coefficients, 1-indexed by t ∈ [1,T]; index 0 holds ᾱ₀ = 1.
class DiffusionSchedule {
 public:
  /// β_t linear from beta_start to beta_end, α_t = 1 − β_t.
  static DiffusionSchedule linear(std::int64_t T, double beta_start = 1e-4, double beta_end = 0.02);
  /// α_t given directly for t = 1..T; each must lie in (0,1].
  static DiffusionSchedule from_alphas(std::vector<double> alphas);

  std::int64_t T() const { return static_cast<std::int64_t>(alpha_.size()) - 1; }
  double alpha(std::int64_t t) const { return alpha_.at(check(t)); }
  double beta(std::int64_t t) const { return 1.0 - alpha(t); }
  double alpha_bar(std::int64_t t) const;
  /// σ_t² = β_t.
  double sigma2(std::int64_t t) const { return beta(t); }
  /// ᾱ_t / (1 − ᾱ_t).
  double snr(std::int64_t t) const;
  std::string hash() const;

 private:
  explicit DiffusionSchedule(std::vector<double> alphas);
  std::int64_t check(std::int64_t t) const;
  std::vector<double> alpha_;      // [0] unused
  std::vector<double> alpha_bar_;  // [0] = 1
};

/// Closed form x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε.
torch::Tensor q_sample(const torch::Tensor& x0, std::int64_t t, const torch::Tensor& eps,
                       const DiffusionSchedule& sched);
/// One forward step x_t = √α_t·x_{t−1} + √(1−α_t)·ε.
torch::Tensor q_step(const torch::Tensor& x_prev, std::int64_t t, const torch::Tensor& eps,
                     const DiffusionSchedule& sched);

/// Sinusoidal embedding of integer timesteps, B → B×dim.
torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim);

struct DenoiserConfig {
  std::int64_t image_size = 64;
  std::int64_t channels = 1;
  std::int64_t patch_size = 8;
  std::int64_t dim = 64;
  std::int64_t depth = 3;
  std::int64_t heads = 4;
  std::int64_t time_dim = 64;

  void validate() const;
  static DenoiserConfig from_experiment(const ExperimentConfig& cfg, std::int64_t channels);
};

/// Plain transformer over image patches, conditioned on the timestep by an
/// additive embedding; predicts the injected noise ε.
class DenoiserImpl : public torch::nn::Module {
 public:
  explicit DenoiserImpl(DenoiserConfig cfg);
  /// x_t: B×C×S×S in the model's [−1,1] space; t: B int64.
  torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t);
  const DenoiserConfig& config() const { return cfg_; }

  torch::nn::Linear patch_in{nullptr}, time_fc1{nullptr}, time_fc2{nullptr}, patch_out{nullptr};
  torch::Tensor pos_embed;
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr};

 private:
  DenoiserConfig cfg_;
};
TORCH_MODULE(Denoiser);

struct DenoiserTraining {
  Denoiser model{nullptr};
  std::vector<double> losses;
};

/// ε-prediction MSE training on `images` (N×C×S×S in [0,1]). Deterministic
/// in `seed`; throws NumericalError on a non-finite loss.
DenoiserTraining train_denoiser(const torch::Tensor& images, const DenoiserConfig& cfg,
                                const DiffusionSchedule& sched, std::int64_t steps, std::uint64_t seed,
                                std::int64_t batch_size = 16, double lr = 1e-3);

/// ε̂(x_t, t) for a whole batch at a single timestep.
using EpsilonPredictor = std::function<torch::Tensor(const torch::Tensor& x_t, std::int64_t t)>;

EpsilonPredictor predictor(Denoiser model);

/// μ_θ = (x_t − (1−α_t)/√(1−ᾱ_t)·ε̂) / √α_t.
torch::Tensor posterior_mean(const torch::Tensor& x_t, const torch::Tensor& eps_hat, std::int64_t t,
                             const DiffusionSchedule& sched);

/// Ancestral sampling from x_T ~ N(0,I) to x₀, one noise stream per image
/// (image i depends only on seed and i). Outputs are mapped from [−1,1]
/// to [0,1] and clipped. Images are H×W×channels.
TransferSet sample(const EpsilonPredictor& eps_model, const DiffusionSchedule& sched, std::int64_t count,
                   std::uint64_t seed, std::int64_t channels, std::int64_t size, std::int64_t batch = 64);

struct AugmentationSpec {
  double rotation_min_deg = 0.0;
  double rotation_max_deg = 0.0;
  double scale_min = 1.0;
  double scale_max = 1.0;
  double shear_min_deg = 0.0;
  double shear_max_deg = 0.0;
  double translate_max = 0.0;  // fraction of the image size, symmetric
  std::int64_t count = 0;

  /// Throws ValidationError on min > max or non-finite ranges.
  void validate() const;
  static AugmentationSpec identity(std::int64_t count);
  /// Rotation ±30°, scale 0.85–1.15, shear ±10°, translate ±10%.
  static AugmentationSpec standard(std::int64_t count);
};

/// Emits exactly spec.count images; output i warps source i mod |sources|
/// by a transform drawn uniformly from the spec ranges.
TransferSet augment_base_set(const std::vector<torch::Tensor>& sources, const AugmentationSpec& spec,
                             std::uint64_t seed);

/// 2×3 affine matrix rotating/scaling/shearing about the image center.
/// Right-angle rotations produce exact integer coefficients.
std::array<double, 6> affine_matrix(double rotation_deg, double scale, double shear_deg, double tx, double ty,
                                    std::int64_t size);
torch::Tensor warp_image(const torch::Tensor& image, const std::array<double, 6>& m);

struct TransferQuality {
  double mean_psnr = 0.0;
  double mean_mse = 0.0;
  std::vector<std::int64_t> matched_reference;  // per transfer image
};

/// Each transfer image is matched to the reference with minimum MSE (on the
/// 8-bit scale) and PSNR/MSE are averaged over the transfer set.
TransferQuality evaluate_transfer(const TransferSet& transfer, const std::vector<torch::Tensor>& reference);

struct TransferManifest {
  std::int64_t count = 0;
  Provenance provenance = Provenance::augmented;
  std::uint64_t seed = 0;
  std::string schedule_hash;
};

/// Writes 00000.png, 00001.png, ... plus manifest.json.
void save_transfer_set(const TransferSet& set, const TransferManifest& manifest, const std::filesystem::path& dir);
TransferSet load_transfer_set(const std::filesystem::path& dir, TransferManifest* manifest = nullptr);

}  // namespace tskd::diffusion
