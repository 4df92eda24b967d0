#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "tskd/core/rng.hpp"

namespace tskd {

struct ViTEncoderConfig {
  std::int64_t image_size = 64;
  std::int64_t patch_size = 8;
  std::int64_t in_channels = 1;
  std::int64_t embed_dim = 64;
  std::int64_t depth = 4;
  std::int64_t heads = 4;
  double mlp_ratio = 2.0;

  std::int64_t grid() const { return image_size / patch_size; }
  std::int64_t tokens() const { return grid() * grid(); }
  /// Throws ConfigError on indivisible sizes or non-positive fields.
  void validate() const;

  bool operator==(const ViTEncoderConfig&) const = default;
};

enum class OptimizerKind { adam, adamw };
enum class DecayKind { cosine, none };

/// Optimization schedule for one training stage.
struct Schedule {
  OptimizerKind optimizer = OptimizerKind::adamw;
  double base_lr = 1e-4;
  double weight_decay = 0.05;
  std::int64_t warmup_iters = 0;
  std::int64_t epochs = 160;
  std::int64_t batch_size = 6;
  DecayKind decay = DecayKind::cosine;
  double grad_clip = 1.0;
  /// Hard cap on optimizer steps; 0 means epochs alone decide.
  std::int64_t max_iters = 0;

  void validate(const std::string& stage) const;
  /// Same schedule with epochs (at least 1) and warmup divided by `factor`.
  Schedule scaled_epochs(std::int64_t factor) const;
  /// Optimizer steps for a dataset of `n` samples.
  std::int64_t total_iters(std::int64_t n) const;
};

nlohmann::json schedule_to_json(const Schedule& s);

enum class Method { scratch, imagenet_mae, moco, mae, ta_kd, ts_kd };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
/// ta_kd and ts_kd both need a teacher; only ts_kd needs it LoRA-adapted.
bool method_needs_finetuned_teacher(Method m);

enum class LoraScope { encoder_only, encoder_and_decoder };
enum class MaeLossScope { masked_only, all };

struct ExperimentConfig {
  std::uint64_t seed = kDefaultSeed;
  Method method = Method::ts_kd;
  std::int64_t label_budget = 16;
  std::int64_t transfer_size = 300;
  std::int64_t lora_rank = 4;
  std::string distillation = "TS-KD8";

  // data
  std::int64_t class_count = 3;
  double pixel_spacing = 1.0;
  bool normalize_intensity = false;

  ViTEncoderConfig student;
  ViTEncoderConfig teacher{64, 8, 1, 128, 8, 4, 2.0};
  std::int64_t fpn_channels = 32;

  LoraScope lora_scope = LoraScope::encoder_and_decoder;
  bool lora_query = true;
  bool lora_value = true;

  double moco_temperature = 0.2;
  double moco_momentum = 0.99;
  std::int64_t moco_queue = 256;
  std::int64_t moco_dim = 64;

  double mae_mask_ratio = 0.75;
  MaeLossScope mae_loss_scope = MaeLossScope::masked_only;

  std::int64_t diffusion_steps_T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::int64_t denoiser_dim = 64;
  std::int64_t denoiser_depth = 3;
  std::int64_t denoiser_patch = 8;

  std::map<std::string, Schedule> schedules = default_schedules();

  static std::map<std::string, Schedule> default_schedules();

  const Schedule& schedule(const std::string& stage) const;
  /// Throws ValidationError describing the first violated invariant.
  void validate() const;
  /// Divides every stage's epoch count and warmup by 20.
  ExperimentConfig desk() const;

  nlohmann::json to_json() const;
  /// Overlays the keys present in `j` on top of `base`.
  static ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base);
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Stable hex hash of the canonical JSON form.
  std::string hash() const;
};

std::string hash_json(const nlohmann::json& j);

}  // namespace tskd
