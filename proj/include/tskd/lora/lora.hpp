#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "tskd/core/checkpoint.hpp"
#include "tskd/core/config.hpp"

namespace tskd::lora {

/// One adapter as plain tensors (shares storage with the module).
struct AdapterPair {
  torch::Tensor A;  // d×r
  torch::Tensor B;  // r×d
  std::int64_t rank = 0;
  std::string target_name;

  torch::Tensor delta() const { return torch::matmul(A, B); }
};

struct LoRAConfig {
  std::int64_t rank = 4;
  bool query = true;
  bool value = true;
  LoraScope scope = LoraScope::encoder_and_decoder;
  /// When nonempty, adapt exactly these projections instead of matching
  /// query/value by name.
  std::vector<std::string> explicit_targets;

  static LoRAConfig from_experiment(const ExperimentConfig& cfg);
};

/// Dotted names of every projection that can carry an adapter.
std::vector<std::string> adaptable_names(torch::nn::Module& model);

/// Names `inject` would adapt under `cfg`.
std::vector<std::string> select_targets(torch::nn::Module& model, const LoRAConfig& cfg);

/// Freezes every existing parameter of `model` and attaches one adapter per
/// selected projection, A ~ N(0, 0.01²) and B = 0 so the adapted function
/// equals the base function. Returns the adapted names.
std::vector<std::string> inject(torch::nn::Module& model, const LoRAConfig& cfg, std::uint64_t init_seed);

/// Folds W := W₀ + A·B into every adapted projection and removes the
/// adapters. Throws ValidationError when no adapter is attached.
void merge(torch::nn::Module& model);

std::vector<AdapterPair> adapters(torch::nn::Module& model);
bool has_adapters(torch::nn::Module& model);

struct TrainableReport {
  std::int64_t base_frozen_count = 0;  // non-adapter parameters
  std::int64_t adapter_count = 0;
  double ratio = 0.0;                  // adapter_count / base_frozen_count
};
TrainableReport trainable_parameter_report(torch::nn::Module& model);

/// Σ 2·d·r over the targets `inject` would create.
std::int64_t expected_adapter_params(torch::nn::Module& model, const LoRAConfig& cfg);

/// Adapter tensors keyed `lora/<target>/A` and `lora/<target>/B`.
std::map<std::string, torch::Tensor> adapter_tensors(torch::nn::Module& model);

/// Whole-model bundle where adapter tensors use the `lora/<target>/{A,B}`
/// names and base tensors keep their dotted names.
CheckpointBundle to_bundle(torch::nn::Module& model, CheckpointMetadata metadata);
/// Inverse of to_bundle: attaches adapters named in the bundle, then loads
/// every tensor strictly.
void load_bundle(torch::nn::Module& model, const CheckpointBundle& bundle);

}  // namespace tskd::lora
