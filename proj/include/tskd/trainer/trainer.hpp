#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "tskd/core/checkpoint.hpp"
#include "tskd/core/config.hpp"
#include "tskd/core/sample.hpp"
#include "tskd/losses/losses.hpp"
#include "tskd/lora/lora.hpp"
#include "tskd/metrics/metrics.hpp"
#include "tskd/models/models.hpp"

namespace tskd::trainer {

/// Learning rate at optimizer step k (0-based) of a run lasting `total`
/// steps: linear ramp base·(k+1)/warmup for k < warmup, then cosine from base
/// to 0 over the remaining steps (constant base when decay is none).
double learning_rate(const Schedule& s, std::int64_t k, std::int64_t total);

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const Schedule& s, std::vector<torch::Tensor> params);
void set_learning_rate(torch::optim::Optimizer& opt, double lr);

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`; parameters without a gradient are ignored. Returns the norm
/// before clipping.
double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm);

struct DistillationConfig {
  std::string name;
  losses::DecoderLossKind decoder_kind = losses::DecoderLossKind::none;
  losses::MaskMode mask_mode = losses::MaskMode::interpolated;
  bool use_hidden = true;
  double w_decoder = 0.0;
  double w_hidden = 1.0;

  /// Throws ValidationError when the fields contradict each other.
  void validate() const;
  nlohmann::json to_json() const;

  /// TS-KD1 … TS-KD8 and TA-KD with the weights of the KD summary table.
  static DistillationConfig preset(const std::string& name);
  static std::vector<std::string> preset_names();
};

/// Outcome of one pipeline stage. Everything except `wall_clock_s` is a
/// deterministic function of config, seed and data.
struct RunRecord {
  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json params;
  std::map<std::string, std::vector<double>> curves;
  double wall_clock_s = 0.0;
  std::string checkpoint_id;
  std::string metrics_id;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
  /// Columns iter,<curve names...>; one row per logged step.
  std::string curves_csv() const;
};

/// Seeded model construction (initialization drawn from the "init" stream).
StudentModel make_student(const ExperimentConfig& cfg, std::uint64_t seed);
TeacherModel make_teacher(const ViTEncoderConfig& enc, std::int64_t classes, std::uint64_t seed);

struct TrainedTeacher {
  TeacherModel model{nullptr};
  RunRecord record;
};

/// Supervised training of every teacher parameter on a broad labeled task:
/// λ₁·CE + λ₂·Dice on the class channels plus a binary objectness term on
/// the extra channel. Stands in for foundation-model pretraining.
TrainedTeacher pretrain_teacher_base(TeacherModel teacher, const LabeledDataset& data, const Schedule& sched,
                                     std::uint64_t seed);

/// Copies matching base-teacher tensors into a fresh target-task teacher;
/// the class head is reinitialized because its class count differs.
PartialLoadReport transfer_teacher_base(TeacherModel target, const CheckpointBundle& base);

/// Injects adapters, then trains the adapters and the decoder class head
/// on 0.2·CE + 0.8·Dice over upsampled logits. The encoder/decoder base and
/// the objectness head stay frozen. On a non-finite loss the last good
/// parameters are restored and NumericalError is thrown.
TrainedTeacher finetune_teacher_lora(TeacherModel teacher, const LabeledDataset& labeled,
                                     const lora::LoRAConfig& lora_cfg, const Schedule& sched, std::uint64_t seed);

struct TrainedStudent {
  StudentModel model{nullptr};
  RunRecord record;
};

/// Encoder-only distillation (hidden loss alone) from the teacher; the
/// student head is not touched.
TrainedStudent pretrain_ta_kd(StudentModel student, TeacherModel teacher, const TransferSet& transfer,
                              const Schedule& sched, std::uint64_t seed);

/// Dual-level distillation from a LoRA-adapted teacher. Throws ConfigError
/// when the teacher was not task-adapted.
TrainedStudent pretrain_ts_kd(StudentModel student, TeacherModel teacher, const TransferSet& transfer,
                              const DistillationConfig& dcfg, const Schedule& sched, std::uint64_t seed);

struct MocoOptions {
  double temperature = 0.2;
  double momentum = 0.99;
  std::int64_t queue_size = 256;
  std::int64_t embed_dim = 64;
};

/// Contrastive pretraining of the student encoder against a momentum key
/// encoder and a queue of negatives. Projection/prediction heads are
/// discarded. The record carries the "loss" curve.
TrainedStudent pretrain_moco(StudentModel student, const TransferSet& transfer, const Schedule& sched,
                             const MocoOptions& opts, std::uint64_t seed);

struct MaeOptions {
  double mask_ratio = 0.75;
  MaeLossScope scope = MaeLossScope::masked_only;
  std::int64_t decoder_dim = 32;
};

/// Masked-image reconstruction pretraining of the student encoder with a
/// lightweight decoder discarded afterwards.
TrainedStudent pretrain_mae(StudentModel student, const TransferSet& transfer, const Schedule& sched,
                            const MaeOptions& opts, std::uint64_t seed);

/// Partial initialization from a pretrained checkpoint (matching names and
/// shapes only).
PartialLoadReport init_from_checkpoint(StudentModel student, const CheckpointBundle& bundle);

/// Full student training on λ₁·CE + λ₂·Dice. Random flips are applied to
/// each batch. Throws NumericalError on a non-finite loss.
TrainedStudent finetune_student(StudentModel student, const LabeledDataset& labeled, const Schedule& sched,
                                std::uint64_t seed);

/// Argmax predictions at full resolution, N×H×W int64.
torch::Tensor predict(StudentModel student, const torch::Tensor& images, std::int64_t batch = 64);
torch::Tensor predict(TeacherModel teacher, const torch::Tensor& images, std::int64_t batch = 64);

metrics::MetricsReport evaluate_predictions(const torch::Tensor& predicted, const LabeledDataset& reference,
                                            double spacing = 1.0);

struct RankSweepRow {
  std::int64_t rank = 0;
  double mean_dice = 0.0;
  double mean_hd95 = 0.0;
  std::int64_t trainable_params = 0;
};

struct RankSweepResult {
  std::vector<RankSweepRow> rows;
  std::int64_t selected_rank = 0;  // argmax mean Dice, smallest rank on ties

  std::string to_csv() const;
};

/// One LoRA fine-tune per rank from the same base weights and seed,
/// evaluated on `validation`.
RankSweepResult lora_rank_sweep(const CheckpointBundle& teacher_base, const ViTEncoderConfig& enc,
                                std::int64_t classes, const LabeledDataset& labeled,
                                const LabeledDataset& validation, const std::vector<std::int64_t>& ranks,
                                const lora::LoRAConfig& lora_cfg, const Schedule& sched, std::uint64_t seed);

/// Trailing moving average with window `w` (shorter at the start).
std::vector<double> smooth(const std::vector<double>& v, std::size_t w);

}  // namespace tskd::trainer
