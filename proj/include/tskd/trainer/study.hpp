#pragma once

#include <cstdint>
#include <string>

#include "tskd/core/config.hpp"
#include "tskd/core/sample.hpp"
#include "tskd/trainer/trainer.hpp"

namespace tskd::trainer {

/// Desk-scale end-to-end experiment on the procedural shapes tasks: a
/// foundation-pretrained teacher, its LoRA adaptation to the target task and
/// student pipelines compared on a held-out target test split.
struct DeskStudy {
  ExperimentConfig experiment;
  std::int64_t foundation_size = 3000;
  std::uint64_t foundation_seed = 99;
  std::int64_t pool_size = 400;
  std::uint64_t pool_seed = 7;
  std::int64_t test_size = 200;
  std::int64_t teacher_labels = 64;
  std::uint64_t transfer_seed = 555;
  std::uint64_t teacher_seed = 1;
  Schedule teacher_base;
  Schedule teacher_lora;
  Schedule distill;
  Schedule ssl;
  Schedule finetune;

  /// Schedules and sizes tuned to finish the standard comparison on one CPU.
  static DeskStudy defaults();
  nlohmann::json to_json() const;
};

struct DeskData {
  LabeledDataset foundation;
  LabeledDataset train;
  LabeledDataset test;
};

DeskData make_desk_data(const DeskStudy& study);

struct DeskTeacher {
  TrainedTeacher base;
  TrainedTeacher adapted;
  metrics::MetricsReport adapted_report;
};

/// Foundation pretraining, base transfer and LoRA fine-tuning on
/// `teacher_labels` target labels.
DeskTeacher prepare_desk_teacher(const DeskStudy& study, const DeskData& data);

struct DeskCell {
  Method method = Method::scratch;
  std::int64_t transfer_size = 0;
  std::int64_t label_budget = 0;
  std::uint64_t seed = 0;
  std::optional<RunRecord> pretrain;
  RunRecord finetune;
  metrics::MetricsReport report;
};

/// Transfer images for a cell; nested in `count` for a fixed study.
TransferSet desk_transfer(const DeskStudy& study, std::int64_t count);

/// One student: optional pretraining on `transfer_size` images, fine-tuning
/// on `label_budget` labels, evaluation on the test split.
DeskCell run_desk_cell(const DeskStudy& study, const DeskData& data, const DeskTeacher& teacher, Method method,
                       std::int64_t transfer_size, std::int64_t label_budget, std::uint64_t seed);

}  // namespace tskd::trainer
