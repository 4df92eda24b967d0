#include "tskd/trainer/study.hpp"

#include "tskd/core/checkpoint.hpp"
#include "tskd/core/dataset.hpp"
#include "tskd/core/shapes.hpp"
#include "tskd/error.hpp"

namespace tskd::trainer {

DeskStudy DeskStudy::defaults() {
  DeskStudy s;
  s.experiment.teacher = ViTEncoderConfig{64, 8, 1, 96, 6, 4, 2.0};
  s.experiment.class_count = 3;
  s.teacher_base = {OptimizerKind::adamw, 1e-3, 0.05, 50, 16, 32, DecayKind::cosine, 1.0};
  s.teacher_lora = {OptimizerKind::adamw, 5e-3, 0.01, 10, 40, 8, DecayKind::cosine, 1.0};
  s.distill = {OptimizerKind::adam, 1e-3, 0.0, 20, 20, 16, DecayKind::cosine, 1.0};
  s.ssl = {OptimizerKind::adamw, 1e-3, 0.05, 20, 20, 32, DecayKind::cosine, 1.0};
  s.finetune = {OptimizerKind::adamw, 1e-3, 0.05, 0, 60, 6, DecayKind::cosine, 1.0};
  return s;
}

nlohmann::json DeskStudy::to_json() const {
  return {{"experiment", experiment.to_json()},
          {"foundation_size", foundation_size},
          {"foundation_seed", foundation_seed},
          {"pool_size", pool_size},
          {"pool_seed", pool_seed},
          {"test_size", test_size},
          {"teacher_labels", teacher_labels},
          {"transfer_seed", transfer_seed},
          {"teacher_seed", teacher_seed},
          {"teacher_base", schedule_to_json(teacher_base)},
          {"teacher_lora", schedule_to_json(teacher_lora)},
          {"distill", schedule_to_json(distill)},
          {"ssl", schedule_to_json(ssl)},
          {"finetune", schedule_to_json(finetune)}};
}

DeskData make_desk_data(const DeskStudy& study) {
  const auto size = study.experiment.student.image_size;
  auto foundation = make_shapes_dataset(ShapesTask::foundation, study.foundation_size, study.foundation_seed, size);
  auto pool = make_shapes_dataset(ShapesTask::target, study.pool_size, study.pool_seed, size);
  auto [test, train] = split_holdout(pool, study.test_size, 1);
  return {std::move(foundation), std::move(train), std::move(test)};
}

DeskTeacher prepare_desk_teacher(const DeskStudy& study, const DeskData& data) {
  const auto& enc = study.experiment.teacher;
  auto base = pretrain_teacher_base(make_teacher(enc, data.foundation.class_count(), study.teacher_seed),
                                    data.foundation, study.teacher_base, study.teacher_seed);
  auto teacher = make_teacher(enc, data.train.class_count(), study.teacher_seed);
  transfer_teacher_base(teacher, bundle_from_module(*base.model));
  auto labeled = subset_labels(data.train, study.teacher_labels, study.teacher_seed);
  auto adapted = finetune_teacher_lora(teacher, labeled, lora::LoRAConfig::from_experiment(study.experiment),
                                       study.teacher_lora, study.teacher_seed);
  auto report = evaluate_predictions(predict(adapted.model, data.test.image_batch()), data.test,
                                     study.experiment.pixel_spacing);
  return {std::move(base), std::move(adapted), std::move(report)};
}

TransferSet desk_transfer(const DeskStudy& study, std::int64_t count) {
  return make_shapes_images(ShapesTask::target, count, study.transfer_seed, study.experiment.student.image_size);
}

DeskCell run_desk_cell(const DeskStudy& study, const DeskData& data, const DeskTeacher& teacher, Method method,
                       std::int64_t transfer_size, std::int64_t label_budget, std::uint64_t seed) {
  DeskCell cell;
  cell.method = method;
  cell.transfer_size = method == Method::scratch ? 0 : transfer_size;
  cell.label_budget = label_budget;
  cell.seed = seed;
  if (method != Method::scratch && transfer_size < 1) {
    throw ValidationError("method " + to_string(method) + " needs a nonempty transfer set");
  }
  auto student = make_student(study.experiment, seed);
  const auto& cfg = study.experiment;
  switch (method) {
    case Method::scratch:
      break;
    case Method::imagenet_mae: {
      // Generic-data checkpoint: MAE on the foundation images, then partial init.
      TransferSet generic{{}, Provenance::procedural};
      for (std::int64_t i = 0; i < transfer_size && i < static_cast<std::int64_t>(data.foundation.size()); ++i) {
        generic.images.push_back(data.foundation[static_cast<std::size_t>(i)].image);
      }
      auto donor = pretrain_mae(make_student(cfg, seed ^ 0x5a5aULL), generic, study.ssl,
                                {cfg.mae_mask_ratio, cfg.mae_loss_scope, 32}, seed);
      init_from_checkpoint(student, bundle_from_module(*donor.model));
      cell.pretrain = donor.record;
      break;
    }
    case Method::moco: {
      auto r = pretrain_moco(student, desk_transfer(study, transfer_size), study.ssl,
                             {cfg.moco_temperature, cfg.moco_momentum, cfg.moco_queue, cfg.moco_dim}, seed);
      cell.pretrain = r.record;
      break;
    }
    case Method::mae: {
      auto r = pretrain_mae(student, desk_transfer(study, transfer_size), study.ssl,
                            {cfg.mae_mask_ratio, cfg.mae_loss_scope, 32}, seed);
      cell.pretrain = r.record;
      break;
    }
    case Method::ta_kd: {
      auto r = pretrain_ta_kd(student, teacher.base.model, desk_transfer(study, transfer_size), study.distill, seed);
      cell.pretrain = r.record;
      break;
    }
    case Method::ts_kd: {
      auto r = pretrain_ts_kd(student, teacher.adapted.model, desk_transfer(study, transfer_size),
                              DistillationConfig::preset(cfg.distillation), study.distill, seed);
      cell.pretrain = r.record;
      break;
    }
  }
  auto labeled = subset_labels(data.train, label_budget, seed);
  auto tuned = finetune_student(student, labeled, study.finetune, seed);
  cell.finetune = tuned.record;
  cell.report = evaluate_predictions(predict(tuned.model, data.test.image_batch()), data.test, cfg.pixel_spacing);
  return cell;
}

}  // namespace tskd::trainer
