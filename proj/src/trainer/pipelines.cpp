#include <algorithm>

#include "detail.hpp"
#include "tskd/error.hpp"
#include "tskd/models/layers.hpp"
#include "tskd/trainer/trainer.hpp"

namespace tskd::trainer {

namespace F = torch::nn::functional;

namespace {

nlohmann::json base_params(const std::string& stage, const Schedule& sched, std::int64_t iters, std::int64_t n) {
  return {{"stage", stage}, {"schedule", schedule_to_json(sched)}, {"iterations", iters}, {"samples", n}};
}

void finish(RunRecord& r, const detail::Stopwatch& clock) {
  r.config_hash = hash_json(r.params);
  r.wall_clock_s = clock.seconds();
}

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
  std::vector<torch::Tensor> out;
  for (const auto& p : params) out.push_back(p.detach().clone());
  return out;
}

void restore(const std::vector<torch::Tensor>& params, const std::vector<torch::Tensor>& saved) {
  torch::NoGradGuard ng;
  for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(saved[i]);
}

}  // namespace

StudentModel make_student(const ExperimentConfig& cfg, std::uint64_t seed) {
  torch::manual_seed(SeedStream(seed).derive("init_student"));
  return StudentModel(cfg.student, cfg.class_count, cfg.fpn_channels);
}

TeacherModel make_teacher(const ViTEncoderConfig& enc, std::int64_t classes, std::uint64_t seed) {
  torch::manual_seed(SeedStream(seed).derive("init_teacher"));
  return TeacherModel(enc, classes);
}

TrainedTeacher pretrain_teacher_base(TeacherModel teacher, const LabeledDataset& data, const Schedule& sched,
                                     std::uint64_t seed) {
  sched.validate("teacher_base");
  if (data.size() == 0) throw ValidationError("teacher pretraining needs labeled data");
  detail::Stopwatch clock;
  const SeedStream seeds(seed);
  const auto images = data.image_batch();
  const auto masks = data.mask_batch();
  const auto n = images.size(0);
  const auto size = images.size(2);
  const auto iters = sched.total_iters(n);
  auto params = detail::trainable(teacher->parameters());
  auto opt = make_optimizer(sched, params);
  detail::EpochBatches batches(n, sched.batch_size, seeds.engine("data_order"));
  auto flip_rng = seeds.engine("flip");
  TrainedTeacher out{teacher, {}};
  out.record.stage = "teacher_base";
  out.record.seed = seed;
  out.record.params = base_params("teacher_base", sched, iters, n);
  auto& curve = out.record.curves["loss"];
  teacher->train();
  for (std::int64_t k = 0; k < iters; ++k) {
    auto idx = batches.next();
    auto x = images.index_select(0, idx);
    auto y = masks.index_select(0, idx);
    detail::random_flips(x, y, flip_rng);
    auto raw = resize_logits(teacher->forward(x).raw_logits, size);
    auto cls = raw.narrow(1, 0, teacher->classes());
    auto obj = raw.select(1, teacher->classes());
    auto loss = losses::ce_dice_loss(cls, y) +
                F::binary_cross_entropy_with_logits(obj, (y > 0).to(torch::kFloat));
    curve.push_back(detail::finite_or_throw(loss, "teacher_base", k));
    set_learning_rate(*opt, learning_rate(sched, k, iters));
    opt->zero_grad();
    loss.backward();
    clip_grad_norm(params, sched.grad_clip);
    opt->step();
  }
  teacher->eval();
  finish(out.record, clock);
  return out;
}

PartialLoadReport transfer_teacher_base(TeacherModel target, const CheckpointBundle& base) {
  return load_pretrained_partial(*target, base);
}

TrainedTeacher finetune_teacher_lora(TeacherModel teacher, const LabeledDataset& labeled,
                                     const lora::LoRAConfig& lora_cfg, const Schedule& sched, std::uint64_t seed) {
  sched.validate("teacher_lora");
  if (labeled.size() == 0) throw ValidationError("teacher fine-tuning needs labeled data");
  if (labeled.class_count() != teacher->classes()) {
    throw ConfigError("teacher has " + std::to_string(teacher->classes()) + " classes, dataset has " +
                      std::to_string(labeled.class_count()));
  }
  detail::Stopwatch clock;
  const SeedStream seeds(seed);
  const auto targets = lora::inject(*teacher, lora_cfg, seeds.derive("lora_init"));
  for (auto& p : teacher->decoder->class_head->parameters()) p.set_requires_grad(true);
  const auto images = labeled.image_batch();
  const auto masks = labeled.mask_batch();
  const auto n = images.size(0);
  const auto size = images.size(2);
  const auto iters = sched.total_iters(n);
  auto params = detail::trainable(teacher->parameters());
  auto opt = make_optimizer(sched, params);
  detail::EpochBatches batches(n, sched.batch_size, seeds.engine("data_order"));
  auto flip_rng = seeds.engine("flip");
  TrainedTeacher out{teacher, {}};
  out.record.stage = "teacher_lora";
  out.record.seed = seed;
  out.record.params = base_params("teacher_lora", sched, iters, n);
  out.record.params["rank"] = lora_cfg.rank;
  out.record.params["targets"] = targets;
  out.record.params["trainable_params"] = param_count(*teacher, true);
  auto& curve = out.record.curves["loss"];
  auto last_good = snapshot(params);
  teacher->train();
  for (std::int64_t k = 0; k < iters; ++k) {
    auto idx = batches.next();
    auto x = images.index_select(0, idx);
    auto y = masks.index_select(0, idx);
    detail::random_flips(x, y, flip_rng);
    auto loss = losses::ce_dice_loss(resize_logits(teacher->forward(x).logits.logits, size), y);
    const double v = loss.item<double>();
    if (!std::isfinite(v)) {
      restore(params, last_good);
      teacher->eval();
      throw NumericalError("teacher_lora: non-finite loss at step " + std::to_string(k) +
                           "; parameters restored to the last finite step");
    }
    curve.push_back(v);
    set_learning_rate(*opt, learning_rate(sched, k, iters));
    opt->zero_grad();
    loss.backward();
    clip_grad_norm(params, sched.grad_clip);
    opt->step();
    last_good = snapshot(params);
  }
  teacher->eval();
  teacher->task_adapted = true;
  finish(out.record, clock);
  return out;
}

namespace {

struct TeacherCache {
  torch::Tensor tokens;  // N×g×g×d_T
  torch::Tensor logits;  // N×C(+1)×h×w
};

TeacherCache cache_teacher(TeacherModel teacher, const torch::Tensor& images, bool need_logits, bool raw) {
  torch::NoGradGuard ng;
  teacher->eval();
  std::vector<torch::Tensor> toks, logs;
  for (std::int64_t s = 0; s < images.size(0); s += 64) {
    const auto out = teacher->forward(images.narrow(0, s, std::min<std::int64_t>(64, images.size(0) - s)));
    toks.push_back(out.encoder.tokens);
    if (need_logits) logs.push_back(raw ? out.raw_logits : out.logits.logits);
  }
  TeacherCache c{torch::cat(toks), torch::Tensor()};
  if (need_logits) c.logits = torch::cat(logs);
  return c;
}

TrainedStudent distill(StudentModel student, TeacherModel teacher, const TransferSet& transfer,
                       const DistillationConfig& dcfg, const Schedule& sched, std::uint64_t seed,
                       const std::string& stage) {
  dcfg.validate();
  sched.validate(stage);
  if (transfer.empty()) throw ValidationError(stage + ": transfer set is empty");
  transfer.validate();
  const auto& scfg = student->encoder->config();
  const auto& tcfg = teacher->encoder->config();
  if (scfg.grid() != tcfg.grid()) {
    throw ConfigError(stage + ": student grid " + std::to_string(scfg.grid()) + " differs from teacher grid " +
                      std::to_string(tcfg.grid()));
  }
  const bool decoder_on = dcfg.decoder_kind != losses::DecoderLossKind::none && dcfg.w_decoder > 0.0;
  if (decoder_on && student->classes() != teacher->classes()) {
    throw ConfigError(stage + ": student and teacher class counts differ");
  }
  detail::Stopwatch clock;
  const SeedStream seeds(seed);
  const auto images = transfer.batch();
  const auto cache = cache_teacher(teacher, images, decoder_on,
                                   dcfg.mask_mode == losses::MaskMode::drop_last_channel);
  torch::manual_seed(seeds.derive("projection"));
  auto proj = losses::make_projection(scfg.embed_dim, tcfg.embed_dim);

  std::vector<torch::Tensor> params = detail::trainable(student->encoder->parameters());
  if (decoder_on) {
    for (auto& p : detail::trainable(student->head->parameters())) params.push_back(p);
  }
  if (proj && dcfg.use_hidden) {
    for (auto& p : (*proj)->parameters()) params.push_back(p);
  }
  const auto n = images.size(0);
  const auto iters = sched.total_iters(n);
  auto opt = make_optimizer(sched, params);
  detail::EpochBatches batches(n, sched.batch_size, seeds.engine("data_order"));

  TrainedStudent out{student, {}};
  out.record.stage = stage;
  out.record.seed = seed;
  out.record.params = base_params(stage, sched, iters, n);
  out.record.params["distillation"] = dcfg.to_json();
  out.record.params["projection"] = proj.has_value();
  auto& total_curve = out.record.curves["loss_total"];
  std::vector<double>* hidden_curve = dcfg.use_hidden ? &out.record.curves["loss_hidden"] : nullptr;
  std::vector<double>* decoder_curve = decoder_on ? &out.record.curves["loss_decoder"] : nullptr;

  student->train();
  for (std::int64_t k = 0; k < iters; ++k) {
    auto idx = batches.next();
    auto x = images.index_select(0, idx);
    torch::Tensor enc_loss, dec_loss;
    torch::Tensor tokens;
    if (decoder_on) {
      auto so = student->forward(x);
      tokens = so.encoder.tokens;
      dec_loss = losses::decoder_kd_loss(so.logits.logits, cache.logits.index_select(0, idx), dcfg.decoder_kind,
                                         dcfg.mask_mode);
    } else {
      tokens = student->encoder->forward(x).tokens;
    }
    if (dcfg.use_hidden) {
      enc_loss = losses::encoder_kd_loss(tokens, cache.tokens.index_select(0, idx),
                                         proj ? std::optional<losses::HiddenProjection>(*proj) : std::nullopt);
    }
    auto terms = losses::combine_kd(enc_loss, dec_loss, dcfg.use_hidden ? dcfg.w_hidden : 0.0,
                                    decoder_on ? dcfg.w_decoder : 0.0, dcfg.decoder_kind);
    total_curve.push_back(detail::finite_or_throw(terms.weighted_total, stage, k));
    if (hidden_curve) hidden_curve->push_back(enc_loss.item<double>());
    if (decoder_curve) decoder_curve->push_back(dec_loss.item<double>());
    set_learning_rate(*opt, learning_rate(sched, k, iters));
    opt->zero_grad();
    terms.weighted_total.backward();
    clip_grad_norm(params, sched.grad_clip);
    opt->step();
  }
  student->eval();
  finish(out.record, clock);
  return out;
}

}  // namespace

TrainedStudent pretrain_ta_kd(StudentModel student, TeacherModel teacher, const TransferSet& transfer,
                              const Schedule& sched, std::uint64_t seed) {
  return distill(student, teacher, transfer, DistillationConfig::preset("TA-KD"), sched, seed, "pretrain_ta_kd");
}

TrainedStudent pretrain_ts_kd(StudentModel student, TeacherModel teacher, const TransferSet& transfer,
                              const DistillationConfig& dcfg, const Schedule& sched, std::uint64_t seed) {
  if (!teacher->task_adapted) {
    throw ConfigError("task-specific KD needs a LoRA fine-tuned teacher; run teacher fine-tuning first");
  }
  return distill(student, teacher, transfer, dcfg, sched, seed, "pretrain_ts_kd");
}

PartialLoadReport init_from_checkpoint(StudentModel student, const CheckpointBundle& bundle) {
  return load_pretrained_partial(*student, bundle);
}

TrainedStudent finetune_student(StudentModel student, const LabeledDataset& labeled, const Schedule& sched,
                                std::uint64_t seed) {
  sched.validate("finetune");
  if (labeled.size() == 0) throw ValidationError("fine-tuning needs at least one labeled sample");
  if (labeled.class_count() != student->classes()) {
    throw ConfigError("student has " + std::to_string(student->classes()) + " classes, dataset has " +
                      std::to_string(labeled.class_count()));
  }
  detail::Stopwatch clock;
  const SeedStream seeds(seed);
  const auto images = labeled.image_batch();
  const auto masks = labeled.mask_batch();
  const auto n = images.size(0);
  const auto iters = sched.total_iters(n);
  auto params = detail::trainable(student->parameters());
  auto opt = make_optimizer(sched, params);
  detail::EpochBatches batches(n, sched.batch_size, seeds.engine("data_order"));
  auto flip_rng = seeds.engine("flip");
  TrainedStudent out{student, {}};
  out.record.stage = "finetune";
  out.record.seed = seed;
  out.record.params = base_params("finetune", sched, iters, n);
  auto& curve = out.record.curves["loss"];
  student->train();
  for (std::int64_t k = 0; k < iters; ++k) {
    auto idx = batches.next();
    auto x = images.index_select(0, idx);
    auto y = masks.index_select(0, idx);
    detail::random_flips(x, y, flip_rng);
    auto loss = losses::ce_dice_loss(student->forward(x).logits.logits, y);
    curve.push_back(detail::finite_or_throw(loss, "finetune", k));
    set_learning_rate(*opt, learning_rate(sched, k, iters));
    opt->zero_grad();
    loss.backward();
    clip_grad_norm(params, sched.grad_clip);
    opt->step();
  }
  student->eval();
  finish(out.record, clock);
  return out;
}

torch::Tensor predict(StudentModel student, const torch::Tensor& images, std::int64_t batch) {
  torch::NoGradGuard ng;
  student->eval();
  std::vector<torch::Tensor> out;
  for (std::int64_t s = 0; s < images.size(0); s += batch) {
    auto x = images.narrow(0, s, std::min(batch, images.size(0) - s));
    out.push_back(student->forward(x).logits.logits.argmax(1));
  }
  return torch::cat(out);
}

torch::Tensor predict(TeacherModel teacher, const torch::Tensor& images, std::int64_t batch) {
  torch::NoGradGuard ng;
  teacher->eval();
  std::vector<torch::Tensor> out;
  for (std::int64_t s = 0; s < images.size(0); s += batch) {
    auto x = images.narrow(0, s, std::min(batch, images.size(0) - s));
    out.push_back(resize_logits(teacher->forward(x).logits.logits, images.size(2)).argmax(1));
  }
  return torch::cat(out);
}

metrics::MetricsReport evaluate_predictions(const torch::Tensor& predicted, const LabeledDataset& reference,
                                            double spacing) {
  const auto refs = reference.mask_batch();
  if (predicted.sizes() != refs.sizes()) throw ValidationError("prediction and reference shapes differ");
  auto to_grids = [](const torch::Tensor& t) {
    const auto c = t.to(torch::kInt).contiguous();
    std::vector<metrics::ClassGrid> grids;
    for (std::int64_t i = 0; i < c.size(0); ++i) {
      metrics::ClassGrid g;
      g.height = c.size(1);
      g.width = c.size(2);
      const auto* p = c[i].data_ptr<std::int32_t>();
      g.data.assign(p, p + g.height * g.width);
      grids.push_back(std::move(g));
    }
    return grids;
  };
  return metrics::evaluate(to_grids(predicted), to_grids(refs), reference.class_count(), reference.class_names(),
                           spacing);
}

std::string RankSweepResult::to_csv() const {
  std::string out = "rank,mean_dice,mean_hd95,trainable_params,selected\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%lld,%d\n", static_cast<long long>(r.rank), r.mean_dice,
                  r.mean_hd95, static_cast<long long>(r.trainable_params), r.rank == selected_rank ? 1 : 0);
    out += buf;
  }
  return out;
}

RankSweepResult lora_rank_sweep(const CheckpointBundle& teacher_base, const ViTEncoderConfig& enc,
                                std::int64_t classes, const LabeledDataset& labeled,
                                const LabeledDataset& validation, const std::vector<std::int64_t>& ranks,
                                const lora::LoRAConfig& lora_cfg, const Schedule& sched, std::uint64_t seed) {
  if (ranks.empty()) throw ValidationError("rank sweep needs at least one rank");
  RankSweepResult result;
  double best = -1.0;
  for (const auto r : ranks) {
    if (r < 1) throw ValidationError("LoRA rank must be >= 1, got " + std::to_string(r));
    auto teacher = make_teacher(enc, classes, seed);
    transfer_teacher_base(teacher, teacher_base);
    auto cfg = lora_cfg;
    cfg.rank = r;
    auto trained = finetune_teacher_lora(teacher, labeled, cfg, sched, seed);
    const auto report = evaluate_predictions(predict(trained.model, validation.image_batch()), validation);
    result.rows.push_back({r, report.mean_dice, report.mean_hd95, param_count(*trained.model, true)});
    if (report.mean_dice > best || (report.mean_dice == best && r < result.selected_rank)) {
      best = report.mean_dice;
      result.selected_rank = r;
    }
  }
  return result;
}

}  // namespace tskd::trainer
