#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tskd/cli/cli.hpp"
#include "tskd/core/checkpoint.hpp"
#include "tskd/core/dataset.hpp"
#include "tskd/core/shapes.hpp"
#include "tskd/diffusion/diffusion.hpp"
#include "tskd/error.hpp"
#include "tskd/lora/lora.hpp"
#include "tskd/trainer/study.hpp"

namespace tskd::cli {

namespace fs = std::filesystem;
using trainer::RunRecord;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Record without wall-clock time (kept in timing.json so that reruns
/// produce identical record files).
void write_record(const fs::path& dir, const RunRecord& rec) {
  auto j = rec.to_json();
  j.erase("wall_clock_s");
  write_text(dir / "record.json", j.dump(2) + "\n");
  write_text(dir / "timing.json", nlohmann::json{{"wall_clock_s", rec.wall_clock_s}}.dump(2) + "\n");
  write_text(dir / "curves.csv", rec.curves_csv());
}

RunRecord read_record(const fs::path& dir) {
  try {
    return RunRecord::from_json(nlohmann::json::parse(read_text(dir / "record.json")));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed record " + (dir / "record.json").string() + ": " + e.what());
  }
}

std::string method_label(Method m, const std::string& ts_config) {
  return m == Method::ts_kd ? "ts_kd-" + ts_config : to_string(m);
}

/// Fixed artifact layout under the working directory.
struct Workdir {
  fs::path root;

  fs::path data(const std::string& task) const { return root / "data" / task; }
  fs::path teacher_base() const { return root / "teacher" / "base.ckpt"; }
  fs::path teacher_lora(std::int64_t rank) const { return root / "teacher" / ("lora_r" + std::to_string(rank)); }
  fs::path selected_rank() const { return root / "teacher" / "selected_rank.txt"; }
  fs::path augmented() const { return root / "transfer" / "augmented"; }
  fs::path synthetic() const { return root / "transfer" / "synthetic"; }
  fs::path denoiser() const { return root / "diffusion" / "denoiser.ckpt"; }
  fs::path pretrain_cell(Method m, const std::string& ts, std::int64_t transfer, std::uint64_t seed) const {
    return root / "runs" / "pretrain" /
           (method_label(m, ts) + "_t" + std::to_string(transfer) + "_s" + std::to_string(seed));
  }
  fs::path finetune_cell(Method m, const std::string& ts, std::int64_t transfer, std::int64_t labels,
                         std::uint64_t seed) const {
    std::string name = method_label(m, ts);
    if (m != Method::scratch) name += "_t" + std::to_string(transfer);
    return root / "runs" / "finetune" / (name + "_l" + std::to_string(labels) + "_s" + std::to_string(seed));
  }
};

LabeledDataset require_dataset(const Workdir& w, const std::string& task, const std::string& split, int classes) {
  const auto dir = w.data(task) / split;
  if (!fs::exists(dir / "images")) {
    throw DependencyError("missing dataset " + dir.string() + "; run `make-shapes --task " + task + "` first");
  }
  return load_dataset(dir, classes);
}

CheckpointBundle require_checkpoint(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw DependencyError("missing " + path.string() + "; run `" + producer + "` first");
  return load_checkpoint(path);
}

TeacherModel load_teacher(const ExperimentConfig& cfg, const CheckpointBundle& b) {
  const auto it = b.metadata.extra.find("classes");
  if (it == b.metadata.extra.end()) throw IntegrityError("teacher checkpoint lacks its class count");
  auto t = trainer::make_teacher(cfg.teacher, std::stoll(it->second), cfg.seed);
  lora::load_bundle(*t, b);
  const auto adapted = b.metadata.extra.find("task_adapted");
  t->task_adapted = adapted != b.metadata.extra.end() && adapted->second == "true";
  t->eval();
  return t;
}

CheckpointBundle teacher_bundle(TeacherModel t, const std::string& config_hash) {
  CheckpointMetadata meta;
  meta.model_kind = "teacher";
  meta.config_hash = config_hash;
  meta.extra["classes"] = std::to_string(t->classes());
  meta.extra["task_adapted"] = t->task_adapted ? "true" : "false";
  return lora::to_bundle(*t, meta);
}

void save_student(StudentModel s, const ExperimentConfig& cfg, const fs::path& path) {
  CheckpointMetadata meta;
  meta.model_kind = "student";
  meta.config_hash = cfg.hash();
  save_checkpoint(bundle_from_module(*s, meta), path);
}

StudentModel load_student(const ExperimentConfig& cfg, const fs::path& path) {
  auto s = trainer::make_student(cfg, cfg.seed);
  load_module_strict(*s, load_checkpoint(path));
  return s;
}

TransferSet require_transfer(const Workdir& w, std::int64_t count) {
  TransferSet all{{}, Provenance::augmented};
  bool found = false;
  for (const auto& dir : {w.augmented(), w.synthetic()}) {
    if (!fs::exists(dir / "manifest.json")) continue;
    found = true;
    auto part = diffusion::load_transfer_set(dir);
    if (all.images.empty()) all.provenance = part.provenance;
    for (auto& im : part.images) all.images.push_back(std::move(im));
  }
  if (!found) throw DependencyError("no transfer set; run `augment` and/or `diffusion-sample` first");
  if (static_cast<std::int64_t>(all.size()) < count) {
    throw ValidationError("transfer set holds " + std::to_string(all.size()) + " images, " + std::to_string(count) +
                          " requested");
  }
  all.images.resize(static_cast<std::size_t>(count));
  return all;
}

TeacherModel require_adapted_teacher(const Workdir& w, const ExperimentConfig& cfg) {
  if (!fs::exists(w.selected_rank())) {
    throw DependencyError("no fine-tuned teacher; run `teacher-finetune` or `rank-sweep` first");
  }
  const auto rank = std::stoll(read_text(w.selected_rank()));
  return load_teacher(cfg, require_checkpoint(w.teacher_lora(rank) / "teacher.ckpt",
                                              "teacher-finetune --rank " + std::to_string(rank)));
}

nlohmann::json metrics_json(const metrics::MetricsReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"mean_dice", num(r.mean_dice)}, {"mean_hd95", num(r.mean_hd95)}, {"mean_iou", num(r.mean_iou)},
          {"samples", r.samples}};
}

struct Context {
  Workdir work;
  ExperimentConfig cfg;
};

// ---- commands -------------------------------------------------------------

void cmd_make_shapes(const Context& c, const std::string& task_name, std::int64_t count, std::int64_t test_count) {
  const auto task = task_name == "foundation" ? ShapesTask::foundation : ShapesTask::target;
  auto ds = make_shapes_dataset(task, count, c.cfg.seed, c.cfg.student.image_size);
  const auto dir = c.work.data(task_name);
  fs::remove_all(dir);
  if (task == ShapesTask::target) {
    if (test_count < 1 || test_count >= count) throw ValidationError("--test-count must lie in [1, count)");
    auto [test, train] = split_holdout(ds, test_count, 1);
    save_dataset(train, dir / "train");
    save_dataset(test, dir / "test");
    std::cout << "make-shapes: " << train.size() << " train / " << test.size() << " test samples in " << dir << "\n";
  } else {
    save_dataset(ds, dir / "train");
    std::cout << "make-shapes: " << ds.size() << " samples in " << dir << "\n";
  }
}

void cmd_teacher_base(const Context& c) {
  auto data = require_dataset(c.work, "foundation", "train", shapes_class_count(ShapesTask::foundation));
  auto t = trainer::make_teacher(c.cfg.teacher, data.class_count(), c.cfg.seed);
  auto out = trainer::pretrain_teacher_base(t, data, c.cfg.schedule("teacher_base"), c.cfg.seed);
  out.record.params["config"] = c.cfg.to_json();
  const auto dir = c.work.teacher_base().parent_path();
  fs::create_directories(dir);
  save_checkpoint(teacher_bundle(out.model, c.cfg.hash()), c.work.teacher_base());
  write_record(dir / "base", out.record);
  std::cout << "teacher-base: final loss " << out.record.curves["loss"].back() << "\n";
}

void cmd_augment(const Context& c, std::int64_t size) {
  auto train = require_dataset(c.work, "target", "train", static_cast<int>(c.cfg.class_count));
  std::vector<torch::Tensor> sources;
  for (const auto& s : train.samples()) sources.push_back(s.image);
  auto set = diffusion::augment_base_set(sources, diffusion::AugmentationSpec::standard(size), c.cfg.seed);
  fs::remove_all(c.work.augmented());
  diffusion::save_transfer_set(set, {size, Provenance::augmented, c.cfg.seed, ""}, c.work.augmented());
  std::cout << "augment: " << set.size() << " images in " << c.work.augmented() << "\n";
}

diffusion::DiffusionSchedule diffusion_schedule(const ExperimentConfig& cfg) {
  return diffusion::DiffusionSchedule::linear(cfg.diffusion_steps_T, cfg.beta_start, cfg.beta_end);
}

void cmd_diffusion_train(const Context& c, std::int64_t steps) {
  auto train = require_dataset(c.work, "target", "train", static_cast<int>(c.cfg.class_count));
  const auto& s = c.cfg.schedule("diffusion");
  const auto images = train.image_batch();
  if (steps < 0) steps = s.total_iters(images.size(0));
  const auto dcfg = diffusion::DenoiserConfig::from_experiment(c.cfg, images.size(1));
  const auto sched = diffusion_schedule(c.cfg);
  auto out = diffusion::train_denoiser(images, dcfg, sched, steps, c.cfg.seed, s.batch_size, s.base_lr);
  CheckpointMetadata meta;
  meta.model_kind = "denoiser";
  meta.step = steps;
  meta.config_hash = c.cfg.hash();
  meta.extra["schedule_hash"] = sched.hash();
  meta.extra["channels"] = std::to_string(images.size(1));
  save_checkpoint(bundle_from_module(*out.model, meta), c.work.denoiser());
  RunRecord rec;
  rec.stage = "diffusion_train";
  rec.seed = c.cfg.seed;
  rec.params = {{"steps", steps}, {"schedule_hash", sched.hash()}, {"config", c.cfg.to_json()}};
  rec.config_hash = hash_json(rec.params);
  rec.curves["loss"] = out.losses;
  write_record(c.work.denoiser().parent_path(), rec);
  std::cout << "diffusion-train: " << steps << " steps, final loss " << (out.losses.empty() ? 0.0 : out.losses.back())
            << "\n";
}

void cmd_diffusion_sample(const Context& c, std::int64_t size) {
  if (size < 0) throw ValidationError("--size must be >= 0");
  const auto sched = diffusion_schedule(c.cfg);
  TransferSet set{{}, Provenance::diffusion_sampled};
  if (size > 0) {
    const auto bundle = require_checkpoint(c.work.denoiser(), "diffusion-train");
    if (bundle.metadata.extra.count("schedule_hash") && bundle.metadata.extra.at("schedule_hash") != sched.hash()) {
      throw ValidationError("denoiser was trained under a different noise schedule");
    }
    const auto channels = std::stoll(bundle.metadata.extra.at("channels"));
    diffusion::Denoiser model(diffusion::DenoiserConfig::from_experiment(c.cfg, channels));
    load_module_strict(*model, bundle);
    model->eval();
    set = diffusion::sample(diffusion::predictor(model), sched, size, c.cfg.seed, channels, c.cfg.student.image_size);
  }
  fs::remove_all(c.work.synthetic());
  diffusion::save_transfer_set(set, {size, Provenance::diffusion_sampled, c.cfg.seed, sched.hash()}, c.work.synthetic());
  std::cout << "diffusion-sample: " << set.size() << " images in " << c.work.synthetic() << "\n";
}

std::vector<torch::Tensor> load_images(const fs::path& dir) {
  if (fs::exists(dir / "manifest.json")) return diffusion::load_transfer_set(dir).images;
  if (fs::exists(dir / "images")) {
    std::vector<torch::Tensor> out;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir / "images")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(read_image_png(f));
    return out;
  }
  throw DependencyError("no images found in " + dir.string());
}

void cmd_eval_transfer(const Context& c, fs::path transfer, fs::path reference, fs::path out) {
  if (transfer.empty()) transfer = c.work.synthetic();
  if (reference.empty()) reference = c.work.data("target") / "train";
  if (out.empty()) out = c.work.root / "transfer" / "quality.csv";
  TransferSet set{load_images(transfer), Provenance::diffusion_sampled};
  const auto q = diffusion::evaluate_transfer(set, load_images(reference));
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f\n", set.size(), q.mean_psnr, q.mean_mse);
  write_text(out, std::string("images,mean_psnr,mean_mse\n") + buf);
  std::cout << "eval-transfer: psnr " << q.mean_psnr << " dB, mse " << q.mean_mse << "\n";
}

void cmd_teacher_finetune(const Context& c, std::int64_t rank, std::int64_t labels) {
  if (rank < 1) throw ValidationError("--rank must be >= 1");
  const auto base = require_checkpoint(c.work.teacher_base(), "teacher-base");
  auto train = require_dataset(c.work, "target", "train", static_cast<int>(c.cfg.class_count));
  auto test = require_dataset(c.work, "target", "test", static_cast<int>(c.cfg.class_count));
  auto teacher = trainer::make_teacher(c.cfg.teacher, c.cfg.class_count, c.cfg.seed);
  trainer::transfer_teacher_base(teacher, base);
  auto lcfg = lora::LoRAConfig::from_experiment(c.cfg);
  lcfg.rank = rank;
  auto out = trainer::finetune_teacher_lora(teacher, subset_labels(train, labels, c.cfg.seed), lcfg,
                                            c.cfg.schedule("teacher_lora"), c.cfg.seed);
  const auto report = trainer::evaluate_predictions(trainer::predict(out.model, test.image_batch()), test,
                                                    c.cfg.pixel_spacing);
  out.record.params["config"] = c.cfg.to_json();
  out.record.params["metrics"] = metrics_json(report);
  const auto dir = c.work.teacher_lora(rank);
  fs::create_directories(dir);
  save_checkpoint(teacher_bundle(out.model, c.cfg.hash()), dir / "teacher.ckpt");
  write_text(dir / "metrics.csv", report.to_csv());
  out.record.metrics_id = hash_json(report.to_csv());
  write_record(dir, out.record);
  write_text(c.work.selected_rank(), std::to_string(rank) + "\n");
  std::cout << "teacher-finetune: rank " << rank << " mean_dice " << report.mean_dice << "\n";
}

void cmd_rank_sweep(const Context& c, const std::vector<std::int64_t>& ranks, std::int64_t labels) {
  const auto base = require_checkpoint(c.work.teacher_base(), "teacher-base");
  auto train = require_dataset(c.work, "target", "train", static_cast<int>(c.cfg.class_count));
  auto labeled = subset_labels(train, labels, c.cfg.seed);
  std::vector<SegmentationSample> rest;
  const auto used = labeled.ids();
  for (const auto& s : train.samples()) {
    if (std::find(used.begin(), used.end(), s.id) == used.end()) rest.push_back(s);
  }
  if (rest.empty()) throw ValidationError("rank sweep needs training samples outside the labeled subset");
  LabeledDataset validation(std::move(rest), train.class_count(), train.class_names());
  auto result = trainer::lora_rank_sweep(base, c.cfg.teacher, c.cfg.class_count, labeled, validation, ranks,
                                         lora::LoRAConfig::from_experiment(c.cfg), c.cfg.schedule("teacher_lora"),
                                         c.cfg.seed);
  write_text(c.work.root / "teacher" / "rank_sweep.csv", result.to_csv());
  write_text(c.work.selected_rank(), std::to_string(result.selected_rank) + "\n");
  std::cout << "rank-sweep: selected rank " << result.selected_rank << "\n";
}

struct CellArgs {
  Method method = Method::scratch;
  std::string ts_config;
  std::int64_t transfer = 0;
  std::int64_t labels = 0;
};

fs::path cmd_pretrain(const Context& c, const CellArgs& a) {
  if (a.method == Method::scratch) throw ValidationError("scratch has no pretraining stage");
  const auto dir = c.work.pretrain_cell(a.method, a.ts_config, a.transfer, c.cfg.seed);
  CellLock lock(dir);
  auto student = trainer::make_student(c.cfg, c.cfg.seed);
  const auto& cfg = c.cfg;
  trainer::TrainedStudent out;
  switch (a.method) {
    case Method::ts_kd: {
      auto teacher = require_adapted_teacher(c.work, cfg);
      out = trainer::pretrain_ts_kd(student, teacher, require_transfer(c.work, a.transfer),
                                    trainer::DistillationConfig::preset(a.ts_config), cfg.schedule("pretrain_kd"),
                                    cfg.seed);
      break;
    }
    case Method::ta_kd: {
      auto teacher = load_teacher(cfg, require_checkpoint(c.work.teacher_base(), "teacher-base"));
      out = trainer::pretrain_ta_kd(student, teacher, require_transfer(c.work, a.transfer),
                                    cfg.schedule("pretrain_kd"), cfg.seed);
      break;
    }
    case Method::moco:
      out = trainer::pretrain_moco(student, require_transfer(c.work, a.transfer), cfg.schedule("pretrain_moco"),
                                   {cfg.moco_temperature, cfg.moco_momentum, cfg.moco_queue, cfg.moco_dim}, cfg.seed);
      break;
    case Method::mae:
      out = trainer::pretrain_mae(student, require_transfer(c.work, a.transfer), cfg.schedule("pretrain_mae"),
                                  {cfg.mae_mask_ratio, cfg.mae_loss_scope, 32}, cfg.seed);
      break;
    case Method::imagenet_mae: {
      auto generic = require_dataset(c.work, "foundation", "train", shapes_class_count(ShapesTask::foundation));
      TransferSet set{{}, Provenance::procedural};
      for (const auto& s : generic.samples()) {
        if (static_cast<std::int64_t>(set.size()) >= a.transfer) break;
        set.images.push_back(s.image);
      }
      out = trainer::pretrain_mae(student, set, cfg.schedule("pretrain_mae"),
                                  {cfg.mae_mask_ratio, cfg.mae_loss_scope, 32}, cfg.seed);
      break;
    }
    case Method::scratch:
      break;
  }
  out.record.params["config"] = cfg.to_json();
  save_student(out.model, cfg, dir / "model.ckpt");
  write_record(dir, out.record);
  std::cout << "pretrain: " << dir.string() << "\n";
  return dir;
}

fs::path cmd_finetune(const Context& c, const CellArgs& a) {
  const auto dir = c.work.finetune_cell(a.method, a.ts_config, a.transfer, a.labels, c.cfg.seed);
  CellLock lock(dir);
  StudentModel student{nullptr};
  if (a.method == Method::scratch) {
    student = trainer::make_student(c.cfg, c.cfg.seed);
  } else {
    const auto pre = c.work.pretrain_cell(a.method, a.ts_config, a.transfer, c.cfg.seed);
    if (!fs::exists(pre / "model.ckpt")) {
      throw DependencyError("missing " + (pre / "model.ckpt").string() + "; run `pretrain --method " +
                            to_string(a.method) + "` with the same transfer size and seed first");
    }
    student = load_student(c.cfg, pre / "model.ckpt");
  }
  auto train = require_dataset(c.work, "target", "train", static_cast<int>(c.cfg.class_count));
  auto out = trainer::finetune_student(student, subset_labels(train, a.labels, c.cfg.seed),
                                       c.cfg.schedule("finetune"), c.cfg.seed);
  out.record.params["config"] = c.cfg.to_json();
  out.record.params["cell"] = {{"method", method_label(a.method, a.ts_config)},
                               {"transfer_size", a.method == Method::scratch ? 0 : a.transfer},
                               {"label_budget", a.labels},
                               {"seed", c.cfg.seed}};
  save_student(out.model, c.cfg, dir / "model.ckpt");
  out.record.checkpoint_id = checkpoint_digest(load_checkpoint(dir / "model.ckpt"));
  write_record(dir, out.record);
  std::cout << "finetune: " << dir.string() << "\n";
  return dir;
}

void cmd_evaluate_cell(const Context& c, const fs::path& dir) {
  if (!fs::exists(dir / "model.ckpt")) {
    throw DependencyError("missing " + (dir / "model.ckpt").string() + "; run `finetune` first");
  }
  auto test = require_dataset(c.work, "target", "test", static_cast<int>(c.cfg.class_count));
  auto student = load_student(c.cfg, dir / "model.ckpt");
  const auto report = trainer::evaluate_predictions(trainer::predict(student, test.image_batch()), test,
                                                    c.cfg.pixel_spacing);
  const auto csv = report.to_csv();
  write_text(dir / "metrics.csv", csv);
  auto rec = read_record(dir);
  rec.params["metrics"] = metrics_json(report);
  rec.metrics_id = hash_json(csv);
  rec.wall_clock_s = nlohmann::json::parse(read_text(dir / "timing.json")).value("wall_clock_s", 0.0);
  write_record(dir, rec);
  std::cout << "evaluate: mean_dice " << report.mean_dice << " (" << dir.string() << ")\n";
}

void cmd_evaluate_predictions(const Context& c, const fs::path& predictions, fs::path data, fs::path out) {
  if (data.empty()) data = c.work.data("target") / "test";
  auto ref = load_dataset(data, static_cast<int>(c.cfg.class_count));
  std::vector<torch::Tensor> masks;
  for (const auto& s : ref.samples()) {
    const auto p = predictions / "masks" / (s.id + ".png");
    if (!fs::exists(p)) throw DependencyError("missing prediction " + p.string());
    masks.push_back(read_mask_png(p).to(torch::kLong));
  }
  const auto report = trainer::evaluate_predictions(torch::stack(masks), ref, c.cfg.pixel_spacing);
  if (out.empty()) out = predictions / "metrics.csv";
  write_text(out, report.to_csv());
  std::cout << "evaluate: mean_dice " << report.mean_dice << "\n";
}

void cmd_report(const Context& c, fs::path out) {
  if (out.empty()) out = c.work.root / "report";
  std::vector<RunRecord> records;
  const auto runs = c.work.root / "runs" / "finetune";
  if (fs::exists(runs)) {
    for (const auto& e : fs::directory_iterator(runs)) {
      if (fs::exists(e.path() / "record.json")) records.push_back(read_record(e.path()));
    }
  }
  const auto rep = build_report(records);
  if (rep.rows.empty()) throw DependencyError("no evaluated runs under " + runs.string() + "; run `evaluate` first");
  write_text(out / "table.csv", rep.to_csv());
  write_text(out / "dice_vs_labels.svg", rep.to_svg());
  fs::create_directories(out);
  rep.write_png(out / "dice_vs_labels.png");
  std::cout << "report: " << rep.rows.size() << " rows in " << out.string() << "\n";
}

bool cell_complete(const fs::path& dir) {
  if (!fs::exists(dir / "record.json") || !fs::exists(dir / "metrics.csv")) return false;
  return read_record(dir).params.contains("metrics");
}

void cmd_matrix(const Context& c, const ExperimentMatrix& m, const std::string& ts_config) {
  for (const auto& cell : m.cells()) {
    Context cc{c.work, m.cell_config(c.cfg, cell)};
    CellArgs a{cell.method, ts_config, cell.transfer_size, cell.label_budget};
    const auto dir = c.work.finetune_cell(a.method, ts_config, a.transfer, a.labels, cell.seed);
    if (cell_complete(dir)) continue;
    if (a.method != Method::scratch &&
        !fs::exists(c.work.pretrain_cell(a.method, ts_config, a.transfer, cell.seed) / "model.ckpt")) {
      cmd_pretrain(cc, a);
    }
    cmd_evaluate_cell(cc, cmd_finetune(cc, a));
  }
  write_text(c.work.root / "runs" / "matrix.json",
             nlohmann::json{{"hash", m.hash()}, {"cells", m.cells().size()}}.dump(2) + "\n");
  cmd_report(c, {});
}

void cmd_study(const Context& c, const ExperimentMatrix& m) {
  auto study = trainer::DeskStudy::defaults();
  study.experiment.distillation = c.cfg.distillation;
  const auto dir = c.work.root / "study";
  write_text(dir / "study.json", study.to_json().dump(2) + "\n");
  const auto data = trainer::make_desk_data(study);
  const auto teacher = trainer::prepare_desk_teacher(study, data);
  write_text(dir / "teacher_metrics.csv", teacher.adapted_report.to_csv());
  std::cout << "study: teacher mean_dice " << teacher.adapted_report.mean_dice << "\n";
  std::vector<RunRecord> records;
  std::string cells = "method,transfer_size,label_budget,seed,mean_dice,mean_hd95\n";
  for (const auto& cell : m.cells()) {
    auto r = trainer::run_desk_cell(study, data, teacher, cell.method, cell.transfer_size, cell.label_budget,
                                    cell.seed);
    r.finetune.params["cell"] = {{"method", method_label(cell.method, study.experiment.distillation)},
                                 {"transfer_size", r.transfer_size},
                                 {"label_budget", cell.label_budget},
                                 {"seed", cell.seed}};
    r.finetune.params["metrics"] = metrics_json(r.report);
    records.push_back(r.finetune);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%llu,%.6f,%.6f\n",
                  method_label(cell.method, study.experiment.distillation).c_str(),
                  static_cast<long long>(r.transfer_size), static_cast<long long>(cell.label_budget),
                  static_cast<unsigned long long>(cell.seed), r.report.mean_dice, r.report.mean_hd95);
    cells += buf;
    std::cout << "study: " << buf << std::flush;
  }
  write_text(dir / "cells.csv", cells);
  const auto rep = build_report(records);
  write_text(dir / "table.csv", rep.to_csv());
  write_text(dir / "dice_vs_labels.svg", rep.to_svg());
  rep.write_png(dir / "dice_vs_labels.png");
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const std::function<T(const std::string&)>& conv) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(conv(item));
  }
  if (out.empty()) throw ValidationError("empty list '" + s + "'");
  return out;
}

std::int64_t to_i64(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("not an integer: '" + s + "'");
  }
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Task-specific knowledge distillation experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string workdir = "work";
  std::string config_file;
  bool desk = false;
  std::int64_t seed = -1;
  std::int64_t max_iters = -1;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-w,--workdir", workdir, "artifact directory")->capture_default_str();
    sub->add_option("--config", config_file, "JSON config file");
    sub->add_flag("--desk", desk, "desk profile: epochs and warmup divided by 20");
    sub->add_option("--seed", seed, "root seed");
    sub->add_option("--max-iters", max_iters, "cap on optimizer steps for every stage");
  };

  std::string task = "target";
  std::int64_t count = -1, test_count = 200, size = -1, steps = -1, rank = -1, labels = -1, transfer = -1;
  std::string method = "scratch", ts_config, ranks = "1,2,4,8", transfer_path, reference_path, out_path,
              predictions_path, data_path, methods = "scratch,ta_kd,ts_kd", transfers = "300", budgets = "16",
              seeds = "1,2,3";
  std::function<void(const Context&)> action;

  auto* make = app.add_subcommand("make-shapes", "write a procedural shapes dataset");
  add_common(make);
  make->add_option("--task", task)->check(CLI::IsMember({"target", "foundation"}))->capture_default_str();
  make->add_option("--count", count, "samples (default 400 target, 3000 foundation)");
  make->add_option("--test-count", test_count)->capture_default_str();
  make->callback([&] {
    action = [&](const Context& c) {
      cmd_make_shapes(c, task, count >= 0 ? count : (task == "target" ? 400 : 3000), test_count);
    };
  });

  auto* tbase = app.add_subcommand("teacher-base", "pretrain the stand-in foundation teacher");
  add_common(tbase);
  tbase->callback([&] { action = [&](const Context& c) { cmd_teacher_base(c); }; });

  auto* aug = app.add_subcommand("augment", "geometric augmentation of the target images");
  add_common(aug);
  aug->add_option("--size", size, "output images (default transfer_size)");
  aug->callback([&] { action = [&](const Context& c) { cmd_augment(c, size >= 0 ? size : c.cfg.transfer_size); }; });

  auto* dtrain = app.add_subcommand("diffusion-train", "train the diffusion denoiser on the target images");
  add_common(dtrain);
  dtrain->add_option("--steps", steps, "optimizer steps (default from the diffusion schedule)");
  dtrain->callback([&] { action = [&](const Context& c) { cmd_diffusion_train(c, steps); }; });

  auto* dsample = app.add_subcommand("diffusion-sample", "sample a synthetic transfer set");
  add_common(dsample);
  dsample->add_option("--size", size, "images to sample (default transfer_size)");
  dsample->callback([&] {
    action = [&](const Context& c) { cmd_diffusion_sample(c, size >= 0 ? size : c.cfg.transfer_size); };
  });

  auto* etransfer = app.add_subcommand("eval-transfer", "PSNR/MSE of a transfer set against references");
  add_common(etransfer);
  etransfer->add_option("--transfer", transfer_path, "transfer set directory (default synthetic set)");
  etransfer->add_option("--reference", reference_path, "reference images (default target train split)");
  etransfer->add_option("--out", out_path, "output CSV");
  etransfer->callback([&] {
    action = [&](const Context& c) { cmd_eval_transfer(c, transfer_path, reference_path, out_path); };
  });

  auto* tft = app.add_subcommand("teacher-finetune", "LoRA fine-tuning of the teacher on target labels");
  add_common(tft);
  tft->add_option("--rank", rank, "LoRA rank (default lora_rank)");
  tft->add_option("--labels", labels, "labeled samples (default 64)");
  tft->callback([&] {
    action = [&](const Context& c) { cmd_teacher_finetune(c, rank >= 0 ? rank : c.cfg.lora_rank, labels >= 0 ? labels : 64); };
  });

  auto* sweep = app.add_subcommand("rank-sweep", "compare LoRA ranks and select the best");
  add_common(sweep);
  sweep->add_option("--ranks", ranks, "comma-separated ranks")->capture_default_str();
  sweep->add_option("--labels", labels, "labeled samples (default 64)");
  sweep->callback([&] {
    action = [&](const Context& c) {
      cmd_rank_sweep(c, parse_list<std::int64_t>(ranks, to_i64), labels >= 0 ? labels : 64);
    };
  });

  auto cell_args = [&](const Context& c) {
    return CellArgs{method_from_string(method), ts_config.empty() ? c.cfg.distillation : ts_config,
                    transfer >= 0 ? transfer : c.cfg.transfer_size, labels >= 0 ? labels : c.cfg.label_budget};
  };
  auto add_cell = [&](CLI::App* sub, bool with_labels) {
    sub->add_option("--method", method, "scratch, imagenet_mae, moco, mae, ta_kd or ts_kd")->capture_default_str();
    sub->add_option("--ts-config", ts_config, "distillation preset for ts_kd (default distillation)");
    sub->add_option("--transfer-size", transfer, "transfer images (default transfer_size)");
    if (with_labels) sub->add_option("--labels", labels, "label budget (default label_budget)");
  };

  auto* pre = app.add_subcommand("pretrain", "pretrain a student encoder");
  add_common(pre);
  add_cell(pre, false);
  pre->callback([&] { action = [&](const Context& c) { cmd_pretrain(c, cell_args(c)); }; });

  auto* ft = app.add_subcommand("finetune", "fine-tune a student on a label budget");
  add_common(ft);
  add_cell(ft, true);
  ft->callback([&] { action = [&](const Context& c) { cmd_finetune(c, cell_args(c)); }; });

  auto* ev = app.add_subcommand("evaluate", "evaluate a fine-tuned student or a prediction set");
  add_common(ev);
  add_cell(ev, true);
  ev->add_option("--predictions", predictions_path, "directory with masks/<id>.png to score instead");
  ev->add_option("--data", data_path, "reference dataset for --predictions (default target test split)");
  ev->add_option("--out", out_path, "metrics CSV for --predictions");
  ev->callback([&] {
    action = [&](const Context& c) {
      if (!predictions_path.empty()) {
        cmd_evaluate_predictions(c, predictions_path, data_path, out_path);
        return;
      }
      const auto a = cell_args(c);
      cmd_evaluate_cell(c, c.work.finetune_cell(a.method, a.ts_config, a.transfer, a.labels, c.cfg.seed));
    };
  });

  auto* rep = app.add_subcommand("report", "aggregate evaluated runs into tables and charts");
  add_common(rep);
  rep->add_option("--out", out_path, "output directory (default <workdir>/report)");
  rep->callback([&] { action = [&](const Context& c) { cmd_report(c, out_path); }; });

  auto matrix_of = [&] {
    ExperimentMatrix m;
    m.methods = parse_list<Method>(methods, method_from_string);
    m.transfer_sizes = parse_list<std::int64_t>(transfers, to_i64);
    m.label_budgets = parse_list<std::int64_t>(budgets, to_i64);
    m.seeds = parse_list<std::uint64_t>(seeds, [](const std::string& s) {
      const auto v = to_i64(s);
      if (v < 0) throw ValidationError("seeds must be >= 0");
      return static_cast<std::uint64_t>(v);
    });
    return m;
  };
  auto add_matrix = [&](CLI::App* sub) {
    sub->add_option("--methods", methods)->capture_default_str();
    sub->add_option("--transfer-sizes", transfers)->capture_default_str();
    sub->add_option("--label-budgets", budgets)->capture_default_str();
    sub->add_option("--seeds", seeds)->capture_default_str();
    sub->add_option("--ts-config", ts_config, "distillation preset for ts_kd (default distillation)");
  };

  auto* mat = app.add_subcommand("matrix", "run every cell of an experiment matrix, then report");
  add_common(mat);
  add_matrix(mat);
  mat->callback([&] {
    action = [&](const Context& c) { cmd_matrix(c, matrix_of(), ts_config.empty() ? c.cfg.distillation : ts_config); };
  });

  auto* study = app.add_subcommand("study", "self-contained desk comparison on the shapes tasks");
  add_common(study);
  add_matrix(study);
  study->callback([&] { action = [&](const Context& c) { cmd_study(c, matrix_of()); }; });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    nlohmann::json flags = nlohmann::json::object();
    if (seed >= 0) flags["seed"] = seed;
    if (!ts_config.empty()) flags["distillation"] = ts_config;
    auto cfg = resolve_config(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file), desk, flags);
    if (max_iters >= 0) {
      for (auto& [_, s] : cfg.schedules) s.max_iters = max_iters;
    }
    action(Context{Workdir{workdir}, cfg});
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tskd::cli
