#include "tskd/core/config.hpp"

#include <algorithm>
#include <cstdio>

#include "tskd/error.hpp"

namespace tskd {

namespace {

template <typename Enum>
struct EnumName {
  Enum value;
  const char* name;
};

constexpr EnumName<Method> kMethods[] = {
    {Method::scratch, "scratch"}, {Method::imagenet_mae, "imagenet_mae"}, {Method::moco, "moco"},
    {Method::mae, "mae"},         {Method::ta_kd, "ta_kd"},               {Method::ts_kd, "ts_kd"},
};

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "adamw"; }

OptimizerKind optimizer_from(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw ValidationError("unknown optimizer '" + s + "'");
}

Schedule schedule_from_json(const nlohmann::json& j, Schedule s) {
  if (j.contains("optimizer")) s.optimizer = optimizer_from(j["optimizer"].get<std::string>());
  if (j.contains("base_lr")) s.base_lr = j["base_lr"].get<double>();
  if (j.contains("weight_decay")) s.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("warmup_iters")) s.warmup_iters = j["warmup_iters"].get<std::int64_t>();
  if (j.contains("epochs")) s.epochs = j["epochs"].get<std::int64_t>();
  if (j.contains("batch_size")) s.batch_size = j["batch_size"].get<std::int64_t>();
  if (j.contains("decay")) {
    const auto d = j["decay"].get<std::string>();
    if (d != "cosine" && d != "none") throw ValidationError("unknown decay '" + d + "'");
    s.decay = d == "cosine" ? DecayKind::cosine : DecayKind::none;
  }
  if (j.contains("grad_clip")) s.grad_clip = j["grad_clip"].get<double>();
  if (j.contains("max_iters")) s.max_iters = j["max_iters"].get<std::int64_t>();
  return s;
}

nlohmann::json vit_to_json(const ViTEncoderConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"in_channels", c.in_channels},
          {"embed_dim", c.embed_dim},   {"depth", c.depth},           {"heads", c.heads},
          {"mlp_ratio", c.mlp_ratio}};
}

ViTEncoderConfig vit_from_json(const nlohmann::json& j, ViTEncoderConfig c) {
  if (j.contains("image_size")) c.image_size = j["image_size"].get<std::int64_t>();
  if (j.contains("patch_size")) c.patch_size = j["patch_size"].get<std::int64_t>();
  if (j.contains("in_channels")) c.in_channels = j["in_channels"].get<std::int64_t>();
  if (j.contains("embed_dim")) c.embed_dim = j["embed_dim"].get<std::int64_t>();
  if (j.contains("depth")) c.depth = j["depth"].get<std::int64_t>();
  if (j.contains("heads")) c.heads = j["heads"].get<std::int64_t>();
  if (j.contains("mlp_ratio")) c.mlp_ratio = j["mlp_ratio"].get<double>();
  return c;
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j[key].get<T>();
}

}  // namespace

nlohmann::json schedule_to_json(const Schedule& s) {
  return {{"optimizer", optimizer_name(s.optimizer)},
          {"base_lr", s.base_lr},
          {"weight_decay", s.weight_decay},
          {"warmup_iters", s.warmup_iters},
          {"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"decay", s.decay == DecayKind::cosine ? "cosine" : "none"},
          {"grad_clip", s.grad_clip},
          {"max_iters", s.max_iters}};
}

void ViTEncoderConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || embed_dim <= 0 || depth <= 0 || heads <= 0 || in_channels <= 0) {
    throw ConfigError("encoder config fields must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
}

void Schedule::validate(const std::string& stage) const {
  if (!(base_lr > 0.0)) throw ValidationError(stage + ": learning rate must be > 0");
  if (weight_decay < 0.0) throw ValidationError(stage + ": weight decay must be >= 0");
  if (warmup_iters < 0) throw ValidationError(stage + ": warmup_iters must be >= 0");
  if (epochs < 0) throw ValidationError(stage + ": epochs must be >= 0");
  if (batch_size < 1) throw ValidationError(stage + ": batch_size must be >= 1");
  if (!(grad_clip > 0.0)) throw ValidationError(stage + ": grad_clip must be > 0");
  if (max_iters < 0) throw ValidationError(stage + ": max_iters must be >= 0");
}

std::int64_t Schedule::total_iters(std::int64_t n) const {
  if (n < 1) return 0;
  const auto per_epoch = (n + batch_size - 1) / batch_size;
  const auto iters = epochs * per_epoch;
  return max_iters > 0 ? std::min(iters, max_iters) : iters;
}

Schedule Schedule::scaled_epochs(std::int64_t factor) const {
  Schedule s = *this;
  if (s.epochs > 0) s.epochs = std::max<std::int64_t>(1, s.epochs / factor);
  s.warmup_iters /= factor;
  return s;
}

std::string to_string(Method m) {
  for (const auto& e : kMethods) {
    if (e.value == m) return e.name;
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  for (const auto& e : kMethods) {
    if (s == e.name) return e.value;
  }
  throw ValidationError("unknown method '" + s + "'");
}

bool method_needs_finetuned_teacher(Method m) { return m == Method::ts_kd; }

std::map<std::string, Schedule> ExperimentConfig::default_schedules() {
  std::map<std::string, Schedule> s;
  // LoRA teacher fine-tuning: AdamW, lr 0.005, 250 warmup iterations, 160 epochs.
  s["teacher_lora"] = {OptimizerKind::adamw, 5e-3, 0.01, 250, 160, 8, DecayKind::cosine, 1.0};
  // Foundation-style pretraining of the stand-in teacher (not part of the method).
  s["teacher_base"] = {OptimizerKind::adamw, 1e-3, 0.05, 100, 1600, 32, DecayKind::cosine, 1.0};
  s["pretrain_kd"] = {OptimizerKind::adam, 1.5e-4, 0.05, 100, 1600, 48, DecayKind::cosine, 1.0};
  s["pretrain_mae"] = {OptimizerKind::adamw, 1.5e-4, 0.05, 100, 1600, 64, DecayKind::cosine, 1.0};
  s["pretrain_moco"] = {OptimizerKind::adamw, 1.5e-4, 0.1, 100, 1600, 32, DecayKind::cosine, 1.0};
  s["finetune"] = {OptimizerKind::adamw, 1e-4, 0.05, 0, 160, 6, DecayKind::cosine, 1.0};
  s["diffusion"] = {OptimizerKind::adamw, 1e-3, 0.0, 50, 1600, 16, DecayKind::cosine, 1.0};
  return s;
}

const Schedule& ExperimentConfig::schedule(const std::string& stage) const {
  auto it = schedules.find(stage);
  if (it == schedules.end()) throw ValidationError("no schedule for stage '" + stage + "'");
  return it->second;
}

void ExperimentConfig::validate() const {
  student.validate();
  teacher.validate();
  if (student.image_size != teacher.image_size || student.patch_size != teacher.patch_size) {
    throw ConfigError("student and teacher must share image and patch size (token grids must align)");
  }
  if (class_count < 2) throw ValidationError("class_count must be >= 2");
  if (label_budget < 1) throw ValidationError("label_budget must be >= 1");
  if (transfer_size < 0) throw ValidationError("transfer_size must be >= 0");
  if ((method == Method::ts_kd) && lora_rank < 1) {
    throw ValidationError("lora_rank must be >= 1 for method ts_kd");
  }
  if (lora_rank < 0) throw ValidationError("lora_rank must be >= 0");
  if (!lora_query && !lora_value) throw ValidationError("LoRA target set is empty");
  if (!(moco_temperature > 0.0)) throw ValidationError("moco temperature must be > 0");
  if (!(moco_momentum >= 0.0 && moco_momentum < 1.0)) throw ValidationError("moco momentum must be in [0,1)");
  if (!(mae_mask_ratio > 0.0 && mae_mask_ratio < 1.0)) throw ValidationError("mae mask ratio must be in (0,1)");
  if (!(pixel_spacing > 0.0)) throw ValidationError("pixel_spacing must be > 0");
  if (diffusion_steps_T < 1) throw ValidationError("diffusion T must be >= 1");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw ValidationError("beta schedule must satisfy 0 < beta_start <= beta_end < 1");
  }
  for (const auto& [stage, s] : schedules) s.validate(stage);
}

ExperimentConfig ExperimentConfig::desk() const {
  ExperimentConfig c = *this;
  for (auto& [_, s] : c.schedules) s = s.scaled_epochs(20);
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json sched;
  for (const auto& [stage, s] : schedules) sched[stage] = schedule_to_json(s);
  return {
      {"seed", seed},
      {"method", to_string(method)},
      {"label_budget", label_budget},
      {"transfer_size", transfer_size},
      {"lora_rank", lora_rank},
      {"distillation", distillation},
      {"data", {{"class_count", class_count}, {"pixel_spacing", pixel_spacing}, {"normalize_intensity", normalize_intensity}}},
      {"student", vit_to_json(student)},
      {"teacher", vit_to_json(teacher)},
      {"fpn_channels", fpn_channels},
      {"lora", {{"scope", lora_scope == LoraScope::encoder_only ? "encoder_only" : "encoder_and_decoder"},
                {"query", lora_query},
                {"value", lora_value}}},
      {"moco", {{"temperature", moco_temperature}, {"momentum", moco_momentum}, {"queue_size", moco_queue}, {"dim", moco_dim}}},
      {"mae", {{"mask_ratio", mae_mask_ratio}, {"loss_scope", mae_loss_scope == MaeLossScope::masked_only ? "masked_only" : "all"}}},
      {"diffusion", {{"T", diffusion_steps_T}, {"beta_start", beta_start}, {"beta_end", beta_end},
                     {"dim", denoiser_dim}, {"depth", denoiser_depth}, {"patch", denoiser_patch}}},
      {"schedules", sched},
  };
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) { return from_json(j, ExperimentConfig{}); }

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  try {
    read_if(j, "seed", c.seed);
    if (j.contains("method")) c.method = method_from_string(j["method"].get<std::string>());
    read_if(j, "label_budget", c.label_budget);
    read_if(j, "transfer_size", c.transfer_size);
    read_if(j, "lora_rank", c.lora_rank);
    read_if(j, "distillation", c.distillation);
    if (j.contains("data")) {
      const auto& d = j["data"];
      read_if(d, "class_count", c.class_count);
      read_if(d, "pixel_spacing", c.pixel_spacing);
      read_if(d, "normalize_intensity", c.normalize_intensity);
    }
    if (j.contains("student")) c.student = vit_from_json(j["student"], c.student);
    if (j.contains("teacher")) c.teacher = vit_from_json(j["teacher"], c.teacher);
    read_if(j, "fpn_channels", c.fpn_channels);
    if (j.contains("lora")) {
      const auto& l = j["lora"];
      if (l.contains("scope")) {
        const auto s = l["scope"].get<std::string>();
        if (s == "encoder_only") c.lora_scope = LoraScope::encoder_only;
        else if (s == "encoder_and_decoder") c.lora_scope = LoraScope::encoder_and_decoder;
        else throw ValidationError("unknown lora scope '" + s + "'");
      }
      read_if(l, "query", c.lora_query);
      read_if(l, "value", c.lora_value);
    }
    if (j.contains("moco")) {
      const auto& m = j["moco"];
      read_if(m, "temperature", c.moco_temperature);
      read_if(m, "momentum", c.moco_momentum);
      read_if(m, "queue_size", c.moco_queue);
      read_if(m, "dim", c.moco_dim);
    }
    if (j.contains("mae")) {
      const auto& m = j["mae"];
      read_if(m, "mask_ratio", c.mae_mask_ratio);
      if (m.contains("loss_scope")) {
        const auto s = m["loss_scope"].get<std::string>();
        if (s == "masked_only") c.mae_loss_scope = MaeLossScope::masked_only;
        else if (s == "all") c.mae_loss_scope = MaeLossScope::all;
        else throw ValidationError("unknown mae loss scope '" + s + "'");
      }
    }
    if (j.contains("diffusion")) {
      const auto& d = j["diffusion"];
      read_if(d, "T", c.diffusion_steps_T);
      read_if(d, "beta_start", c.beta_start);
      read_if(d, "beta_end", c.beta_end);
      read_if(d, "dim", c.denoiser_dim);
      read_if(d, "depth", c.denoiser_depth);
      read_if(d, "patch", c.denoiser_patch);
    }
    if (j.contains("schedules")) {
      for (const auto& [stage, sj] : j["schedules"].items()) {
        auto it = c.schedules.find(stage);
        c.schedules[stage] = schedule_from_json(sj, it == c.schedules.end() ? Schedule{} : it->second);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  return c;
}

std::string hash_json(const nlohmann::json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

std::string ExperimentConfig::hash() const { return hash_json(to_json()); }

}  // namespace tskd
