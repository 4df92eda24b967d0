#include <cmath>
#include <cstdio>
#include <numbers>

#include "tskd/error.hpp"
#include "tskd/trainer/trainer.hpp"

namespace tskd::trainer {

double learning_rate(const Schedule& s, std::int64_t k, std::int64_t total) {
  if (k < s.warmup_iters) return s.base_lr * static_cast<double>(k + 1) / static_cast<double>(s.warmup_iters);
  if (s.decay == DecayKind::none) return s.base_lr;
  const auto remaining = total - s.warmup_iters;
  if (remaining <= 0) return s.base_lr;
  const double progress = static_cast<double>(k - s.warmup_iters) / static_cast<double>(remaining);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const Schedule& s, std::vector<torch::Tensor> params) {
  if (s.optimizer == OptimizerKind::adam) {
    return std::make_unique<torch::optim::Adam>(std::move(params),
                                                torch::optim::AdamOptions(s.base_lr).weight_decay(s.weight_decay));
  }
  return std::make_unique<torch::optim::AdamW>(std::move(params),
                                               torch::optim::AdamWOptions(s.base_lr).weight_decay(s.weight_decay));
}

void set_learning_rate(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.grad().defined()) continue;
    sq += p.grad().to(torch::kDouble).pow(2).sum().item<double>();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    torch::NoGradGuard ng;
    for (const auto& p : params) {
      if (p.grad().defined()) p.grad().mul_(scale);
    }
  }
  return norm;
}

void DistillationConfig::validate() const {
  if (w_hidden < 0.0 || w_decoder < 0.0) throw ValidationError(name + ": loss weights must be >= 0");
  if (!use_hidden && w_hidden != 0.0) throw ValidationError(name + ": hidden weight set but hidden term disabled");
  if (decoder_kind == losses::DecoderLossKind::none && w_decoder != 0.0) {
    throw ValidationError(name + ": decoder weight set without a decoder loss");
  }
  if (!use_hidden && (decoder_kind == losses::DecoderLossKind::none || w_decoder == 0.0)) {
    throw ValidationError(name + ": configuration has no active loss term");
  }
}

namespace {

std::string weight_text(double w) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", w);
  std::string s = buf;
  if (s.find('.') == std::string::npos && s.find('e') == std::string::npos) s += ".0";
  return s;
}

}  // namespace

nlohmann::json DistillationConfig::to_json() const {
  nlohmann::json j{{"name", name},
                   {"decoder_loss", losses::to_string(decoder_kind)},
                   {"mask_mode", losses::to_string(mask_mode)},
                   {"use_hidden", use_hidden},
                   {"w_decoder", w_decoder},
                   {"w_hidden", w_hidden}};
  std::string label;
  if (decoder_kind == losses::DecoderLossKind::mse) label = "MSE weight: " + weight_text(w_decoder) + "; ";
  if (decoder_kind == losses::DecoderLossKind::cross_entropy) {
    label = "CrossEntropy weight: " + weight_text(w_decoder) + "; ";
  }
  label += "Hidden Loss weight: " + weight_text(use_hidden ? w_hidden : 0.0);
  j["weights"] = label;
  return j;
}

DistillationConfig DistillationConfig::preset(const std::string& name) {
  using losses::DecoderLossKind;
  using losses::MaskMode;
  DistillationConfig d;
  d.name = name;
  auto set = [&](DecoderLossKind k, MaskMode m, bool hidden, double wd, double wh) {
    d.decoder_kind = k;
    d.mask_mode = m;
    d.use_hidden = hidden;
    d.w_decoder = wd;
    d.w_hidden = wh;
  };
  if (name == "TS-KD1") set(DecoderLossKind::mse, MaskMode::drop_last_channel, true, 0.2, 1.0);
  else if (name == "TS-KD2") set(DecoderLossKind::mse, MaskMode::interpolated, true, 0.1, 1.0);
  else if (name == "TS-KD3") set(DecoderLossKind::mse, MaskMode::uninterpolated, true, 0.001, 1.0);
  else if (name == "TS-KD4") set(DecoderLossKind::cross_entropy, MaskMode::interpolated, true, 1.0, 1.0);
  else if (name == "TS-KD5") set(DecoderLossKind::cross_entropy, MaskMode::interpolated, true, 1.0, 0.1);
  else if (name == "TS-KD6") set(DecoderLossKind::mse, MaskMode::interpolated, false, 0.1, 0.0);
  else if (name == "TS-KD7") set(DecoderLossKind::mse, MaskMode::interpolated, true, 0.1, 0.1);
  else if (name == "TS-KD8") set(DecoderLossKind::mse, MaskMode::interpolated, true, 0.2, 0.1);
  else if (name == "TA-KD") set(DecoderLossKind::none, MaskMode::interpolated, true, 0.0, 1.0);
  else throw ValidationError("unknown distillation config '" + name + "'");
  return d;
}

std::vector<std::string> DistillationConfig::preset_names() {
  return {"TS-KD1", "TS-KD2", "TS-KD3", "TS-KD4", "TS-KD5", "TS-KD6", "TS-KD7", "TS-KD8", "TA-KD"};
}

nlohmann::json RunRecord::to_json() const {
  return {{"stage", stage},
          {"config_hash", config_hash},
          {"seed", seed},
          {"params", params},
          {"curves", curves},
          {"wall_clock_s", wall_clock_s},
          {"checkpoint_id", checkpoint_id},
          {"metrics_id", metrics_id}};
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.stage = j.value("stage", std::string());
  r.config_hash = j.value("config_hash", std::string());
  r.seed = j.value("seed", std::uint64_t{0});
  r.params = j.value("params", nlohmann::json::object());
  if (j.contains("curves")) r.curves = j["curves"].get<std::map<std::string, std::vector<double>>>();
  r.wall_clock_s = j.value("wall_clock_s", 0.0);
  r.checkpoint_id = j.value("checkpoint_id", std::string());
  r.metrics_id = j.value("metrics_id", std::string());
  return r;
}

std::string RunRecord::curves_csv() const {
  std::string out = "iter";
  std::size_t rows = 0;
  for (const auto& [name, v] : curves) {
    out += "," + name;
    rows = std::max(rows, v.size());
  }
  out += "\n";
  char buf[40];
  for (std::size_t i = 0; i < rows; ++i) {
    out += std::to_string(i);
    for (const auto& [_, v] : curves) {
      out += ",";
      if (i < v.size()) {
        std::snprintf(buf, sizeof(buf), "%.10g", v[i]);
        out += buf;
      }
    }
    out += "\n";
  }
  return out;
}

std::vector<double> smooth(const std::vector<double>& v, std::size_t w) {
  if (w == 0) throw ValidationError("smoothing window must be >= 1");
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sum += v[i];
    if (i >= w) sum -= v[i - w];
    out[i] = sum / static_cast<double>(std::min(i + 1, w));
  }
  return out;
}

}  // namespace tskd::trainer
