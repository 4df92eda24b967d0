#include "tskd/losses/losses.hpp"

#include <sstream>

#include "tskd/error.hpp"
#include "tskd/models/models.hpp"

namespace F = torch::nn::functional;

namespace tskd::losses {

namespace {

void check_seg_pair(const torch::Tensor& logits, const torch::Tensor& mask) {
  if (logits.dim() != 4 || mask.dim() != 3) throw ValidationError("expected logits B×C×H×W and mask B×H×W");
  if (logits.size(0) != mask.size(0) || logits.size(2) != mask.size(1) || logits.size(3) != mask.size(2)) {
    std::ostringstream os;
    os << "logits " << logits.sizes() << " and mask " << mask.sizes() << " are misaligned";
    throw ValidationError(os.str());
  }
  if (logits.size(1) < 2) throw ValidationError("segmentation losses need C >= 2");
  if (mask.numel() > 0 && mask.max().item<std::int64_t>() >= logits.size(1)) {
    throw ValidationError("mask holds a class index >= logit channel count");
  }
}

}  // namespace

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& mask) {
  check_seg_pair(logits, mask);
  return F::nll_loss(torch::log_softmax(logits, 1), mask.to(torch::kLong));
}

torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& mask) {
  check_seg_pair(logits, mask);
  const auto classes = logits.size(1);
  auto probs = torch::softmax(logits, 1);
  auto onehot = F::one_hot(mask.to(torch::kLong), classes).permute({0, 3, 1, 2}).to(probs.dtype());
  const std::vector<std::int64_t> dims{0, 2, 3};
  auto inter = (probs * onehot).sum(dims);
  auto denom = probs.sum(dims) + onehot.sum(dims);
  auto dice = (2.0 * inter + kDiceEpsilon) / (denom + kDiceEpsilon);
  return 1.0 - dice.mean();
}

torch::Tensor ce_dice_loss(const torch::Tensor& logits, const torch::Tensor& mask, const SupervisedLossWeights& w) {
  if (w.ce < 0.0 || w.dice < 0.0) throw ValidationError("loss weights must be non-negative");
  return w.ce * cross_entropy(logits, mask) + w.dice * soft_dice_loss(logits, mask);
}

HiddenProjectionImpl::HiddenProjectionImpl(std::int64_t student_dim, std::int64_t teacher_dim) {
  weight = register_parameter("weight", torch::empty({student_dim, teacher_dim}));
  torch::nn::init::normal_(weight, 0.0, 1.0 / std::sqrt(static_cast<double>(student_dim)));
}

torch::Tensor HiddenProjectionImpl::forward(const torch::Tensor& h) const { return torch::matmul(h, weight); }

std::optional<HiddenProjection> make_projection(std::int64_t student_dim, std::int64_t teacher_dim) {
  if (student_dim == teacher_dim) return std::nullopt;
  return HiddenProjection(student_dim, teacher_dim);
}

torch::Tensor encoder_kd_loss(const torch::Tensor& h_student, const torch::Tensor& h_teacher,
                              const std::optional<HiddenProjection>& proj) {
  if (h_student.dim() != 4 || h_teacher.dim() != 4) throw ValidationError("hidden states must be B×g×g×d");
  if (h_student.size(0) != h_teacher.size(0) || h_student.size(1) != h_teacher.size(1) ||
      h_student.size(2) != h_teacher.size(2)) {
    std::ostringstream os;
    os << "token grid mismatch: student " << h_student.sizes() << " vs teacher " << h_teacher.sizes();
    throw ConfigError(os.str());
  }
  auto hs = proj ? (*proj)->forward(h_student) : h_student;
  if (hs.size(3) != h_teacher.size(3)) {
    throw ConfigError("hidden widths differ (" + std::to_string(hs.size(3)) + " vs " +
                      std::to_string(h_teacher.size(3)) + ") and no projection was given");
  }
  return (hs - h_teacher).pow(2).mean();
}

std::string to_string(DecoderLossKind k) {
  switch (k) {
    case DecoderLossKind::mse: return "mse";
    case DecoderLossKind::cross_entropy: return "cross_entropy";
    case DecoderLossKind::none: return "none";
  }
  return "unknown";
}

std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::interpolated: return "interpolated";
    case MaskMode::uninterpolated: return "uninterpolated";
    case MaskMode::drop_last_channel: return "drop_last_channel";
  }
  return "unknown";
}

DecoderLossKind decoder_kind_from_string(const std::string& s) {
  if (s == "mse") return DecoderLossKind::mse;
  if (s == "cross_entropy") return DecoderLossKind::cross_entropy;
  if (s == "none") return DecoderLossKind::none;
  throw ValidationError("unknown decoder loss kind '" + s + "'");
}

MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "interpolated") return MaskMode::interpolated;
  if (s == "uninterpolated") return MaskMode::uninterpolated;
  if (s == "drop_last_channel") return MaskMode::drop_last_channel;
  throw ValidationError("unknown mask mode '" + s + "'");
}

std::pair<torch::Tensor, torch::Tensor> align_logits(const torch::Tensor& y_student, const torch::Tensor& y_teacher,
                                                     MaskMode mode) {
  if (y_student.dim() != 4 || y_teacher.dim() != 4 || y_student.size(0) != y_teacher.size(0)) {
    throw ValidationError("decoder logits must be B×C×H×W with equal batch");
  }
  auto teacher = y_teacher;
  if (mode == MaskMode::drop_last_channel) {
    if (teacher.size(1) != y_student.size(1) + 1) {
      throw ValidationError("drop_last_channel expects teacher channels = student channels + 1");
    }
    teacher = teacher.narrow(1, 0, y_student.size(1));
  }
  if (teacher.size(1) != y_student.size(1)) {
    throw ValidationError("class channel mismatch: student " + std::to_string(y_student.size(1)) + " vs teacher " +
                          std::to_string(teacher.size(1)));
  }
  if (y_student.size(2) != y_student.size(3) || teacher.size(2) != teacher.size(3)) {
    throw ValidationError("decoder logits must be square");
  }
  switch (mode) {
    case MaskMode::interpolated:
    case MaskMode::drop_last_channel:
      return {y_student, resize_logits(teacher, y_student.size(2))};
    case MaskMode::uninterpolated: {
      if (y_student.size(2) % teacher.size(2) != 0) {
        throw ValidationError("student resolution must be a multiple of the teacher resolution");
      }
      auto pooled = F::adaptive_avg_pool2d(
          y_student, F::AdaptiveAvgPool2dFuncOptions(std::vector<std::int64_t>{teacher.size(2), teacher.size(3)}));
      return {pooled, teacher};
    }
  }
  throw ValidationError("unknown mask mode");
}

torch::Tensor decoder_kd_loss(const torch::Tensor& y_student, const torch::Tensor& y_teacher, DecoderLossKind kind,
                              MaskMode mode) {
  auto [s, t] = align_logits(y_student, y_teacher, mode);
  switch (kind) {
    case DecoderLossKind::mse: return (s - t).pow(2).mean();
    case DecoderLossKind::cross_entropy:
      return -(torch::softmax(t, 1) * torch::log_softmax(s, 1)).sum(1).mean();
    case DecoderLossKind::none: throw ValidationError("decoder loss kind 'none' has no value");
  }
  throw ValidationError("unknown decoder loss kind");
}

KDLossTerms combine_kd(torch::Tensor encoder_loss, torch::Tensor decoder_loss, double w_hidden, double w_decoder,
                       DecoderLossKind kind) {
  KDLossTerms terms;
  terms.encoder_loss = std::move(encoder_loss);
  terms.decoder_loss = std::move(decoder_loss);
  terms.w_hidden = w_hidden;
  terms.w_decoder = w_decoder;
  terms.decoder_kind = kind;
  torch::Tensor total;
  if (terms.encoder_loss.defined()) total = w_hidden * terms.encoder_loss;
  if (terms.decoder_loss.defined()) {
    auto d = w_decoder * terms.decoder_loss;
    total = total.defined() ? total + d : d;
  }
  if (!total.defined()) throw ValidationError("distillation config enables no loss term");
  terms.weighted_total = total;
  return terms;
}

torch::Tensor contrastive_loss_from_similarities(const torch::Tensor& positives, const torch::Tensor& negatives,
                                                 double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
  if (positives.dim() != 1 || negatives.dim() != 2 || negatives.size(0) != positives.size(0)) {
    throw ValidationError("expected positives N and negatives N×K");
  }
  auto logits = torch::cat({positives.unsqueeze(1), negatives}, 1) / temperature;
  return -torch::log_softmax(logits, 1).select(1, 0).mean();
}

torch::Tensor moco_loss(const torch::Tensor& queries, const torch::Tensor& positive_keys,
                        const torch::Tensor& negative_keys, double temperature) {
  if (queries.dim() != 2 || positive_keys.sizes() != queries.sizes() || negative_keys.dim() != 2 ||
      negative_keys.size(1) != queries.size(1)) {
    throw ValidationError("expected queries N×D, positive keys N×D, negative keys K×D");
  }
  auto normalize = [](const torch::Tensor& t, const char* what) {
    auto norms = t.norm(2, 1, /*keepdim=*/true);
    if ((norms <= 1e-12).any().item<bool>()) throw ValidationError(std::string("zero-norm ") + what + " embedding");
    return t / norms;
  };
  auto q = normalize(queries, "query");
  auto kp = normalize(positive_keys, "positive key");
  auto kn = normalize(negative_keys, "negative key");
  return contrastive_loss_from_similarities((q * kp).sum(1), torch::matmul(q, kn.t()), temperature);
}

void momentum_update(std::vector<torch::Tensor>& key_params, const std::vector<torch::Tensor>& query_params,
                     double m) {
  if (key_params.size() != query_params.size()) throw ValidationError("momentum_update: parameter count mismatch");
  if (!(m >= 0.0 && m <= 1.0)) throw ValidationError("momentum must be in [0,1]");
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < key_params.size(); ++i) {
    if (key_params[i].sizes() != query_params[i].sizes()) throw ValidationError("momentum_update: shape mismatch");
    key_params[i].mul_(m).add_(query_params[i].detach(), 1.0 - m);
  }
}

torch::Tensor patchify(const torch::Tensor& images, std::int64_t patch) {
  const auto b = images.size(0), c = images.size(1), h = images.size(2), w = images.size(3);
  if (h % patch != 0 || w % patch != 0) throw ValidationError("image size not divisible by patch size");
  const auto gh = h / patch, gw = w / patch;
  return images.reshape({b, c, gh, patch, gw, patch})
      .permute({0, 2, 4, 1, 3, 5})
      .reshape({b, gh * gw, c * patch * patch});
}

torch::Tensor unpatchify(const torch::Tensor& patches, std::int64_t patch, std::int64_t channels) {
  const auto b = patches.size(0), n = patches.size(1);
  const auto g = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (g * g != n) throw ValidationError("unpatchify expects a square patch grid");
  return patches.reshape({b, g, g, channels, patch, patch})
      .permute({0, 3, 1, 4, 2, 5})
      .reshape({b, channels, g * patch, g * patch});
}

torch::Tensor mae_loss(const torch::Tensor& original, const torch::Tensor& reconstruction,
                       const torch::Tensor& masked, std::int64_t patch, MaeLossScope scope) {
  if (original.sizes() != reconstruction.sizes()) throw ValidationError("mae_loss: shape mismatch");
  auto target = patchify(original, patch);
  auto pred = patchify(reconstruction, patch);
  if (masked.dim() != 2 || masked.size(0) != target.size(0) || masked.size(1) != target.size(1)) {
    throw ValidationError("mae_loss: mask must be B×N");
  }
  auto per_patch = (pred - target).pow(2).mean(-1);  // B×N
  if (scope == MaeLossScope::all) return per_patch.mean();
  auto m = masked.to(per_patch.dtype());
  const auto count = m.sum();
  if (count.item<double>() <= 0.0) throw ValidationError("mae_loss: empty mask set");
  return (per_patch * m).sum() / count;
}

}  // namespace tskd::losses
