#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "tskd/core/config.hpp"

namespace tskd::losses {

inline constexpr double kDiceEpsilon = 1e-5;

struct SupervisedLossWeights {
  double ce = 0.2;
  double dice = 0.8;
};

/// Pixel-mean cross-entropy of logits B×C×H×W against integer mask B×H×W.
torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& mask);

/// 1 − mean_c (2Σp·g + ε)/(Σp + Σg + ε), softmax p, one-hot g, sums over the
/// whole batch per class, background included.
torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& mask);

/// λ₁·CE + λ₂·soft Dice.
torch::Tensor ce_dice_loss(const torch::Tensor& logits, const torch::Tensor& mask,
                           const SupervisedLossWeights& w = {});

/// Trainable student→teacher width map (no bias); only needed when widths differ.
class HiddenProjectionImpl : public torch::nn::Module {
 public:
  HiddenProjectionImpl(std::int64_t student_dim, std::int64_t teacher_dim);
  torch::Tensor forward(const torch::Tensor& h) const;

  torch::Tensor weight;  // d_S×d_T
};
TORCH_MODULE(HiddenProjection);

/// Present iff the widths differ.
std::optional<HiddenProjection> make_projection(std::int64_t student_dim, std::int64_t teacher_dim);

/// Mean over all N elements of (proj(h_s) − h_t)². Token grids must match.
torch::Tensor encoder_kd_loss(const torch::Tensor& h_student, const torch::Tensor& h_teacher,
                              const std::optional<HiddenProjection>& proj = std::nullopt);

enum class DecoderLossKind { mse, cross_entropy, none };
enum class MaskMode { interpolated, uninterpolated, drop_last_channel };

std::string to_string(DecoderLossKind k);
std::string to_string(MaskMode m);
DecoderLossKind decoder_kind_from_string(const std::string& s);
MaskMode mask_mode_from_string(const std::string& s);

/// Aligns teacher and student logits per `mode`:
///  interpolated       teacher bilinearly resized to the student resolution;
///  uninterpolated     student average-pooled down to the teacher resolution;
///  drop_last_channel  teacher carries C+1 channels, the last is dropped,
///                     then teacher resized to the student resolution.
/// Returns (student, teacher) at a common shape.
std::pair<torch::Tensor, torch::Tensor> align_logits(const torch::Tensor& y_student, const torch::Tensor& y_teacher,
                                                     MaskMode mode);

/// mse: mean over M elements of (y_s − y_t)²;
/// cross_entropy: pixel-mean of −Σ_c softmax(y_t)·log softmax(y_s).
torch::Tensor decoder_kd_loss(const torch::Tensor& y_student, const torch::Tensor& y_teacher,
                              DecoderLossKind kind, MaskMode mode);

struct KDLossTerms {
  torch::Tensor encoder_loss;   // undefined when the hidden term is off
  torch::Tensor decoder_loss;   // undefined when the decoder term is off
  torch::Tensor weighted_total;
  double w_hidden = 0.0;
  double w_decoder = 0.0;
  DecoderLossKind decoder_kind = DecoderLossKind::mse;
};

/// weighted_total = w_hidden·encoder + w_decoder·decoder; undefined terms
/// contribute nothing.
KDLossTerms combine_kd(torch::Tensor encoder_loss, torch::Tensor decoder_loss, double w_hidden,
                       double w_decoder, DecoderLossKind kind);

/// InfoNCE on precomputed similarities: positives (N), negatives (N×K).
/// −log(exp(s₊/τ) / (exp(s₊/τ) + Σ_i exp(s_i/τ))), averaged over N.
torch::Tensor contrastive_loss_from_similarities(const torch::Tensor& positives, const torch::Tensor& negatives,
                                                 double temperature);

/// Queries N×D, positive keys N×D, negative keys K×D. Embeddings are
/// L2-normalized here; a zero-norm embedding is an error.
torch::Tensor moco_loss(const torch::Tensor& queries, const torch::Tensor& positive_keys,
                        const torch::Tensor& negative_keys, double temperature);

/// key ← m·key + (1−m)·query, elementwise, in place.
void momentum_update(std::vector<torch::Tensor>& key_params, const std::vector<torch::Tensor>& query_params,
                     double m);

/// Images B×C×H×W to patches B×N×(C·p·p), row-major patch order.
torch::Tensor patchify(const torch::Tensor& images, std::int64_t patch);
torch::Tensor unpatchify(const torch::Tensor& patches, std::int64_t patch, std::int64_t channels);

/// Per-patch pixel-mean squared error, then mean over masked patches
/// (`masked_only`) or over all patches (`all`). `masked` is B×N bool.
torch::Tensor mae_loss(const torch::Tensor& original, const torch::Tensor& reconstruction,
                       const torch::Tensor& masked, std::int64_t patch,
                       MaeLossScope scope = MaeLossScope::masked_only);

}  // namespace tskd::losses
