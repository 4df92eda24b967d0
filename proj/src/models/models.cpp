#include "tskd/models/models.hpp"

#include <sstream>

#include "tskd/error.hpp"

namespace F = torch::nn::functional;

namespace tskd {

torch::Tensor resize_logits(const torch::Tensor& logits, std::int64_t size) {
  if (logits.size(2) == size && logits.size(3) == size) return logits;
  return F::interpolate(logits, F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{size, size})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
}

ViTEncoderImpl::ViTEncoderImpl(ViTEncoderConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  patch_embed = register_module(
      "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.in_channels, cfg_.embed_dim, cfg_.patch_size)
                                           .stride(cfg_.patch_size)));
  pos_embed = register_parameter("pos_embed", torch::randn({1, cfg_.tokens(), cfg_.embed_dim}) * 0.02);
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < cfg_.depth; ++i) blocks->push_back(Block(cfg_.embed_dim, cfg_.heads, cfg_.mlp_ratio));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.embed_dim}).eps(1e-6)));
  init_vit_weights(*this);
}

void ViTEncoderImpl::check_input(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != cfg_.in_channels || images.size(2) != cfg_.image_size ||
      images.size(3) != cfg_.image_size) {
    std::ostringstream os;
    os << "encoder expects B×" << cfg_.in_channels << "×" << cfg_.image_size << "×" << cfg_.image_size
       << " input, got " << images.sizes();
    throw ConfigError(os.str());
  }
}

torch::Tensor ViTEncoderImpl::embed(const torch::Tensor& images) {
  check_input(images);
  auto x = patch_embed->forward(images);    // B×d×g×g
  x = x.flatten(2).transpose(1, 2);          // B×N×d
  return x + pos_embed;
}

torch::Tensor ViTEncoderImpl::encode_tokens(const torch::Tensor& tokens) {
  auto x = tokens;
  for (const auto& block : *blocks) x = block->as<Block>()->forward(x);
  return norm->forward(x);
}

EncoderOutput ViTEncoderImpl::forward(const torch::Tensor& images) {
  auto x = encode_tokens(embed(images));
  const auto g = cfg_.grid();
  return {x.reshape({x.size(0), g, g, cfg_.embed_dim})};
}

FPNHeadImpl::FPNHeadImpl(std::int64_t embed_dim, std::int64_t channels, std::int64_t classes,
                         std::int64_t image_size_)
    : image_size(image_size_) {
  lateral_down = register_module("lateral_down", torch::nn::Conv2d(torch::nn::Conv2dOptions(embed_dim, channels, 1)));
  lateral_mid = register_module("lateral_mid", torch::nn::Conv2d(torch::nn::Conv2dOptions(embed_dim, channels, 1)));
  up1 = register_module("up1", torch::nn::ConvTranspose2d(
                                   torch::nn::ConvTranspose2dOptions(embed_dim, channels, 2).stride(2)));
  up2 = register_module("up2", torch::nn::ConvTranspose2d(
                                   torch::nn::ConvTranspose2dOptions(channels, channels, 2).stride(2)));
  smooth = register_module("smooth",
                           torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
  classifier = register_module("classifier", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, classes, 1)));
}

torch::Tensor FPNHeadImpl::forward(const torch::Tensor& features) {
  if (features.size(1) < 2) throw ConfigError("FPN head needs a token grid of at least 2×2");
  const auto x = features.permute({0, 3, 1, 2});
  auto upsample2 = [](const torch::Tensor& t) {
    return F::interpolate(t, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
  };
  // Pyramid from the single final-layer map.
  auto p_down = lateral_down->forward(F::max_pool2d(x, F::MaxPool2dFuncOptions(2)));
  auto p_mid = lateral_mid->forward(x);
  auto p_up1 = up1->forward(x);
  auto p_up2 = up2->forward(torch::gelu(p_up1));
  // Top-down fusion.
  auto t = p_down;
  t = p_mid + F::interpolate(t, F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{p_mid.size(2), p_mid.size(3)})
                                    .mode(torch::kNearest));
  t = p_up1 + upsample2(t);
  t = p_up2 + upsample2(t);
  t = torch::gelu(smooth->forward(t));
  return resize_logits(classifier->forward(t), image_size);
}

StudentModelImpl::StudentModelImpl(ViTEncoderConfig cfg, std::int64_t classes, std::int64_t fpn_channels)
    : classes_(classes) {
  if (classes < 2) throw ConfigError("student needs at least 2 classes");
  encoder = register_module("encoder", ViTEncoder(cfg));
  head = register_module("head", FPNHead(cfg.embed_dim, fpn_channels, classes, cfg.image_size));
}

StudentOutput StudentModelImpl::forward(const torch::Tensor& images) {
  auto enc = encoder->forward(images);
  auto logits = head->forward(enc.tokens);
  return {enc, {logits, Resolution::full}};
}

MaskDecoderImpl::MaskDecoderImpl(const ViTEncoderConfig& cfg, std::int64_t classes)
    : low_size(cfg.image_size / 4) {
  if (cfg.image_size % 4 != 0) throw ConfigError("teacher image size must be divisible by 4");
  const auto d = cfg.embed_dim;
  const auto c = std::max<std::int64_t>(8, d / 4);
  block = register_module("block", Block(d, cfg.heads, cfg.mlp_ratio));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d}).eps(1e-6)));
  upscale = register_module("upscale",
                            torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(d, c, 2).stride(2)));
  refine = register_module("refine", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 3).padding(1)));
  class_head = register_module("class_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, classes, 1)));
  objectness_head = register_module("objectness_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 1, 1)));
  init_vit_weights(*this);
}

torch::Tensor MaskDecoderImpl::forward(const torch::Tensor& tokens) {
  const auto b = tokens.size(0);
  const auto g = tokens.size(1);
  const auto d = tokens.size(3);
  auto x = norm->forward(block->forward(tokens.reshape({b, g * g, d})));
  auto grid = x.transpose(1, 2).reshape({b, d, g, g});
  auto up = torch::gelu(refine->forward(torch::gelu(upscale->forward(grid))));
  up = resize_logits(up, low_size);
  return torch::cat({class_head->forward(up), objectness_head->forward(up)}, 1);
}

TeacherModelImpl::TeacherModelImpl(ViTEncoderConfig cfg, std::int64_t classes) : classes_(classes) {
  if (classes < 2) throw ConfigError("teacher needs at least 2 classes");
  encoder = register_module("encoder", ViTEncoder(cfg));
  decoder = register_module("decoder", MaskDecoder(cfg, classes));
}

TeacherOutput TeacherModelImpl::forward(const torch::Tensor& images) {
  auto enc = encoder->forward(images);
  auto raw = decoder->forward(enc.tokens);
  return {enc, {raw.narrow(1, 0, classes_), Resolution::low}, raw};
}

}  // namespace tskd
