#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "detail.hpp"
#include "tskd/error.hpp"
#include "tskd/trainer/trainer.hpp"

namespace tskd::trainer {

namespace F = torch::nn::functional;

namespace {

torch::nn::Sequential mlp(std::int64_t in, std::int64_t hidden, std::int64_t out) {
  return torch::nn::Sequential(torch::nn::Linear(in, hidden), torch::nn::GELU(), torch::nn::Linear(hidden, out));
}

void copy_params(torch::nn::Module& dst, torch::nn::Module& src) {
  torch::NoGradGuard ng;
  auto d = dst.parameters();
  auto s = src.parameters();
  for (std::size_t i = 0; i < d.size(); ++i) d[i].copy_(s[i]);
}

// Random resized crop, flip and intensity jitter, one draw stream per call.
torch::Tensor make_view(const torch::Tensor& images, std::mt19937_64& rng) {
  const auto size = images.size(2);
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < images.size(0); ++i) {
    const auto side = std::max<std::int64_t>(
        2, static_cast<std::int64_t>(std::lround(static_cast<double>(size) * uniform(rng, 0.6, 1.0))));
    const auto oy = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(size - side + 1));
    const auto ox = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(size - side + 1));
    auto x = images[i].narrow(1, oy, side).narrow(2, ox, side).unsqueeze(0);
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{size, size})
                              .mode(torch::kBilinear)
                              .align_corners(false))
            .squeeze(0);
    if (rng() & 1) x = x.flip({2});
    const double contrast = uniform(rng, 0.8, 1.2);
    const double brightness = uniform(rng, -0.1, 0.1);
    out.push_back((x * contrast + brightness).clamp(0.0, 1.0));
  }
  return torch::stack(out);
}

}  // namespace

TrainedStudent pretrain_moco(StudentModel student, const TransferSet& transfer, const Schedule& sched,
                             const MocoOptions& opts, std::uint64_t seed) {
  sched.validate("pretrain_moco");
  if (transfer.empty()) throw ValidationError("pretrain_moco: transfer set is empty");
  if (opts.queue_size < sched.batch_size) {
    throw ValidationError("MoCo queue size " + std::to_string(opts.queue_size) + " is smaller than batch size " +
                          std::to_string(sched.batch_size));
  }
  if (!(opts.momentum >= 0.0 && opts.momentum <= 1.0)) throw ValidationError("MoCo momentum must lie in [0,1]");
  if (!(opts.temperature > 0.0)) throw ValidationError("MoCo temperature must be > 0");
  detail::Stopwatch clock;
  const SeedStream seeds(seed);
  const auto& cfg = student->encoder->config();
  const auto d = cfg.embed_dim;

  torch::manual_seed(seeds.derive("moco_heads"));
  auto proj = mlp(d, d, opts.embed_dim);
  auto pred = mlp(opts.embed_dim, opts.embed_dim, opts.embed_dim);
  auto key_encoder = ViTEncoder(cfg);
  auto key_proj = mlp(d, d, opts.embed_dim);
  copy_params(*key_encoder, *student->encoder);
  copy_params(*key_proj, *proj);
  for (auto& p : key_encoder->parameters()) p.set_requires_grad(false);
  for (auto& p : key_proj->parameters()) p.set_requires_grad(false);

  auto gen = at::make_generator<at::CPUGeneratorImpl>(seeds.derive("moco_queue"));
  auto queue = F::normalize(torch::randn({opts.queue_size, opts.embed_dim}, gen, torch::kFloat),
                            F::NormalizeFuncOptions().dim(1));
  std::int64_t queue_ptr = 0;

  std::vector<torch::Tensor> params = detail::trainable(student->encoder->parameters());
  for (auto& p : proj->parameters()) params.push_back(p);
  for (auto& p : pred->parameters()) params.push_back(p);
  std::vector<torch::Tensor> query_side = student->encoder->parameters();
  for (auto& p : proj->parameters()) query_side.push_back(p);
  std::vector<torch::Tensor> key_side = key_encoder->parameters();
  for (auto& p : key_proj->parameters()) key_side.push_back(p);

  const auto images = transfer.batch();
  const auto n = images.size(0);
  const auto iters = sched.total_iters(n);
  auto opt = make_optimizer(sched, params);
  detail::EpochBatches batches(n, sched.batch_size, seeds.engine("data_order"));
  auto view_rng = seeds.engine("views");
  auto pooled = [](const EncoderOutput& e) { return e.tokens.mean({1, 2}); };

  TrainedStudent out{student, {}};
  out.record.stage = "pretrain_moco";
  out.record.seed = seed;
  out.record.params = {{"stage", "pretrain_moco"}, {"schedule", schedule_to_json(sched)}, {"iterations", iters},
                       {"samples", n}, {"temperature", opts.temperature}, {"momentum", opts.momentum},
                       {"queue_size", opts.queue_size}, {"embed_dim", opts.embed_dim}};
  auto& curve = out.record.curves["loss"];
  student->train();
  for (std::int64_t k = 0; k < iters; ++k) {
    auto x = images.index_select(0, batches.next());
    auto v1 = make_view(x, view_rng);
    auto v2 = make_view(x, view_rng);
    auto q1 = pred->forward(proj->forward(pooled(student->encoder->forward(v1))));
    auto q2 = pred->forward(proj->forward(pooled(student->encoder->forward(v2))));
    torch::Tensor k1, k2;
    {
      torch::NoGradGuard ng;
      k1 = key_proj->forward(pooled(key_encoder->forward(v1)));
      k2 = key_proj->forward(pooled(key_encoder->forward(v2)));
    }
    auto loss = 0.5 * (losses::moco_loss(q1, k2, queue, opts.temperature) +
                       losses::moco_loss(q2, k1, queue, opts.temperature));
    curve.push_back(detail::finite_or_throw(loss, "pretrain_moco", k));
    set_learning_rate(*opt, learning_rate(sched, k, iters));
    opt->zero_grad();
    loss.backward();
    clip_grad_norm(params, sched.grad_clip);
    opt->step();
    losses::momentum_update(key_side, query_side, opts.momentum);
    {
      torch::NoGradGuard ng;
      auto keys = F::normalize(k2, F::NormalizeFuncOptions().dim(1));
      for (std::int64_t i = 0; i < keys.size(0); ++i) {
        queue[queue_ptr].copy_(keys[i]);
        queue_ptr = (queue_ptr + 1) % opts.queue_size;
      }
    }
  }
  student->eval();
  out.record.config_hash = hash_json(out.record.params);
  out.record.wall_clock_s = clock.seconds();
  return out;
}

TrainedStudent pretrain_mae(StudentModel student, const TransferSet& transfer, const Schedule& sched,
                            const MaeOptions& opts, std::uint64_t seed) {
  sched.validate("pretrain_mae");
  if (transfer.empty()) throw ValidationError("pretrain_mae: transfer set is empty");
  const auto& cfg = student->encoder->config();
  const auto tokens = cfg.tokens();
  if (!(opts.mask_ratio > 0.0 && opts.mask_ratio < 1.0)) {
    throw ValidationError("MAE mask ratio must lie in (0,1)");
  }
  const auto masked_count = static_cast<std::int64_t>(std::lround(opts.mask_ratio * static_cast<double>(tokens)));
  const auto keep = tokens - masked_count;
  if (masked_count < 1 || keep < 1) {
    throw ValidationError("MAE mask ratio " + std::to_string(opts.mask_ratio) + " leaves " +
                          std::to_string(masked_count) + " masked of " + std::to_string(tokens) + " patches");
  }
  if (opts.decoder_dim % 4 != 0) throw ValidationError("MAE decoder_dim must be divisible by 4");
  detail::Stopwatch clock;
  const SeedStream seeds(seed);
  const auto p = cfg.patch_size;
  const auto ppc = p * p * cfg.in_channels;

  torch::manual_seed(seeds.derive("mae_decoder"));
  torch::nn::Linear dec_embed(cfg.embed_dim, opts.decoder_dim);
  auto mask_token = (torch::randn({1, 1, opts.decoder_dim}) * 0.02).set_requires_grad(true);
  auto dec_pos = (torch::randn({1, tokens, opts.decoder_dim}) * 0.02).set_requires_grad(true);
  Block dec_block(opts.decoder_dim, 4, 2.0);
  torch::nn::LayerNorm dec_norm(torch::nn::LayerNormOptions({opts.decoder_dim}));
  torch::nn::Linear dec_pred(opts.decoder_dim, ppc);

  std::vector<torch::Tensor> params = detail::trainable(student->encoder->parameters());
  for (auto& t : dec_embed->parameters()) params.push_back(t);
  params.push_back(mask_token);
  params.push_back(dec_pos);
  for (auto& t : dec_block->parameters()) params.push_back(t);
  for (auto& t : dec_norm->parameters()) params.push_back(t);
  for (auto& t : dec_pred->parameters()) params.push_back(t);

  const auto images = transfer.batch();
  const auto n = images.size(0);
  const auto iters = sched.total_iters(n);
  auto opt = make_optimizer(sched, params);
  detail::EpochBatches batches(n, sched.batch_size, seeds.engine("data_order"));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seeds.derive("mae_mask"));

  TrainedStudent out{student, {}};
  out.record.stage = "pretrain_mae";
  out.record.seed = seed;
  out.record.params = {{"stage", "pretrain_mae"}, {"schedule", schedule_to_json(sched)}, {"iterations", iters},
                       {"samples", n}, {"mask_ratio", opts.mask_ratio}, {"masked_patches", masked_count},
                       {"loss_scope", opts.scope == MaeLossScope::all ? "all" : "masked_only"}};
  auto& curve = out.record.curves["loss"];
  student->train();
  for (std::int64_t k = 0; k < iters; ++k) {
    auto x = images.index_select(0, batches.next());
    const auto b = x.size(0);
    auto noise = torch::rand({b, tokens}, gen, torch::kFloat);
    auto shuffle = noise.argsort(static_cast<std::int64_t>(1));
    auto restore = shuffle.argsort(static_cast<std::int64_t>(1));
    auto keep_idx = shuffle.narrow(1, 0, keep);
    auto emb = student->encoder->embed(x);
    auto visible = emb.gather(1, keep_idx.unsqueeze(-1).expand({b, keep, cfg.embed_dim}));
    auto latent = dec_embed->forward(student->encoder->encode_tokens(visible));
    auto full = torch::cat(std::vector<torch::Tensor>{latent, mask_token.expand({b, masked_count, opts.decoder_dim})}, 1);
    full = full.gather(1, restore.unsqueeze(-1).expand({b, tokens, opts.decoder_dim})) + dec_pos;
    auto rec = dec_pred->forward(dec_norm->forward(dec_block->forward(full)));
    auto recon = losses::unpatchify(rec, p, cfg.in_channels);
    auto masked = torch::ones({b, tokens}, torch::kBool);
    masked.narrow(1, 0, keep).fill_(false);
    masked = masked.gather(1, restore);
    auto loss = losses::mae_loss(x, recon, masked, p, opts.scope);
    curve.push_back(detail::finite_or_throw(loss, "pretrain_mae", k));
    set_learning_rate(*opt, learning_rate(sched, k, iters));
    opt->zero_grad();
    loss.backward();
    clip_grad_norm(params, sched.grad_clip);
    opt->step();
  }
  student->eval();
  out.record.config_hash = hash_json(out.record.params);
  out.record.wall_clock_s = clock.seconds();
  return out;
}

}  // namespace tskd::trainer
