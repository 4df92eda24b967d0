#include <doctest.h>

#include <cmath>

#include <torch/torch.h>

#include "tskd/error.hpp"
#include "tskd/losses/losses.hpp"

using namespace tskd;
using namespace tskd::losses;

TEST_SUITE("losses") {
  TEST_CASE("cross entropy matches a per-pixel loop") {
    auto logits = torch::randn({1, 3, 2, 2}, torch::kDouble);
    auto mask = torch::tensor({0, 2, 1, 1}, torch::kLong).view({1, 2, 2});
    double ref = 0;
    for (int i = 0; i < 4; ++i) {
      const int y = i / 2, x = i % 2;
      double z = 0;
      for (int c = 0; c < 3; ++c) z += std::exp(logits[0][c][y][x].item<double>());
      ref -= logits[0][mask[0][y][x].item<long>()][y][x].item<double>() - std::log(z);
    }
    CHECK(cross_entropy(logits, mask).item<double>() == doctest::Approx(ref / 4));
  }

  TEST_CASE("soft dice is near zero for confident correct predictions") {
    auto mask = torch::randint(0, 3, {2, 8, 8}, torch::kLong);
    auto logits = 50.0 * torch::one_hot(mask, 3).permute({0, 3, 1, 2}).to(torch::kDouble);
    CHECK(soft_dice_loss(logits, mask).item<double>() < 1e-6);
    CHECK(ce_dice_loss(logits, mask).item<double>() < 1e-6);
  }

  TEST_CASE("encoder loss uses a projection only when widths differ") {
    CHECK_FALSE(make_projection(8, 8).has_value());
    auto proj = make_projection(8, 12);
    REQUIRE(proj.has_value());
    auto hs = torch::randn({2, 2, 2, 8}), ht = torch::randn({2, 2, 2, 12});
    CHECK(encoder_kd_loss(hs, ht, proj).dim() == 0);
    CHECK(encoder_kd_loss(hs, hs).item<double>() == 0.0);
    CHECK(encoder_kd_loss(hs, hs + 1).item<double>() == doctest::Approx(1.0));
  }

  TEST_CASE("logit alignment modes") {
    auto ys = torch::randn({1, 3, 16, 16}), yt = torch::randn({1, 3, 4, 4}), yt1 = torch::randn({1, 4, 4, 4});
    auto [a1, b1] = align_logits(ys, yt, MaskMode::interpolated);
    CHECK(b1.sizes() == torch::IntArrayRef{1, 3, 16, 16});
    auto [a2, b2] = align_logits(ys, yt, MaskMode::uninterpolated);
    CHECK(a2.sizes() == torch::IntArrayRef{1, 3, 4, 4});
    CHECK(a2[0][1][0][0].item<double>() == doctest::Approx(ys[0][1].slice(0, 0, 4).slice(1, 0, 4).mean().item<double>()));
    auto [a3, b3] = align_logits(ys, yt1, MaskMode::drop_last_channel);
    CHECK(b3.size(1) == 3);
    CHECK_THROWS(align_logits(ys, yt1, MaskMode::interpolated));
  }

  TEST_CASE("decoder kd losses") {
    auto y = torch::randn({1, 3, 4, 4}, torch::kDouble);
    CHECK(decoder_kd_loss(y, y, DecoderLossKind::mse, MaskMode::uninterpolated).item<double>() == 0.0);
    auto p = torch::softmax(y, 1);
    const double entropy = (-(p * torch::log_softmax(y, 1)).sum(1).mean()).item<double>();
    CHECK(decoder_kd_loss(y, y, DecoderLossKind::cross_entropy, MaskMode::uninterpolated).item<double>() ==
          doctest::Approx(entropy));
  }

  TEST_CASE("combine_kd weights and skips undefined terms") {
    auto e = torch::tensor(2.0), d = torch::tensor(3.0);
    CHECK(combine_kd(e, d, 0.5, 0.1, DecoderLossKind::mse).weighted_total.item<double>() == doctest::Approx(1.3));
    CHECK(combine_kd(e, torch::Tensor(), 1.0, 0.0, DecoderLossKind::none).weighted_total.item<double>() == 2.0);
  }

  TEST_CASE("contrastive loss matches the closed form") {
    auto pos = torch::tensor({0.5, -0.2}, torch::kDouble);
    auto neg = torch::tensor({{0.1, 0.3}, {0.0, 0.4}}, torch::kDouble);
    const double tau = 0.2;
    double ref = 0;
    for (int i = 0; i < 2; ++i) {
      double den = std::exp(pos[i].item<double>() / tau);
      const double num = den;
      for (int k = 0; k < 2; ++k) den += std::exp(neg[i][k].item<double>() / tau);
      ref += -std::log(num / den);
    }
    CHECK(contrastive_loss_from_similarities(pos, neg, tau).item<double>() == doctest::Approx(ref / 2));
    auto q = torch::randn({3, 4}, torch::kDouble);
    CHECK_THROWS(moco_loss(torch::zeros({3, 4}, torch::kDouble), q, q, tau));
  }

  TEST_CASE("momentum update is an exponential moving average") {
    std::vector<torch::Tensor> k{torch::zeros({2})};
    momentum_update(k, {torch::ones({2})}, 0.99);
    CHECK(k[0][0].item<double>() == doctest::Approx(0.01));
  }

  TEST_CASE("patchify round trip and masked reconstruction loss") {
    auto x = torch::rand({2, 1, 8, 8});
    auto p = patchify(x, 4);
    CHECK(p.sizes() == torch::IntArrayRef{2, 4, 16});
    CHECK(torch::equal(p[0][1], x[0][0].slice(0, 0, 4).slice(1, 4, 8).reshape({16})));
    CHECK(torch::equal(unpatchify(p, 4, 1), x));
    auto masked = torch::tensor({1, 0, 0, 0, 0, 0, 0, 1}, torch::kBool).view({2, 4});
    auto recon = x.clone();
    recon[0][0].slice(0, 0, 4).slice(1, 0, 4) += 1.0;
    CHECK(mae_loss(x, recon, masked, 4).item<double>() == doctest::Approx(0.5));
  }
}
