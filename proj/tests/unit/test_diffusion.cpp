#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <torch/torch.h>

#include "tskd/core/shapes.hpp"
#include "tskd/diffusion/diffusion.hpp"
#include "tskd/error.hpp"

using namespace tskd;
using namespace tskd::diffusion;
namespace fs = std::filesystem;

TEST_SUITE("diffusion") {
  TEST_CASE("linear schedule cumulative products") {
    const auto s = DiffusionSchedule::linear(10, 1e-4, 0.02);
    CHECK(s.T() == 10);
    CHECK(s.beta(1) == doctest::Approx(1e-4));
    CHECK(s.beta(10) == doctest::Approx(0.02));
    double prod = 1;
    for (int t = 1; t <= 10; ++t) {
      prod *= s.alpha(t);
      CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-12));
      CHECK(s.snr(t) == doctest::Approx(prod / (1 - prod)));
    }
    CHECK_THROWS(s.alpha(11));
    CHECK_THROWS(DiffusionSchedule::from_alphas({0.9, 1.5}));
    CHECK(s.hash() == DiffusionSchedule::linear(10, 1e-4, 0.02).hash());
    CHECK(s.hash() != DiffusionSchedule::linear(11, 1e-4, 0.02).hash());
  }

  TEST_CASE("forward process formulas") {
    const auto s = DiffusionSchedule::linear(20);
    auto x0 = torch::randn({3, 4}, torch::kDouble), eps = torch::randn({3, 4}, torch::kDouble);
    const double ab = s.alpha_bar(7);
    CHECK(torch::allclose(q_sample(x0, 7, eps, s), std::sqrt(ab) * x0 + std::sqrt(1 - ab) * eps));
    CHECK(torch::allclose(q_step(x0, 1, eps, s), q_sample(x0, 1, eps, s)));
    const double a = s.alpha(5);
    auto xt = torch::randn({3, 4}, torch::kDouble);
    CHECK(torch::allclose(posterior_mean(xt, eps, 5, s),
                          (xt - (1 - a) / std::sqrt(1 - s.alpha_bar(5)) * eps) / std::sqrt(a)));
  }

  TEST_CASE("timestep embedding and denoiser shapes") {
    CHECK(timestep_embedding(torch::tensor({1, 5}, torch::kLong), 16).sizes() == torch::IntArrayRef{2, 16});
    DenoiserConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 4;
    cfg.dim = 16;
    cfg.depth = 1;
    cfg.time_dim = 16;
    Denoiser d(cfg);
    auto out = d->forward(torch::randn({2, 1, 16, 16}), torch::tensor({1, 3}, torch::kLong));
    CHECK(out.sizes() == torch::IntArrayRef{2, 1, 16, 16});
    cfg.patch_size = 5;
    CHECK_THROWS(cfg.validate());
  }

  TEST_CASE("sampling is deterministic per image and lands in range") {
    const auto s = DiffusionSchedule::linear(5);
    EpsilonPredictor zero = [](const torch::Tensor& x, std::int64_t) { return torch::zeros_like(x); };
    const auto a = sample(zero, s, 3, 11, 1, 8, 2), b = sample(zero, s, 3, 11, 1, 8, 3);
    REQUIRE(a.size() == 3u);
    CHECK(a.provenance == Provenance::diffusion_sampled);
    for (std::size_t i = 0; i < 3; ++i) CHECK(torch::equal(a.images[i], b.images[i]));
    CHECK(a.images[0].min().item<double>() >= 0.0);
    CHECK(a.images[0].max().item<double>() <= 1.0);
  }

  TEST_CASE("affine helpers") {
    const auto id = affine_matrix(0, 1, 0, 0, 0, 16);
    CHECK(id == std::array<double, 6>{1, 0, 0, 0, 1, 0});
    auto img = torch::rand({16, 16, 1});
    CHECK(torch::allclose(warp_image(img, id), img));
    const auto r = affine_matrix(90, 1, 0, 0, 0, 16);
    for (double v : r) CHECK(v == std::round(v));
    const auto base = make_shapes_images(ShapesTask::target, 2, 1, 16).images;
    const auto ident = augment_base_set(base, AugmentationSpec::identity(5), 3);
    REQUIRE(ident.size() == 5u);
    CHECK(torch::allclose(ident.images[2], base[0]));
    auto bad = AugmentationSpec::standard(4);
    bad.scale_min = 2.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("transfer quality and persistence") {
    const auto set = make_shapes_images(ShapesTask::target, 3, 2, 16);
    const auto q = evaluate_transfer(set, set.images);
    CHECK(q.mean_mse == 0.0);
    CHECK(q.matched_reference == std::vector<std::int64_t>{0, 1, 2});
    const auto dir = fs::temp_directory_path() / "tskd_unit_transfer";
    fs::remove_all(dir);
    save_transfer_set(set, {3, Provenance::procedural, 2, "abc"}, dir);
    TransferManifest m;
    const auto back = load_transfer_set(dir, &m);
    CHECK(m.count == 3);
    CHECK(m.schedule_hash == "abc");
    REQUIRE(back.size() == 3u);
    CHECK((back.images[1] - set.images[1]).abs().max().item<double>() <= 0.5 / 255 + 1e-6);
    fs::remove_all(dir);
  }
}
