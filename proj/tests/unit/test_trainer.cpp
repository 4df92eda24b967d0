#include <doctest.h>

#include <cmath>

#include <torch/torch.h>

#include "tskd/core/shapes.hpp"
#include "tskd/error.hpp"
#include "tskd/trainer/trainer.hpp"

using namespace tskd;
using namespace tskd::trainer;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig cfg;
  cfg.student = ViTEncoderConfig{16, 4, 1, 8, 1, 2, 2.0};
  cfg.teacher = ViTEncoderConfig{16, 4, 1, 16, 1, 2, 2.0};
  cfg.fpn_channels = 8;
  return cfg;
}

Schedule quick(OptimizerKind k) { return {k, 1e-3, 0.0, 1, 1, 4, DecayKind::cosine, 1.0}; }

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("learning rate warmup then cosine decay") {
    Schedule s{OptimizerKind::adam, 1.0, 0.0, 10, 1, 1, DecayKind::cosine, 1.0};
    CHECK(learning_rate(s, 0, 110) == doctest::Approx(0.1));
    CHECK(learning_rate(s, 9, 110) == doctest::Approx(1.0));
    CHECK(learning_rate(s, 60, 110) == doctest::Approx(0.5).epsilon(0.02));
    CHECK(learning_rate(s, 109, 110) < 0.01);
    s.decay = DecayKind::none;
    CHECK(learning_rate(s, 109, 110) == 1.0);
  }

  TEST_CASE("gradient clipping rescales to the bound") {
    auto p = torch::zeros({2}).requires_grad_(true);
    p.mutable_grad() = torch::tensor({3.0f, 4.0f});
    CHECK(clip_grad_norm({p}, 1.0) == doctest::Approx(5.0));
    CHECK(p.grad().norm().item<double>() == doctest::Approx(1.0));
  }

  TEST_CASE("presets carry the KD table weights") {
    CHECK(DistillationConfig::preset_names().size() == 9u);
    const auto k4 = DistillationConfig::preset("TS-KD4");
    CHECK(k4.decoder_kind == losses::DecoderLossKind::cross_entropy);
    CHECK(k4.to_json()["weights"] == "CrossEntropy weight: 1.0; Hidden Loss weight: 1.0");
    const auto k6 = DistillationConfig::preset("TS-KD6");
    CHECK_FALSE(k6.use_hidden);
    CHECK(DistillationConfig::preset("TA-KD").to_json()["weights"] == "Hidden Loss weight: 1.0");
    CHECK_THROWS_AS(DistillationConfig::preset("TS-KD9"), ValidationError);
    DistillationConfig bad{"x", losses::DecoderLossKind::none, losses::MaskMode::interpolated, false, 0.0, 1.0};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("run records round trip through json") {
    RunRecord r;
    r.stage = "x";
    r.seed = 4;
    r.params = {{"a", 1}};
    r.curves["loss"] = {1.0, 0.5};
    const auto back = RunRecord::from_json(r.to_json());
    CHECK(back.to_json() == r.to_json());
    CHECK(r.curves_csv().rfind("iter,loss", 0) == 0);
  }

  TEST_CASE("smoothing is a trailing average") {
    const auto s = smooth({1, 2, 3, 4}, 2);
    CHECK(s == std::vector<double>{1, 1.5, 2.5, 3.5});
    CHECK_THROWS(smooth({1}, 0));
  }

  TEST_CASE("model construction is seeded") {
    const auto cfg = tiny();
    auto a = make_student(cfg, 3), b = make_student(cfg, 3), c = make_student(cfg, 4);
    CHECK(torch::equal(a->encoder->pos_embed, b->encoder->pos_embed));
    CHECK_FALSE(torch::equal(a->encoder->pos_embed, c->encoder->pos_embed));
  }

  TEST_CASE("task-specific distillation requires an adapted teacher") {
    const auto cfg = tiny();
    auto teacher = make_teacher(cfg.teacher, 3, 1);
    const auto transfer = make_shapes_images(ShapesTask::target, 8, 1, 16);
    CHECK_THROWS_AS(pretrain_ts_kd(make_student(cfg, 1), teacher, transfer, DistillationConfig::preset("TS-KD8"),
                                   quick(OptimizerKind::adam), 1),
                    ConfigError);
    auto ta = pretrain_ta_kd(make_student(cfg, 1), teacher, transfer, quick(OptimizerKind::adam), 1);
    CHECK(ta.record.curves.at("loss_total").size() == 2u);
  }

  TEST_CASE("short pipelines are deterministic and finite") {
    const auto cfg = tiny();
    const auto labeled = make_shapes_dataset(ShapesTask::target, 8, 2, 16);
    const auto transfer = make_shapes_images(ShapesTask::target, 8, 3, 16);
    auto run = [&] {
      auto s = pretrain_moco(make_student(cfg, 2), transfer, quick(OptimizerKind::adamw), {0.2, 0.99, 16, 8}, 2);
      return finetune_student(s.model, labeled, quick(OptimizerKind::adamw), 2);
    };
    const auto a = run(), b = run();
    CHECK(a.record.curves.at("loss") == b.record.curves.at("loss"));
    for (double v : a.record.curves.at("loss")) CHECK(std::isfinite(v));
    auto mae = pretrain_mae(make_student(cfg, 2), transfer, quick(OptimizerKind::adamw),
                            {0.75, MaeLossScope::masked_only, 8}, 2);
    CHECK_FALSE(mae.record.curves.at("loss").empty());
    const auto rep = evaluate_predictions(predict(a.model, labeled.image_batch()), labeled, 1.0);
    CHECK(rep.samples == 8);
  }
}
