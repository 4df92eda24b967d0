#include <doctest.h>

#include <filesystem>
#include <set>

#include <torch/torch.h>

#include "tskd/core/checkpoint.hpp"
#include "tskd/core/config.hpp"
#include "tskd/core/dataset.hpp"
#include "tskd/core/rng.hpp"
#include "tskd/core/shapes.hpp"
#include "tskd/error.hpp"

using namespace tskd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tskd_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("core") {
  TEST_CASE("seed streams are independent per purpose and reproducible") {
    SeedStream a(5), b(5), c(6);
    CHECK(a.derive("init") == b.derive("init"));
    CHECK(a.derive("init") != a.derive("data_order"));
    CHECK(a.derive("init") != c.derive("init"));
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7}, w = v;
    auto r1 = a.engine("x"), r2 = b.engine("x");
    deterministic_shuffle(v, r1);
    deterministic_shuffle(w, r2);
    CHECK(v == w);
    CHECK(std::set<int>(v.begin(), v.end()).size() == 8u);
  }

  TEST_CASE("encoder config validation") {
    ViTEncoderConfig ok;
    CHECK_NOTHROW(ok.validate());
    ViTEncoderConfig bad{60, 8, 1, 64, 4, 4, 2.0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    ViTEncoderConfig heads{64, 8, 1, 66, 4, 4, 2.0};
    CHECK_THROWS_AS(heads.validate(), ConfigError);
  }

  TEST_CASE("experiment config json overlay and hash") {
    ExperimentConfig base;
    auto j = base.to_json();
    auto again = ExperimentConfig::from_json(j);
    CHECK(again.hash() == base.hash());
    auto over = ExperimentConfig::from_json(nlohmann::json{{"lora_rank", 8}}, base);
    CHECK(over.lora_rank == 8);
    CHECK(over.hash() != base.hash());
    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"method", "bogus"}}, base), ValidationError);
  }

  TEST_CASE("desk profile divides epochs by twenty") {
    ExperimentConfig cfg;
    const auto desk = cfg.desk();
    for (const auto& [stage, s] : cfg.schedules) {
      CHECK(desk.schedule(stage).epochs == std::max<std::int64_t>(1, s.epochs / 20));
    }
  }

  TEST_CASE("schedule iteration count honors the cap") {
    Schedule s;
    s.epochs = 3;
    s.batch_size = 4;
    CHECK(s.total_iters(10) == 9);
    s.max_iters = 5;
    CHECK(s.total_iters(10) == 5);
    s.batch_size = 0;
    CHECK_THROWS_AS(s.validate("x"), ValidationError);
  }

  TEST_CASE("checkpoint round trip is exact and corruption is detected") {
    CheckpointBundle b;
    b.tensors["w"] = torch::randn({3, 4});
    b.tensors["i"] = torch::arange(5, torch::kLong);
    b.metadata.model_kind = "test";
    b.metadata.extra["task_adapted"] = "true";
    const auto bytes = serialize_checkpoint(b);
    const auto back = deserialize_checkpoint(bytes);
    CHECK(back.metadata == b.metadata);
    CHECK(torch::equal(back.tensors.at("w"), b.tensors.at("w")));
    CHECK(torch::equal(back.tensors.at("i"), b.tensors.at("i")));
    CHECK(serialize_checkpoint(back) == bytes);
    auto broken = bytes;
    broken[broken.size() / 2] ^= 0x1;
    CHECK_THROWS_AS(deserialize_checkpoint(broken), IntegrityError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 10)), IntegrityError);
  }

  TEST_CASE("strict and partial module loading") {
    torch::nn::Linear a(4, 3), b(4, 3), c(5, 3);
    load_module_strict(*b, bundle_from_module(*a));
    CHECK(torch::equal(a->weight, b->weight));
    CHECK_THROWS_AS(load_module_strict(*c, bundle_from_module(*a)), IntegrityError);
    const auto report = load_pretrained_partial(*c, bundle_from_module(*a));
    CHECK(report.skipped == std::vector<std::string>{"weight"});
    CHECK(report.loaded == std::vector<std::string>{"bias"});
  }

  TEST_CASE("shapes are deterministic and well formed") {
    const auto s1 = make_shapes_sample(ShapesTask::target, 3, 7, 32);
    const auto s2 = make_shapes_sample(ShapesTask::target, 3, 7, 32);
    CHECK(torch::equal(s1.image, s2.image));
    CHECK(torch::equal(s1.mask, s2.mask));
    CHECK(s1.image.sizes() == torch::IntArrayRef{32, 32, 1});
    CHECK(s1.mask.max().item<int>() < shapes_class_count(ShapesTask::target));
    CHECK_NOTHROW(validate_sample(s1, 3));
    CHECK(shapes_class_count(ShapesTask::foundation) == 6);
    const auto imgs = make_shapes_images(ShapesTask::target, 4, 3, 32);
    CHECK(imgs.provenance == Provenance::procedural);
    CHECK(imgs.batch().sizes() == torch::IntArrayRef{4, 1, 32, 32});
  }

  TEST_CASE("label subsets are nested and holdout splits disjoint") {
    const auto ds = make_shapes_dataset(ShapesTask::target, 20, 1, 16);
    const auto small = subset_labels(ds, 4, 9), big = subset_labels(ds, 8, 9);
    const auto big_ids = big.ids();
    for (const auto& id : small.ids()) CHECK(std::find(big_ids.begin(), big_ids.end(), id) != big_ids.end());
    const auto [held, rest] = split_holdout(ds, 5, 2);
    CHECK(held.size() == 5u);
    CHECK(rest.size() == 15u);
    std::set<std::string> all;
    for (const auto& id : held.ids()) all.insert(id);
    for (const auto& id : rest.ids()) all.insert(id);
    CHECK(all.size() == 20u);
    CHECK_THROWS_AS(subset_labels(ds, 21, 1), ValidationError);
  }

  TEST_CASE("dataset png round trip") {
    const auto dir = scratch_dir("dataset");
    const auto ds = make_shapes_dataset(ShapesTask::target, 3, 4, 16);
    save_dataset(ds, dir);
    const auto back = load_dataset(dir, 3);
    REQUIRE(back.size() == 3u);
    CHECK(back.ids() == ds.ids());
    CHECK(torch::equal(back.mask_batch(), ds.mask_batch()));
    CHECK((back.image_batch() - ds.image_batch()).abs().max().item<double>() <= 0.5 / 255.0 + 1e-6);
    fs::remove_all(dir);
  }
}
