#include <doctest.h>

#include <torch/torch.h>

#include "tskd/error.hpp"
#include "tskd/models/models.hpp"

using namespace tskd;

TEST_SUITE("models") {
  TEST_CASE("student emits full-resolution logits and grid tokens") {
    StudentModel s(ViTEncoderConfig{32, 8, 1, 16, 1, 2, 2.0}, 3, 8);
    const auto out = s->forward(torch::rand({2, 1, 32, 32}));
    CHECK(out.encoder.tokens.sizes() == torch::IntArrayRef{2, 4, 4, 16});
    CHECK(out.logits.logits.sizes() == torch::IntArrayRef{2, 3, 32, 32});
    CHECK(out.logits.resolution == Resolution::full);
  }

  TEST_CASE("teacher emits quarter-resolution logits plus objectness") {
    TeacherModel t(ViTEncoderConfig{32, 8, 1, 16, 1, 2, 2.0}, 3);
    const auto out = t->forward(torch::rand({2, 1, 32, 32}));
    CHECK(out.logits.logits.sizes() == torch::IntArrayRef{2, 3, 8, 8});
    CHECK(out.raw_logits.sizes() == torch::IntArrayRef{2, 4, 8, 8});
    CHECK(torch::equal(out.raw_logits.narrow(1, 0, 3), out.logits.logits));
    CHECK_FALSE(t->task_adapted);
  }

  TEST_CASE("encoder rejects mismatched input") {
    ViTEncoder e(ViTEncoderConfig{32, 8, 1, 16, 1, 2, 2.0});
    CHECK_THROWS(e->forward(torch::rand({1, 1, 16, 16})));
    CHECK_THROWS(e->forward(torch::rand({1, 3, 32, 32})));
  }

  TEST_CASE("resize is identity at the same size and preserves constants") {
    auto x = torch::randn({1, 2, 8, 8});
    CHECK(torch::allclose(resize_logits(x, 8), x));
    auto c = torch::full({1, 1, 4, 4}, 2.5);
    CHECK(torch::allclose(resize_logits(c, 16), torch::full({1, 1, 16, 16}, 2.5)));
  }

  TEST_CASE("encoder token subset path agrees with the full forward") {
    ViTEncoder e(ViTEncoderConfig{16, 4, 1, 8, 1, 2, 2.0});
    e->eval();
    auto x = torch::rand({1, 1, 16, 16});
    auto full = e->forward(x).tokens.reshape({1, 16, 8});
    auto via = e->encode_tokens(e->embed(x));
    CHECK(torch::allclose(full, via, 1e-5, 1e-6));
  }
}
