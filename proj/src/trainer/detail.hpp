#pragma once

#include <chrono>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "tskd/core/rng.hpp"
#include "tskd/error.hpp"

namespace tskd::trainer::detail {

/// Per-epoch shuffled mini-batches; the last batch of an epoch may be short.
class EpochBatches {
 public:
  EpochBatches(std::int64_t n, std::int64_t batch, std::mt19937_64 rng) : n_(n), batch_(batch), rng_(rng) {}

  torch::Tensor next() {
    if (cursor_ >= order_.size()) {
      order_.resize(static_cast<std::size_t>(n_));
      for (std::int64_t i = 0; i < n_; ++i) order_[i] = i;
      deterministic_shuffle(order_, rng_);
      cursor_ = 0;
    }
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(batch_), order_.size() - cursor_);
    std::vector<std::int64_t> idx(order_.begin() + cursor_, order_.begin() + cursor_ + take);
    cursor_ += take;
    return torch::tensor(idx, torch::kLong);
  }

 private:
  std::int64_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::int64_t> order_;
  std::size_t cursor_ = 0;
};

/// Independent horizontal/vertical flips per sample. images B×C×H×W,
/// masks B×H×W (may be undefined).
inline void random_flips(torch::Tensor& images, torch::Tensor& masks, std::mt19937_64& rng) {
  std::vector<torch::Tensor> im, mk;
  for (std::int64_t i = 0; i < images.size(0); ++i) {
    auto x = images[i];
    torch::Tensor m = masks.defined() ? masks[i] : torch::Tensor();
    const auto bits = rng();
    if (bits & 1) {
      x = x.flip({2});
      if (m.defined()) m = m.flip({1});
    }
    if (bits & 2) {
      x = x.flip({1});
      if (m.defined()) m = m.flip({0});
    }
    im.push_back(x);
    if (m.defined()) mk.push_back(m);
  }
  images = torch::stack(im);
  if (masks.defined()) masks = torch::stack(mk);
}

inline std::vector<torch::Tensor> trainable(const std::vector<torch::Tensor>& params) {
  std::vector<torch::Tensor> out;
  for (const auto& p : params) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

inline double finite_or_throw(const torch::Tensor& loss, const std::string& stage, std::int64_t step) {
  const double v = loss.item<double>();
  if (!std::isfinite(v)) {
    throw NumericalError(stage + ": non-finite loss at step " + std::to_string(step));
  }
  return v;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace tskd::trainer::detail
