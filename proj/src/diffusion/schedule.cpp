#include <cmath>
#include <cstdio>

#include "tskd/core/rng.hpp"
#include "tskd/diffusion/diffusion.hpp"
#include "tskd/error.hpp"

namespace tskd::diffusion {

DiffusionSchedule::DiffusionSchedule(std::vector<double> alphas) {
  if (alphas.empty()) throw ValidationError("diffusion schedule needs T >= 1");
  alpha_.reserve(alphas.size() + 1);
  alpha_.push_back(1.0);
  alpha_bar_.push_back(1.0);
  for (double a : alphas) {
    if (!(a > 0.0 && a <= 1.0)) throw ValidationError("diffusion alphas must lie in (0,1]");
    alpha_.push_back(a);
    alpha_bar_.push_back(alpha_bar_.back() * a);
  }
}

DiffusionSchedule DiffusionSchedule::linear(std::int64_t T, double beta_start, double beta_end) {
  if (T < 1) throw ValidationError("diffusion schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ValidationError("beta range must satisfy 0 < start <= end < 1");
  }
  std::vector<double> alphas(static_cast<std::size_t>(T));
  for (std::int64_t i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    alphas[i] = 1.0 - (beta_start + frac * (beta_end - beta_start));
  }
  return DiffusionSchedule(std::move(alphas));
}

DiffusionSchedule DiffusionSchedule::from_alphas(std::vector<double> alphas) {
  return DiffusionSchedule(std::move(alphas));
}

std::int64_t DiffusionSchedule::check(std::int64_t t) const {
  if (t < 1 || t > T()) {
    throw ValidationError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T()) + "]");
  }
  return t;
}

double DiffusionSchedule::alpha_bar(std::int64_t t) const {
  if (t == 0) return 1.0;
  return alpha_bar_.at(check(t));
}

double DiffusionSchedule::snr(std::int64_t t) const {
  const double ab = alpha_bar(t);
  return ab / (1.0 - ab);
}

std::string DiffusionSchedule::hash() const {
  std::string bytes;
  for (double a : alpha_) bytes.append(reinterpret_cast<const char*>(&a), sizeof(a));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

torch::Tensor q_sample(const torch::Tensor& x0, std::int64_t t, const torch::Tensor& eps,
                       const DiffusionSchedule& sched) {
  if (x0.sizes() != eps.sizes()) throw ValidationError("q_sample: noise shape differs from x0");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor q_step(const torch::Tensor& x_prev, std::int64_t t, const torch::Tensor& eps,
                     const DiffusionSchedule& sched) {
  if (x_prev.sizes() != eps.sizes()) throw ValidationError("q_step: noise shape differs from input");
  const double a = sched.alpha(t);
  return std::sqrt(a) * x_prev + std::sqrt(1.0 - a) * eps;
}

torch::Tensor posterior_mean(const torch::Tensor& x_t, const torch::Tensor& eps_hat, std::int64_t t,
                             const DiffusionSchedule& sched) {
  const double a = sched.alpha(t);
  const double ab = sched.alpha_bar(t);
  return (x_t - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(a);
}

}  // namespace tskd::diffusion
