#include "tskd/core/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "tskd/core/rng.hpp"
#include "tskd/error.hpp"

namespace tskd {

namespace {

enum class Kind { ellipse, rectangle, triangle, ring, cross };

struct Shape {
  Kind kind;
  double cx, cy, radius, aspect, angle;
  double tri[6];  // triangle vertices, relative to center before rotation
  double stripe_dir, stripe_period;
};

double gaussian(std::mt19937_64& rng) {
  const double u1 = std::max(uniform01(rng), 1e-300);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Shape random_shape(Kind kind, std::mt19937_64& rng, double size) {
  Shape s{};
  s.kind = kind;
  s.cx = uniform(rng, 0.2, 0.8) * size;
  s.cy = uniform(rng, 0.2, 0.8) * size;
  s.radius = uniform(rng, 0.13, 0.24) * size;
  s.aspect = uniform(rng, 0.6, 1.0);
  s.angle = uniform(rng, 0.0, std::numbers::pi);
  s.stripe_dir = uniform(rng, 0.0, std::numbers::pi);
  s.stripe_period = uniform(rng, 3.5, 5.0);
  for (int v = 0; v < 3; ++v) {
    const double a = 2.0 * std::numbers::pi * v / 3.0 + uniform(rng, -0.35, 0.35);
    const double r = s.radius * uniform(rng, 0.85, 1.15);
    s.tri[2 * v] = r * std::cos(a);
    s.tri[2 * v + 1] = r * std::sin(a);
  }
  return s;
}

bool inside(const Shape& s, double x, double y) {
  const double dx = x - s.cx;
  const double dy = y - s.cy;
  const double c = std::cos(s.angle);
  const double sn = std::sin(s.angle);
  const double u = c * dx + sn * dy;
  const double v = -sn * dx + c * dy;
  const double a = s.radius;
  const double b = s.radius * s.aspect;
  switch (s.kind) {
    case Kind::ellipse: return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    case Kind::rectangle: return std::abs(u) <= a * 0.9 && std::abs(v) <= b * 0.9;
    case Kind::ring: {
      const double q = (u * u) / (a * a) + (v * v) / (a * a);
      return q <= 1.0 && q >= 0.35;
    }
    case Kind::cross: {
      const double w = 0.45 * a;
      return (std::abs(u) <= a && std::abs(v) <= w) || (std::abs(v) <= a && std::abs(u) <= w);
    }
    case Kind::triangle: {
      auto edge = [&](int i, int j) {
        const double x0 = s.tri[2 * i], y0 = s.tri[2 * i + 1];
        const double x1 = s.tri[2 * j], y1 = s.tri[2 * j + 1];
        return (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0);
      };
      const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

struct TaskSpec {
  std::vector<std::pair<Kind, int>> kinds;  // kind, label
  std::vector<double> weights;
  std::vector<std::size_t> required;  // drawn once each, before the random extras
  int min_shapes, max_shapes;         // number of random extras
  double bg_lo, bg_hi, fg_lo, fg_hi;
  double speckle, additive;
};

TaskSpec spec_for(ShapesTask task) {
  if (task == ShapesTask::target) {
    return {{{Kind::ellipse, 1}, {Kind::rectangle, 2}, {Kind::triangle, 0}},
            {0.0, 0.0, 1.0}, {0, 1}, 0, 1, 0.05, 0.30, 0.45, 0.95, 0.15, 0.03};
  }
  return {{{Kind::ellipse, 1}, {Kind::rectangle, 2}, {Kind::triangle, 3}, {Kind::ring, 4}, {Kind::cross, 5}},
          {0.2, 0.2, 0.2, 0.2, 0.2}, {}, 2, 4, 0.05, 0.30, 0.45, 0.95, 0.15, 0.03};
}

}  // namespace

int shapes_class_count(ShapesTask task) { return task == ShapesTask::target ? 3 : 6; }

std::vector<std::string> shapes_class_names(ShapesTask task) {
  if (task == ShapesTask::target) return {"background", "ellipse", "rectangle"};
  return {"background", "ellipse", "rectangle", "triangle", "ring", "cross"};
}

SegmentationSample make_shapes_sample(ShapesTask task, std::uint64_t seed, std::int64_t index,
                                      std::int64_t size) {
  if (size < 8) throw ValidationError("shapes images must be at least 8 pixels");
  const auto spec = spec_for(task);
  std::mt19937_64 rng(SeedStream(seed).derive(task == ShapesTask::target ? "shapes_target" : "shapes_foundation",
                                              static_cast<std::uint64_t>(index)));
  const auto n = static_cast<std::size_t>(size);
  std::vector<float> image(n * n);
  std::vector<std::uint8_t> mask(n * n, 0);

  const double bg = uniform(rng, spec.bg_lo, spec.bg_hi);
  const double gx = uniform(rng, -0.08, 0.08);
  const double gy = uniform(rng, -0.08, 0.08);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      image[y * n + x] = static_cast<float>(bg + gx * (x / double(n) - 0.5) + gy * (y / double(n) - 0.5));
    }
  }

  const int extras = spec.min_shapes + static_cast<int>(rng() % (spec.max_shapes - spec.min_shapes + 1));
  double total = 0.0;
  for (double w : spec.weights) total += w;
  std::vector<std::size_t> picks = spec.required;
  for (int k = 0; k < extras; ++k) {
    double pick = uniform01(rng) * total;
    std::size_t which = 0;
    while (which + 1 < spec.weights.size() && pick >= spec.weights[which]) pick -= spec.weights[which++];
    picks.push_back(which);
  }
  deterministic_shuffle(picks, rng);
  std::vector<Shape> placed;
  for (const auto which : picks) {
    const auto [kind, label] = spec.kinds[which];
    // Rejection sampling keeps heavy overlaps rare.
    Shape shape = random_shape(kind, rng, static_cast<double>(size));
    for (int attempt = 0; attempt < 20; ++attempt) {
      bool clear = true;
      for (const auto& o : placed) {
        if (std::hypot(o.cx - shape.cx, o.cy - shape.cy) < 0.8 * (o.radius + shape.radius)) clear = false;
      }
      if (clear) break;
      shape = random_shape(kind, rng, static_cast<double>(size));
    }
    placed.push_back(shape);
    const double fg = uniform(rng, spec.fg_lo, spec.fg_hi);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        if (inside(shape, x + 0.5, y + 0.5)) {
          double value = fg;
          if (kind == Kind::rectangle) {
            // Rectangles carry a striped texture.
            const double t = (x * std::cos(shape.stripe_dir) + y * std::sin(shape.stripe_dir)) / shape.stripe_period;
            value = fg * (1.0 + 0.3 * std::sin(2.0 * std::numbers::pi * t));
          } else if (kind == Kind::triangle) {
            // Triangles carry a checker texture.
            const auto cell = [&](double c) { return static_cast<long>(std::floor(c / 3.0)); };
            value = fg * (((cell(x) + cell(y)) & 1) ? 1.2 : 0.8);
          }
          image[y * n + x] = static_cast<float>(value);
          mask[y * n + x] = static_cast<std::uint8_t>(label);
        }
      }
    }
  }

  for (auto& v : image) {
    double p = v;
    if (spec.speckle > 0.0) p *= 1.0 + spec.speckle * gaussian(rng);
    p += spec.additive * gaussian(rng);
    v = static_cast<float>(std::clamp(p, 0.0, 1.0));
  }

  char id[64];
  std::snprintf(id, sizeof(id), "%s_%06lld", task == ShapesTask::target ? "t" : "f",
                static_cast<long long>(index));
  SegmentationSample s;
  s.image = torch::from_blob(image.data(), {size, size, 1}, torch::kFloat).clone();
  s.mask = torch::from_blob(mask.data(), {size, size}, torch::kUInt8).clone();
  s.id = id;
  return s;
}

LabeledDataset make_shapes_dataset(ShapesTask task, std::int64_t count, std::uint64_t seed, std::int64_t size) {
  if (count < 1) throw ValidationError("shapes dataset needs at least one sample");
  std::vector<SegmentationSample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) samples.push_back(make_shapes_sample(task, seed, i, size));
  return LabeledDataset(std::move(samples), shapes_class_count(task), shapes_class_names(task));
}

TransferSet make_shapes_images(ShapesTask task, std::int64_t count, std::uint64_t seed, std::int64_t size) {
  TransferSet set;
  set.provenance = Provenance::procedural;
  for (std::int64_t i = 0; i < count; ++i) set.images.push_back(make_shapes_sample(task, seed, i, size).image);
  return set;
}

}  // namespace tskd
