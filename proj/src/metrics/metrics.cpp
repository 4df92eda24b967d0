#include "tskd/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace tskd::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(const BinaryMaskPair& p) {
  if (p.predicted.height != p.reference.height || p.predicted.width != p.reference.width) {
    throw std::invalid_argument("mask pair shapes differ");
  }
  if (!(p.spacing_y > 0.0) || !(p.spacing_x > 0.0)) throw std::invalid_argument("pixel spacing must be > 0");
}

// Squared distance transform of sampled function f along one axis with
// sample spacing s (lower envelope of parabolas).
void dt_1d(const std::vector<double>& f, double s, std::vector<double>& out) {
  const auto n = static_cast<std::int64_t>(f.size());
  std::vector<std::int64_t> v(f.size());
  std::vector<double> z(f.size() + 1);
  const double s2 = s * s;
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double cut;
    while (true) {
      const auto r = v[k];
      cut = ((f[q] + s2 * q * q) - (f[r] + s2 * r * r)) / (2.0 * s2 * (q - r));
      if (cut <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (cut <= z[k]) {  // k == 0 and the new parabola dominates everywhere
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = cut;
    z[k + 1] = kInf;
  }
  out.assign(f.size(), kInf);
  if (k < 0) return;
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double d = static_cast<double>(q - v[j]);
    out[q] = s2 * d * d + f[v[j]];
  }
}

std::vector<double> directed(const std::vector<std::pair<std::int64_t, std::int64_t>>& from,
                             const std::vector<double>& field, std::int64_t width) {
  std::vector<double> d;
  d.reserve(from.size());
  for (auto [y, x] : from) d.push_back(field[static_cast<std::size_t>(y * width + x)]);
  return d;
}

double mean_or_nan(double sum, int n) { return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::int64_t BinaryGrid::count() const {
  return std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; });
}

BinaryGrid ClassGrid::binary(std::int32_t cls) const {
  BinaryGrid g(height, width);
  for (std::size_t i = 0; i < data.size(); ++i) g.data[i] = data[i] == cls ? 1 : 0;
  return g;
}

DiceResult dice(const BinaryMaskPair& pair) {
  check_pair(pair);
  std::int64_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pair.predicted.data.size(); ++i) {
    const bool pa = pair.predicted.data[i] != 0;
    const bool pb = pair.reference.data[i] != 0;
    a += pa;
    b += pb;
    both += pa && pb;
  }
  if (a + b == 0) return {1.0, true};
  return {2.0 * static_cast<double>(both) / static_cast<double>(a + b), false};
}

IoUResult iou(const BinaryMaskPair& pair) {
  check_pair(pair);
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pair.predicted.data.size(); ++i) {
    const bool pa = pair.predicted.data[i] != 0;
    const bool pb = pair.reference.data[i] != 0;
    inter += pa && pb;
    uni += pa || pb;
  }
  if (uni == 0) return {1.0, true};
  return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const BinaryGrid& g) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (std::int64_t y = 0; y < g.height; ++y) {
    for (std::int64_t x = 0; x < g.width; ++x) {
      if (!g.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == g.height - 1 || x == g.width - 1 || !g.at(y - 1, x) ||
                        !g.at(y + 1, x) || !g.at(y, x - 1) || !g.at(y, x + 1);
      if (edge) out.emplace_back(y, x);
    }
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<double> distance_transform(const BinaryGrid& g, double spacing_y, double spacing_x) {
  const auto h = g.height, w = g.width;
  std::vector<double> field(static_cast<std::size_t>(h * w));
  for (std::size_t i = 0; i < field.size(); ++i) field[i] = g.data[i] ? 0.0 : kInf;
  std::vector<double> line, out;
  for (std::int64_t x = 0; x < w; ++x) {
    line.resize(static_cast<std::size_t>(h));
    for (std::int64_t y = 0; y < h; ++y) line[y] = field[y * w + x];
    dt_1d(line, spacing_y, out);
    for (std::int64_t y = 0; y < h; ++y) field[y * w + x] = out[y];
  }
  for (std::int64_t y = 0; y < h; ++y) {
    line.assign(field.begin() + y * w, field.begin() + (y + 1) * w);
    dt_1d(line, spacing_x, out);
    std::copy(out.begin(), out.end(), field.begin() + y * w);
  }
  for (auto& v : field) v = std::sqrt(v);
  return field;
}

std::optional<double> hd95(const BinaryMaskPair& pair, HdMode mode) {
  check_pair(pair);
  if (pair.predicted.empty() || pair.reference.empty()) return std::nullopt;
  const auto ba = boundary_pixels(pair.predicted);
  const auto bb = boundary_pixels(pair.reference);
  auto to_grid = [&](const auto& pts) {
    BinaryGrid g(pair.predicted.height, pair.predicted.width);
    for (auto [y, x] : pts) g.set(y, x);
    return g;
  };
  const auto field_b = distance_transform(to_grid(bb), pair.spacing_y, pair.spacing_x);
  const auto field_a = distance_transform(to_grid(ba), pair.spacing_y, pair.spacing_x);
  auto a_to_b = directed(ba, field_b, pair.predicted.width);
  auto b_to_a = directed(bb, field_a, pair.predicted.width);
  if (mode == HdMode::max_directed) return std::max(percentile(a_to_b, 95.0), percentile(b_to_a, 95.0));
  a_to_b.insert(a_to_b.end(), b_to_a.begin(), b_to_a.end());
  return percentile(std::move(a_to_b), 95.0);
}

MiouResult miou(const ClassGrid& predicted, const ClassGrid& reference, int class_count) {
  if (predicted.height != reference.height || predicted.width != reference.width) {
    throw std::invalid_argument("class grids differ in shape");
  }
  MiouResult r;
  double sum = 0.0;
  for (int c = 1; c < class_count; ++c) {
    const auto res = iou({predicted.binary(c), reference.binary(c)});
    if (res.skipped) {
      ++r.classes_skipped;
      continue;
    }
    sum += res.value;
    ++r.classes_used;
  }
  r.value = r.classes_used > 0 ? sum / r.classes_used : 1.0;
  return r;
}

double psnr_from_mse(double mse, double peak) {
  if (!(peak > 0.0)) throw std::invalid_argument("peak must be > 0");
  if (mse < 0.0) throw std::invalid_argument("mse must be >= 0");
  if (mse == 0.0) return kInf;
  return 10.0 * std::log10(peak * peak / mse);
}

PsnrMse psnr_mse(std::span<const double> a, std::span<const double> b, double peak) {
  if (a.size() != b.size()) throw std::invalid_argument("psnr_mse: shape mismatch");
  if (a.empty()) throw std::invalid_argument("psnr_mse: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.size());
  return {psnr_from_mse(mse, peak), mse};
}

std::string MetricsReport::to_csv() const {
  std::string out = "class,dice,hd95,iou,flags\n";
  char buf[256];
  auto fmt = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char b[32];
    std::snprintf(b, sizeof(b), "%.6f", v);
    return std::string(b);
  };
  for (const auto& c : per_class) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,skipped=%d;hd95_undefined=%d\n", c.name.c_str(),
                  fmt(c.dice).c_str(), fmt(c.hd95).c_str(), fmt(c.iou).c_str(), c.skipped, c.hd95_undefined);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%s,%s,%s,samples=%lld\n", fmt(mean_dice).c_str(), fmt(mean_hd95).c_str(),
                fmt(mean_iou).c_str(), static_cast<long long>(samples));
  out += buf;
  return out;
}

MetricsReport evaluate(const std::vector<ClassGrid>& predicted, const std::vector<ClassGrid>& reference,
                       int class_count, const std::vector<std::string>& class_names, double spacing, HdMode mode) {
  if (predicted.size() != reference.size()) throw std::invalid_argument("prediction/reference count mismatch");
  if (class_count < 2) throw std::invalid_argument("class_count must be >= 2");
  MetricsReport report;
  report.samples = static_cast<std::int64_t>(predicted.size());
  std::vector<double> dice_sum(class_count, 0.0), hd_sum(class_count, 0.0), iou_sum(class_count, 0.0);
  report.per_class.resize(static_cast<std::size_t>(class_count - 1));
  for (int c = 1; c < class_count; ++c) {
    auto& m = report.per_class[c - 1];
    m.name = c < static_cast<int>(class_names.size()) ? class_names[c] : "class" + std::to_string(c);
  }
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (int c = 1; c < class_count; ++c) {
      auto& m = report.per_class[c - 1];
      BinaryMaskPair pair{predicted[i].binary(c), reference[i].binary(c), spacing, spacing};
      const auto d = dice(pair);
      if (d.skipped) {
        ++m.skipped;
        continue;
      }
      dice_sum[c] += d.value;
      iou_sum[c] += iou(pair).value;
      ++m.dice_samples;
      if (auto h = hd95(pair, mode)) {
        hd_sum[c] += *h;
        ++m.hd95_samples;
      } else {
        ++m.hd95_undefined;
      }
    }
  }
  double md = 0.0, mh = 0.0, mi = 0.0;
  int nd = 0, nh = 0;
  for (int c = 1; c < class_count; ++c) {
    auto& m = report.per_class[c - 1];
    m.dice = mean_or_nan(dice_sum[c], m.dice_samples);
    m.iou = mean_or_nan(iou_sum[c], m.dice_samples);
    m.hd95 = mean_or_nan(hd_sum[c], m.hd95_samples);
    if (m.dice_samples > 0) {
      md += m.dice;
      mi += m.iou;
      ++nd;
    }
    if (m.hd95_samples > 0) {
      mh += m.hd95;
      ++nh;
    }
  }
  report.mean_dice = mean_or_nan(md, nd);
  report.mean_iou = mean_or_nan(mi, nd);
  report.mean_hd95 = mean_or_nan(mh, nh);
  return report;
}

}  // namespace tskd::metrics
