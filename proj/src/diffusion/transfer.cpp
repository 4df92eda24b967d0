#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "tskd/core/dataset.hpp"
#include "tskd/core/rng.hpp"
#include "tskd/diffusion/diffusion.hpp"
#include "tskd/error.hpp"
#include "tskd/metrics/metrics.hpp"

namespace tskd::diffusion {

namespace {

void check_range(double lo, double hi, const char* name) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw ValidationError(std::string(name) + " range must be finite");
  if (lo > hi) throw ValidationError(std::string(name) + " range has min > max");
}

// cos/sin snapped to exact values at multiples of 90 degrees.
std::pair<double, double> cos_sin_deg(double deg) {
  const double q = deg / 90.0;
  if (std::abs(q - std::round(q)) < 1e-12) {
    static constexpr double c[4] = {1, 0, -1, 0};
    static constexpr double s[4] = {0, 1, 0, -1};
    const auto k = ((static_cast<long long>(std::llround(q)) % 4) + 4) % 4;
    return {c[k], s[k]};
  }
  const double r = deg * std::numbers::pi / 180.0;
  return {std::cos(r), std::sin(r)};
}

}  // namespace

void AugmentationSpec::validate() const {
  check_range(rotation_min_deg, rotation_max_deg, "rotation");
  check_range(scale_min, scale_max, "scale");
  check_range(shear_min_deg, shear_max_deg, "shear");
  if (!(scale_min > 0.0)) throw ValidationError("scale must be > 0");
  if (shear_min_deg <= -90.0 || shear_max_deg >= 90.0) throw ValidationError("shear must lie in (-90, 90) degrees");
  if (!std::isfinite(translate_max) || translate_max < 0.0) throw ValidationError("translate_max must be >= 0");
  if (count < 0) throw ValidationError("augmentation count must be >= 0");
}

AugmentationSpec AugmentationSpec::identity(std::int64_t count) {
  AugmentationSpec s;
  s.count = count;
  return s;
}

AugmentationSpec AugmentationSpec::standard(std::int64_t count) {
  AugmentationSpec s;
  s.rotation_min_deg = -30.0;
  s.rotation_max_deg = 30.0;
  s.scale_min = 0.85;
  s.scale_max = 1.15;
  s.shear_min_deg = -10.0;
  s.shear_max_deg = 10.0;
  s.translate_max = 0.1;
  s.count = count;
  return s;
}

std::array<double, 6> affine_matrix(double rotation_deg, double scale, double shear_deg, double tx, double ty,
                                    std::int64_t size) {
  const auto [c, s] = cos_sin_deg(rotation_deg);
  const double sh = shear_deg == 0.0 ? 0.0 : std::tan(shear_deg * std::numbers::pi / 180.0);
  // L = scale · R · [[1, sh], [0, 1]]
  const double a = scale * c, b = scale * (c * sh - s);
  const double d = scale * s, e = scale * (s * sh + c);
  const double ctr = (static_cast<double>(size) - 1.0) / 2.0;
  return {a, b, ctr - a * ctr - b * ctr + tx, d, e, ctr - d * ctr - e * ctr + ty};
}

torch::Tensor warp_image(const torch::Tensor& image, const std::array<double, 6>& m) {
  if (image.dim() != 3) throw ValidationError("warp_image expects H×W×C");
  const auto img = image.to(torch::kFloat).contiguous();
  const int h = static_cast<int>(img.size(0)), w = static_cast<int>(img.size(1)), ch = static_cast<int>(img.size(2));
  cv::Mat src(h, w, CV_32FC(ch), const_cast<float*>(img.data_ptr<float>()));
  cv::Mat M = (cv::Mat_<double>(2, 3) << m[0], m[1], m[2], m[3], m[4], m[5]);
  cv::Mat dst;
  cv::warpAffine(src, dst, M, src.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  auto out = torch::from_blob(dst.data, {h, w, ch}, torch::kFloat).clone();
  return out.clamp(0.0, 1.0);
}

TransferSet augment_base_set(const std::vector<torch::Tensor>& sources, const AugmentationSpec& spec,
                             std::uint64_t seed) {
  spec.validate();
  if (sources.empty()) throw ValidationError("augmentation needs at least one source image");
  const SeedStream seeds(seed);
  TransferSet set;
  set.provenance = Provenance::augmented;
  for (std::int64_t i = 0; i < spec.count; ++i) {
    const auto& src = sources[static_cast<std::size_t>(i) % sources.size()];
    auto rng = seeds.engine("augment", static_cast<std::uint64_t>(i));
    const double rot = uniform(rng, spec.rotation_min_deg, spec.rotation_max_deg);
    const double sc = uniform(rng, spec.scale_min, spec.scale_max);
    const double sh = uniform(rng, spec.shear_min_deg, spec.shear_max_deg);
    const double size = static_cast<double>(src.size(0));
    const double tx = uniform(rng, -spec.translate_max, spec.translate_max) * size;
    const double ty = uniform(rng, -spec.translate_max, spec.translate_max) * size;
    if (rot == 0.0 && sc == 1.0 && sh == 0.0 && tx == 0.0 && ty == 0.0) {
      set.images.push_back(src.to(torch::kFloat).clone());
      continue;
    }
    set.images.push_back(warp_image(src, affine_matrix(rot, sc, sh, tx, ty, src.size(0))));
  }
  return set;
}

TransferQuality evaluate_transfer(const TransferSet& transfer, const std::vector<torch::Tensor>& reference) {
  if (transfer.empty() || reference.empty()) throw ValidationError("transfer evaluation needs nonempty sets");
  auto to_vec = [](const torch::Tensor& t) {
    auto d = (t.to(torch::kDouble) * 255.0).contiguous();
    return std::vector<double>(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
  };
  std::vector<std::vector<double>> refs;
  for (const auto& r : reference) refs.push_back(to_vec(r));
  TransferQuality q;
  double psnr_sum = 0.0, mse_sum = 0.0;
  for (const auto& img : transfer.images) {
    const auto v = to_vec(img);
    double best = std::numeric_limits<double>::infinity();
    std::int64_t best_i = -1;
    for (std::size_t j = 0; j < refs.size(); ++j) {
      if (refs[j].size() != v.size()) throw ValidationError("transfer and reference image shapes differ");
      const auto r = metrics::psnr_mse(v, refs[j]);
      if (r.mse < best) {
        best = r.mse;
        best_i = static_cast<std::int64_t>(j);
      }
    }
    q.matched_reference.push_back(best_i);
    mse_sum += best;
    psnr_sum += metrics::psnr_from_mse(best);
  }
  const auto n = static_cast<double>(transfer.size());
  q.mean_mse = mse_sum / n;
  q.mean_psnr = psnr_sum / n;
  return q;
}

void save_transfer_set(const TransferSet& set, const TransferManifest& manifest, const std::filesystem::path& dir) {
  set.validate();
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < set.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    write_image_png(dir / name, set.images[i]);
  }
  nlohmann::json j{{"count", static_cast<std::int64_t>(set.size())},
                   {"provenance", to_string(manifest.provenance)},
                   {"seed", manifest.seed},
                   {"schedule_hash", manifest.schedule_hash}};
  std::ofstream(dir / "manifest.json") << j.dump(2) << "\n";
}

TransferSet load_transfer_set(const std::filesystem::path& dir, TransferManifest* manifest) {
  const auto mpath = dir / "manifest.json";
  if (!std::filesystem::exists(mpath)) {
    throw DependencyError("no transfer set at " + dir.string() + " (missing manifest.json)");
  }
  nlohmann::json j;
  try {
    std::ifstream(mpath) >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed transfer manifest " + mpath.string() + ": " + e.what());
  }
  TransferManifest m;
  m.count = j.value("count", std::int64_t{0});
  m.provenance = provenance_from_string(j.value("provenance", std::string("augmented")));
  m.seed = j.value("seed", std::uint64_t{0});
  m.schedule_hash = j.value("schedule_hash", std::string());
  TransferSet set;
  set.provenance = m.provenance;
  for (std::int64_t i = 0; i < m.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05lld.png", static_cast<long long>(i));
    const auto p = dir / name;
    if (!std::filesystem::exists(p)) throw IntegrityError("transfer set is missing " + p.string());
    set.images.push_back(read_image_png(p));
  }
  set.validate();
  if (manifest) *manifest = m;
  return set;
}

}  // namespace tskd::diffusion
