#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <tuple>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tskd/cli/cli.hpp"
#include "tskd/error.hpp"

namespace tskd::cli {

ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file, bool desk,
                                const nlohmann::json& flag_overrides) {
  ExperimentConfig cfg;
  if (desk) cfg = cfg.desk();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ValidationError("cannot read config file " + file->string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config file " + file->string() + " is not valid JSON: " + e.what());
    }
    cfg = ExperimentConfig::from_json(j, cfg);
  }
  cfg = ExperimentConfig::from_json(flag_overrides, cfg);
  cfg.validate();
  return cfg;
}

std::vector<ExperimentMatrix::Cell> ExperimentMatrix::cells() const {
  std::vector<Cell> out;
  for (auto m : methods) {
    const std::vector<std::int64_t> transfers =
        m == Method::scratch ? std::vector<std::int64_t>{0} : transfer_sizes;
    for (auto t : transfers) {
      for (auto l : label_budgets) {
        for (auto s : seeds) out.push_back({m, t, l, s});
      }
    }
  }
  return out;
}

ExperimentConfig ExperimentMatrix::cell_config(const ExperimentConfig& base, const Cell& cell) const {
  ExperimentConfig c = base;
  c.method = cell.method;
  c.transfer_size = cell.transfer_size;
  c.label_budget = cell.label_budget;
  c.seed = cell.seed;
  return c;
}

std::string ExperimentMatrix::hash() const {
  nlohmann::json j;
  for (auto m : methods) j["methods"].push_back(to_string(m));
  j["transfer_sizes"] = transfer_sizes;
  j["label_budgets"] = label_budgets;
  j["seeds"] = seeds;
  return hash_json(j);
}

CellLock::CellLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
  std::filesystem::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw ValidationError("cell " + dir.string() + " is locked by another process (" + path_.string() + ")");
  const auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

CellLock::~CellLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
  if (std::filesystem::is_empty(path_.parent_path(), ec)) std::filesystem::remove(path_.parent_path(), ec);
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string series_label(const ReportRow& r) {
  return r.method == "scratch" ? r.method : r.method + " (" + std::to_string(r.transfer_size) + ")";
}

std::map<std::string, std::vector<const ReportRow*>> series(const Report& rep) {
  std::map<std::string, std::vector<const ReportRow*>> s;
  for (const auto& r : rep.rows) s[series_label(r)].push_back(&r);
  return s;
}

struct Axes {
  double x0, x1, y0 = 0.0, y1 = 1.0;
  int left = 60, right = 180, top = 20, bottom = 40, width = 640, height = 400;

  double px(double budget) const {
    const double t = x1 > x0 ? (std::log2(budget) - std::log2(x0)) / (std::log2(x1) - std::log2(x0)) : 0.5;
    return left + t * (width - left - right);
  }
  double py(double dice) const { return top + (1.0 - (dice - y0) / (y1 - y0)) * (height - top - bottom); }
};

Axes make_axes(const Report& rep) {
  Axes a{1.0, 1.0};
  if (!rep.rows.empty()) {
    a.x0 = a.x1 = static_cast<double>(rep.rows.front().label_budget);
    for (const auto& r : rep.rows) {
      a.x0 = std::min(a.x0, static_cast<double>(r.label_budget));
      a.x1 = std::max(a.x1, static_cast<double>(r.label_budget));
    }
  }
  return a;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string Report::to_csv() const {
  std::string out = "method,transfer_size,label_budget,runs,mean_dice,median_dice,mean_hd95\n";
  for (const auto& r : rows) {
    out += r.method + "," + std::to_string(r.transfer_size) + "," + std::to_string(r.label_budget) + "," +
           std::to_string(r.runs) + "," + fmt(r.mean_dice) + "," + fmt(r.median_dice) + "," + fmt(r.mean_hd95) +
           "\n";
  }
  return out;
}

std::string Report::to_svg() const {
  const auto a = make_axes(*this);
  char buf[256];
  std::string s;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" font-family=\"sans-serif\" "
                "font-size=\"11\">\n<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n",
                a.width, a.height);
  s += buf;
  for (int k = 0; k <= 5; ++k) {
    const double d = 0.2 * k;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%.1f\" x2=\"%d\" y2=\"%.1f\" stroke=\"#ddd\"/><text x=\"%d\" y=\"%.1f\" "
                  "text-anchor=\"end\">%.1f</text>\n",
                  a.left, a.py(d), a.width - a.right, a.py(d), a.left - 6, a.py(d) + 4, d);
    s += buf;
  }
  std::vector<std::int64_t> budgets;
  for (const auto& r : rows) budgets.push_back(r.label_budget);
  std::sort(budgets.begin(), budgets.end());
  budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
  for (auto b : budgets) {
    std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%d\" text-anchor=\"middle\">%lld</text>\n",
                  a.px(static_cast<double>(b)), a.height - a.bottom + 16, static_cast<long long>(b));
    s += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"%d\" text-anchor=\"middle\">labels</text>\n<text x=\"14\" y=\"%d\" "
                "transform=\"rotate(-90 14 %d)\" text-anchor=\"middle\">Dice</text>\n",
                (a.left + a.width - a.right) / 2, a.height - 6, a.height / 2, a.height / 2);
  s += buf;
  int idx = 0;
  for (const auto& [label, pts] : series(*this)) {
    const char* color = kPalette[idx % 8];
    std::string path;
    for (const auto* p : pts) {
      std::snprintf(buf, sizeof(buf), "%s%.1f,%.1f", path.empty() ? "" : " ", a.px(static_cast<double>(p->label_budget)),
                    a.py(p->median_dice));
      path += buf;
    }
    std::snprintf(buf, sizeof(buf), "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"2\" points=\"", color);
    s += buf + path + "\"/>\n";
    for (const auto* p : pts) {
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n",
                    a.px(static_cast<double>(p->label_budget)), a.py(p->median_dice), color);
      s += buf;
    }
    const int ly = a.top + 16 * idx + 8;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"%s\" stroke-width=\"2\"/><text x=\"%d\" "
                  "y=\"%d\">",
                  a.width - a.right + 12, ly, a.width - a.right + 32, ly, color, a.width - a.right + 38, ly + 4);
    s += buf + label + "</text>\n";
    ++idx;
  }
  s += "</svg>\n";
  return s;
}

void Report::write_png(const std::filesystem::path& path) const {
  const auto a = make_axes(*this);
  cv::Mat img(a.height, a.width, CV_8UC3, cv::Scalar(255, 255, 255));
  auto pt = [&](double x, double y) { return cv::Point(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y))); };
  for (int k = 0; k <= 5; ++k) {
    const double d = 0.2 * k;
    cv::line(img, pt(a.left, a.py(d)), pt(a.width - a.right, a.py(d)), cv::Scalar(221, 221, 221), 1);
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%.1f", d);
    cv::putText(img, buf, pt(a.left - 30, a.py(d) + 4), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
  }
  int idx = 0;
  for (const auto& [label, pts] : series(*this)) {
    unsigned rgb = 0;
    std::sscanf(kPalette[idx % 8] + 1, "%x", &rgb);
    const cv::Scalar color(rgb & 0xff, (rgb >> 8) & 0xff, (rgb >> 16) & 0xff);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto p = pt(a.px(static_cast<double>(pts[i]->label_budget)), a.py(pts[i]->median_dice));
      cv::circle(img, p, 3, color, cv::FILLED, cv::LINE_AA);
      if (i > 0) {
        cv::line(img, pt(a.px(static_cast<double>(pts[i - 1]->label_budget)), a.py(pts[i - 1]->median_dice)), p,
                 color, 2, cv::LINE_AA);
      }
      cv::putText(img, std::to_string(pts[i]->label_budget), pt(a.px(static_cast<double>(pts[i]->label_budget)) - 6,
                  a.height - a.bottom + 16), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
    }
    const int ly = a.top + 16 * idx + 8;
    cv::line(img, pt(a.width - a.right + 12, ly), pt(a.width - a.right + 32, ly), color, 2);
    cv::putText(img, label, pt(a.width - a.right + 38, ly + 4), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1);
    ++idx;
  }
  cv::putText(img, "Dice vs labels", pt(a.left, a.height - 8), cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1);
  if (!cv::imwrite(path.string(), img)) throw Error("cannot write " + path.string());
}

Report build_report(const std::vector<trainer::RunRecord>& records) {
  using Key = std::tuple<std::string, std::int64_t, std::int64_t>;
  std::map<Key, std::vector<std::pair<double, double>>> groups;
  for (const auto& r : records) {
    if (!r.params.contains("cell") || !r.params.contains("metrics")) continue;
    const auto& c = r.params["cell"];
    const auto& m = r.params["metrics"];
    const auto hd = m["mean_hd95"].is_number() ? m["mean_hd95"].get<double>() : std::nan("");
    groups[{c.at("method").get<std::string>(), c.at("transfer_size").get<std::int64_t>(),
            c.at("label_budget").get<std::int64_t>()}]
        .emplace_back(m.at("mean_dice").get<double>(), hd);
  }
  Report rep;
  for (auto& [key, vals] : groups) {
    ReportRow row;
    std::tie(row.method, row.transfer_size, row.label_budget) = key;
    std::sort(vals.begin(), vals.end());
    row.runs = static_cast<std::int64_t>(vals.size());
    std::vector<double> dice;
    double hd_sum = 0.0;
    for (const auto& [d, h] : vals) {
      dice.push_back(d);
      row.mean_dice += d;
      hd_sum += h;
    }
    row.mean_dice /= static_cast<double>(vals.size());
    row.median_dice = median(dice);
    row.mean_hd95 = hd_sum / static_cast<double>(vals.size());
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace tskd::cli
