#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tskd/cli/cli.hpp"
#include "tskd/error.hpp"

using namespace tskd;
using namespace tskd::cli;
namespace fs = std::filesystem;

namespace {

trainer::RunRecord evaluated(const std::string& method, std::int64_t t, std::int64_t l, std::uint64_t seed,
                             double dice) {
  trainer::RunRecord r;
  r.stage = "finetune";
  r.seed = seed;
  r.params["cell"] = {{"method", method}, {"transfer_size", t}, {"label_budget", l}, {"seed", seed}};
  r.params["metrics"] = {{"mean_dice", dice}, {"mean_hd95", 2.0}};
  return r;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config precedence: defaults, desk, file, flags") {
    const auto dir = fs::temp_directory_path() / "tskd_unit_cfg";
    fs::create_directories(dir);
    const auto file = dir / "c.json";
    std::ofstream(file) << R"({"lora_rank": 8, "seed": 5})";
    const auto plain = resolve_config(std::nullopt, false, nlohmann::json::object());
    const auto desk = resolve_config(std::nullopt, true, nlohmann::json::object());
    CHECK(desk.schedule("pretrain_kd").epochs == std::max<std::int64_t>(1, plain.schedule("pretrain_kd").epochs / 20));
    const auto with_file = resolve_config(file, false, nlohmann::json::object());
    CHECK(with_file.lora_rank == 8);
    CHECK(with_file.seed == 5u);
    const auto with_flag = resolve_config(file, false, {{"seed", 9}});
    CHECK(with_flag.seed == 9u);
    CHECK(with_flag.lora_rank == 8);
    fs::remove_all(dir);
  }

  TEST_CASE("experiment matrix enumerates scratch once per budget") {
    ExperimentMatrix m{{Method::scratch, Method::ts_kd}, {100, 300}, {4, 16}, {1, 2}};
    const auto cells = m.cells();
    CHECK(cells.size() == 2u * 2 + 2u * 2 * 2);
    const auto cfg = m.cell_config(ExperimentConfig{}, cells.back());
    CHECK(cfg.method == Method::ts_kd);
    CHECK(cfg.transfer_size == 300);
    CHECK(cfg.label_budget == 16);
    CHECK(cfg.seed == 2u);
    ExperimentMatrix other = m;
    other.seeds = {1};
    CHECK(m.hash() != other.hash());
  }

  TEST_CASE("report aggregation is order independent") {
    std::vector<trainer::RunRecord> rs{evaluated("ts_kd", 300, 16, 1, 0.7), evaluated("ts_kd", 300, 16, 2, 0.5),
                                       evaluated("ts_kd", 300, 16, 3, 0.9), evaluated("scratch", 0, 16, 1, 0.4)};
    const auto a = build_report(rs);
    std::reverse(rs.begin(), rs.end());
    const auto b = build_report(rs);
    CHECK(a.to_csv() == b.to_csv());
    REQUIRE(a.rows.size() == 2u);
    const auto& ts = a.rows[1].method == "ts_kd" ? a.rows[1] : a.rows[0];
    CHECK(ts.runs == 3);
    CHECK(ts.median_dice == doctest::Approx(0.7));
    CHECK(ts.mean_dice == doctest::Approx(0.7));
    CHECK(a.to_csv().rfind("method,transfer_size,label_budget,runs,mean_dice,median_dice,mean_hd95", 0) == 0);
    CHECK(a.to_svg().find("<svg") != std::string::npos);
  }

  TEST_CASE("cell locks are exclusive") {
    const auto dir = fs::temp_directory_path() / "tskd_unit_lock";
    fs::remove_all(dir);
    {
      CellLock first(dir);
      CHECK_THROWS_AS(CellLock{dir}, ValidationError);
    }
    CHECK_FALSE(fs::exists(dir));
  }

  TEST_CASE("exit codes") {
    const auto w = (fs::temp_directory_path() / "tskd_unit_work").string();
    fs::remove_all(w);
    CHECK(run({"no-such-command"}) == 2);
    CHECK(run({"teacher-finetune", "-w", w, "--rank", "0"}) == 2);
    CHECK(run({"pretrain", "-w", w, "--method", "ts_kd"}) == 3);
    CHECK(run({"make-shapes", "-w", w, "--count", "4", "--test-count", "2", "--desk"}) == 0);
    fs::remove_all(w);
  }
}
