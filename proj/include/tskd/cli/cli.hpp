#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tskd/core/config.hpp"
#include "tskd/trainer/trainer.hpp"

namespace tskd::cli {

/// Parses `args` (without the program name), runs one command and returns
/// the process exit code: 0 success, 2 validation, 3 missing dependency,
/// 4 numerical abort, 1 anything else.
int run(const std::vector<std::string>& args);

/// Built-in defaults, optionally the desk profile, then the config file,
/// then explicit flag overrides (same key layout as the file).
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file, bool desk,
                                const nlohmann::json& flag_overrides);

/// methods × transfer sizes × label budgets × seeds.
struct ExperimentMatrix {
  std::vector<Method> methods;
  std::vector<std::int64_t> transfer_sizes;
  std::vector<std::int64_t> label_budgets;
  std::vector<std::uint64_t> seeds;

  struct Cell {
    Method method;
    std::int64_t transfer_size;
    std::int64_t label_budget;
    std::uint64_t seed;
  };

  /// Cells in method, transfer, budget, seed order. scratch cells ignore
  /// the transfer axis (one cell per budget and seed).
  std::vector<Cell> cells() const;
  ExperimentConfig cell_config(const ExperimentConfig& base, const Cell& cell) const;
  std::string hash() const;
};

/// Exclusive marker file in a cell directory; the constructor throws
/// ValidationError when another process holds it.
class CellLock {
 public:
  explicit CellLock(const std::filesystem::path& dir);
  ~CellLock();
  CellLock(const CellLock&) = delete;
  CellLock& operator=(const CellLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct ReportRow {
  std::string method;
  std::int64_t transfer_size = 0;
  std::int64_t label_budget = 0;
  std::int64_t runs = 0;
  double mean_dice = 0.0;
  double median_dice = 0.0;
  double mean_hd95 = 0.0;
};

struct Report {
  std::vector<ReportRow> rows;  // sorted by method, transfer, budget

  std::string to_csv() const;
  /// Dice vs label budget, one line per method/transfer size.
  std::string to_svg() const;
  void write_png(const std::filesystem::path& path) const;
};

/// Aggregates evaluated fine-tuning records; independent of input order.
Report build_report(const std::vector<trainer::RunRecord>& records);

}  // namespace tskd::cli
