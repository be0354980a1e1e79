#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sptucker/model.hpp"
#include "sptucker/scheduler.hpp"
#include "sptucker/sptensor.hpp"

namespace sptucker {

struct EpochMetrics {
  std::size_t epoch = 0;
  double core_s = 0.0;
  double factor_s = 0.0;
  double total_s = 0.0;
  double train_rmse = 0.0;
  double train_mae = 0.0;
  double test_rmse = 0.0;  // NaN when no test set was given
  double test_mae = 0.0;
  std::uint64_t peak_bytes = 0;
  std::uint64_t comm_bytes = 0;
};

// RMSE and MAE of model predictions over every entry of `entries` (Eq-19
// style, fixed summation order, single-threaded).
std::pair<double, double> rmse_mae(const TuckerModel& model, const CooTensor& entries);

struct CommCost {
  std::uint64_t dense_core_params = 0;  // prod J_n
  std::uint64_t kruskal_params = 0;     // sum J_n * R_core
  double ratio = 0.0;
};

// Parameter counts a distributed exchange of the core would move: the dense
// core versus the Kruskal matrices.
CommCost comm_cost_report(const Ranks& ranks);

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows,
                       const std::vector<std::string>& config_comments);
std::vector<EpochMetrics> parse_metrics_csv(const std::string& path,
                                            std::vector<std::string>* comments = nullptr);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  bool degenerate = false;  // fewer than two distinct x values
};

LinearFit fit_linear(const std::vector<double>& x, const std::vector<double>& y);

struct RankScalingRow {
  std::uint32_t j_value = 0;
  double seconds_per_epoch = 0.0;
  std::uint64_t peak_bytes = 0;
};

struct RankScalingResult {
  std::vector<RankScalingRow> rows;
  LinearFit time_fit;
  LinearFit bytes_fit;
};

struct SpeedupRow {
  std::size_t threads = 0;
  double seconds_per_epoch = 0.0;
  double speedup = 0.0;
  double efficiency = 0.0;
};

struct BenchOptions {
  std::size_t epochs = 2;   // measured epochs per point (median)
  std::size_t warmup = 1;   // excluded from the fit
  std::uint64_t seed = 1;
  double lr_a = 0.002;
  double lr_b = 0.001;
  double reg = 0.01;
  std::size_t batch_m = 1;
  Strategy strategy = Strategy::Improved;
  std::size_t threads = 1;  // rank-scaling bench
};

// Seconds per training epoch for each rank setting in `grid` (x value =
// the entry of J that the grid varies), plus linear fits of time and peak
// workspace bytes against x.
RankScalingResult bench_rank_scaling(const CooTensor& train, const std::vector<Ranks>& grid,
                                     const std::vector<std::uint32_t>& x_values,
                                     const BenchOptions& opts);

// Seconds per epoch and speedup T_1/T_L for each worker count.
std::vector<SpeedupRow> bench_speedup(const CooTensor& train, const Ranks& ranks,
                                      const std::vector<std::size_t>& thread_grid,
                                      const BenchOptions& opts);

}  // namespace sptucker
