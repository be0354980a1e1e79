#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sptucker/core_optimizer.hpp"
#include "sptucker/eval.hpp"
#include "sptucker/factor_optimizer.hpp"
#include "sptucker/model.hpp"
#include "sptucker/scheduler.hpp"

namespace sptucker {

struct HyperParams {
  std::vector<std::uint32_t> ranks;  // J_1..J_N
  std::uint32_t r_core = 5;
  double lr_a = 0.002;
  double lr_b = 0.001;
  double reg_a = 0.01;
  double reg_b = 0.01;
  std::size_t batch_m = 1;    // core batch |Psi|; 0 = full training set
  double row_fraction = 1.0;  // factor-phase per-row batch share
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0 = all hardware threads
  Strategy strategy = Strategy::Improved;
  BalancePolicy balance = BalancePolicy::Dynamic;
  double init_mean = 0.5;
  double init_stddev = 0.1;
  bool resample_core_batch = false;
  bool incremental_residual = false;

  void validate() const;  // throws ConfigError
  std::size_t effective_threads() const;
  std::vector<std::string> describe() const;  // key = value lines
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  std::size_t rows_skipped_last_epoch = 0;
  std::uint64_t peak_workspace_bytes = 0;
};

// Runs `epochs` of (core phase; factor phase) per the training algorithm:
// the model is initialized from hyper.seed, the batch stream from
// hyper.seed + 1. Metric evaluation is single-threaded and excluded from the
// timed phases. Throws NumericError on divergence.
TrainResult train(TuckerModel& model, const CooTensor& train_set, const CooTensor* test_set,
                  const HyperParams& hyper, WorkerPool* pool);

// Convenience: init model + pool, train, return both.
std::pair<TuckerModel, TrainResult> train_from_scratch(const CooTensor& train_set,
                                                       const CooTensor* test_set,
                                                       const HyperParams& hyper);

}  // namespace sptucker
