#include "sptucker/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

namespace sptucker {

void HyperParams::validate() const {
  try {
    Ranks r{ranks, r_core};
    if (ranks.empty()) throw ConfigError("ranks must be given");
    r.validate(ranks.size());
    if (r.core_elems() > kMaxCoreElems)
      throw ConfigError("core has too many elements (prod J_n > " +
                        std::to_string(kMaxCoreElems) + ")");
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (!(lr_a > 0.0) || !(lr_b > 0.0)) throw ConfigError("learning rates must be positive");
  if (reg_a < 0.0 || reg_b < 0.0) throw ConfigError("regularization must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(row_fraction > 0.0 && row_fraction <= 1.0))
    throw ConfigError("row fraction must lie in (0,1]");
  if (!(init_stddev > 0.0)) throw ConfigError("init stddev must be positive");
}

std::size_t HyperParams::effective_threads() const {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

std::vector<std::string> HyperParams::describe() const {
  auto fmt = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return std::string(buf);
  };
  std::string rank_list;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    rank_list += (i ? "," : "") + std::to_string(ranks[i]);
  return {
      "ranks = " + rank_list,
      "rcore = " + std::to_string(r_core),
      "lr-a = " + fmt(lr_a),
      "lr-b = " + fmt(lr_b),
      "reg-a = " + fmt(reg_a),
      "reg-b = " + fmt(reg_b),
      "batch-m = " + std::to_string(batch_m),
      "row-fraction = " + fmt(row_fraction),
      "epochs = " + std::to_string(epochs),
      "seed = " + std::to_string(seed),
      "threads = " + std::to_string(effective_threads()),
      "strategy = " + to_string(strategy),
      "balance = " + to_string(balance),
      "init-mean = " + fmt(init_mean),
      "init-stddev = " + fmt(init_stddev),
      "resample-core-batch = " + std::string(resample_core_batch ? "true" : "false"),
      "incremental-residual = " + std::string(incremental_residual ? "true" : "false"),
  };
}

TrainResult train(TuckerModel& model, const CooTensor& train_set, const CooTensor* test_set,
                  const HyperParams& hyper, WorkerPool* pool) {
  hyper.validate();
  if (hyper.ranks.size() != train_set.order())
    throw ConfigError("ranks arity does not match tensor order");

  Rng rng(hyper.seed + 1);
  CoreHyper core_hyper{hyper.lr_b, hyper.reg_b, hyper.batch_m, hyper.resample_core_batch,
                       hyper.incremental_residual};
  FactorHyper factor_hyper{hyper.lr_a, hyper.reg_a, hyper.row_fraction};
  SchedContext sched{hyper.strategy, hyper.balance,
                     hyper.strategy == Strategy::Serial ? nullptr : pool};

  CoreBatchWorkspace core_ws;
  std::vector<RowBatchWorkspace> row_ws(sched.workers());

  // One Kruskal-matrix exchange per epoch in the distributed accounting model.
  const CommCost comm = comm_cost_report(Ranks{hyper.ranks, hyper.r_core});
  const std::uint64_t comm_bytes_per_epoch = 8 * comm.kruskal_params;

  TrainResult result;
  result.metrics.reserve(hyper.epochs);
  using clock = std::chrono::steady_clock;

  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch;

    const auto t0 = clock::now();
    update_core_epoch(model, train_set, core_hyper, sched, rng, core_ws);
    const auto t1 = clock::now();
    const FactorEpochStats fstats =
        update_factor_epoch(model, train_set, factor_hyper, sched, rng, row_ws);
    const auto t2 = clock::now();

    if (!model.all_finite())
      throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                         "; reduce the learning rates");

    m.core_s = std::chrono::duration<double>(t1 - t0).count();
    m.factor_s = std::chrono::duration<double>(t2 - t1).count();
    m.total_s = m.core_s + m.factor_s;
    std::tie(m.train_rmse, m.train_mae) = rmse_mae(model, train_set);
    if (test_set != nullptr) {
      std::tie(m.test_rmse, m.test_mae) = rmse_mae(model, *test_set);
    } else {
      m.test_rmse = std::numeric_limits<double>::quiet_NaN();
      m.test_mae = std::numeric_limits<double>::quiet_NaN();
    }

    std::uint64_t ws_bytes = core_ws.bytes();
    for (const auto& ws : row_ws) ws_bytes += ws.bytes();
    result.peak_workspace_bytes = std::max(result.peak_workspace_bytes, ws_bytes);
    m.peak_bytes = result.peak_workspace_bytes;
    m.comm_bytes = comm_bytes_per_epoch;
    result.metrics.push_back(m);
    result.rows_skipped_last_epoch = fstats.rows_skipped;
  }
  return result;
}

std::pair<TuckerModel, TrainResult> train_from_scratch(const CooTensor& train_set,
                                                       const CooTensor* test_set,
                                                       const HyperParams& hyper) {
  hyper.validate();
  if (hyper.ranks.size() != train_set.order())
    throw ConfigError("ranks arity does not match tensor order");
  TuckerModel model = TuckerModel::init_gaussian(
      train_set.shape(), Ranks{hyper.ranks, hyper.r_core}, hyper.init_mean,
      hyper.init_stddev, hyper.seed);
  WorkerPool pool(hyper.strategy == Strategy::Serial ? 1 : hyper.effective_threads());
  TrainResult result = train(model, train_set, test_set, hyper, &pool);
  return {std::move(model), std::move(result)};
}

}  // namespace sptucker
