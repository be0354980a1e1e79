#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sptucker/core_optimizer.hpp"
#include "sptucker/model.hpp"
#include "sptucker/scheduler.hpp"
#include "sptucker/sptensor.hpp"

namespace sptucker {

struct FactorHyper {
  double lr = 0.002;          // gamma_A
  double reg = 0.01;          // lambda_A
  double row_fraction = 1.0;  // share of each row's observed entries used per step
};

// Per-worker scratch for the factor phase (the private caches of the improved
// strategy). Buffers grow on first use only.
class RowBatchWorkspace {
 public:
  std::vector<double> s;      // cache_S: kron row, prod_{k!=n} J_k
  std::vector<double> e;      // cache_E: one E column, J_n
  std::vector<double> fact1;  // cache_Fact1: -X E^T accumulator, J_n
  std::vector<double> fact2;  // cache_Fact2: sum of p e^T, J_n
  std::vector<double> grad;   // F, J_n
  std::vector<double> gram;   // C = E E^T, J_n x J_n (validation route)

  std::size_t alloc_events() const { return alloc_events_; }
  std::size_t bytes() const;

  template <class T>
  void grow(std::vector<T>& v, std::size_t n) {
    if (v.capacity() < n) ++alloc_events_;
    v.resize(n);
  }

 private:
  std::size_t alloc_events_ = 0;
};

struct FactorEpochStats {
  std::size_t rows_updated = 0;
  std::size_t rows_skipped = 0;  // rows with no observed entries
  double max_imbalance = 0.0;    // worst per-mode load imbalance seen
};

// Entries used for one row step: the full mode-n bucket of row i_n (1-based),
// or a sampled subset when fraction < 1.
std::vector<std::uint32_t> row_batch(const CooTensor& t, std::size_t mode, std::uint32_t i_n,
                                     double fraction, Rng& rng);

// Unregularized data term F = sum_j [-x_j e_j^T + (a . e_j) e_j^T] over the
// given entries, accumulated as cache_Fact1 plus the p = a.e then p e^T
// decomposition. The gradient of the batch objective is F/|batch| + lambda*a.
void grad_a_row(const TuckerModel& model, const CooTensor& t, std::size_t mode,
                std::uint32_t i_n, std::span<const std::uint32_t> batch,
                RowBatchWorkspace& ws, std::span<double> f_out);

// Same value through the explicit gram matrix C = E E^T; used to validate
// the decomposed accumulation.
void grad_a_row_gram(const TuckerModel& model, const CooTensor& t, std::size_t mode,
                     std::uint32_t i_n, std::span<const std::uint32_t> batch,
                     RowBatchWorkspace& ws, std::span<double> f_out);

// One SGD step for every non-empty row of every factor matrix, modes
// ascending. Requires a fresh core cache (run the core phase first). A zero
// learning rate freezes the phase (bit-exact no-op).
FactorEpochStats update_factor_epoch(TuckerModel& model, const CooTensor& train,
                                     const FactorHyper& hyper, const SchedContext& sched,
                                     Rng& rng, std::vector<RowBatchWorkspace>& per_worker);

}  // namespace sptucker
