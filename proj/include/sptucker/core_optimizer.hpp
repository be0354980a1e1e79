#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sptucker/model.hpp"
#include "sptucker/scheduler.hpp"
#include "sptucker/sptensor.hpp"

namespace sptucker {

struct CoreHyper {
  double lr = 0.001;         // gamma_B
  double reg = 0.01;         // lambda_B
  std::size_t batch_m = 1;   // |Psi|; 0 selects the full training set
  bool resample_per_mode = false;
  bool incremental_residual = false;
};

// Scratch for one core-phase sweep; buffers are grown on first use and reused
// across epochs. Growth after the first epoch counts as an allocation event.
class CoreBatchWorkspace {
 public:
  std::vector<std::uint32_t> batch;  // Psi entry ids
  std::vector<double> x;             // observed values for Psi
  std::vector<double> coeff;         // c_{s,r} = prod_{k!=n} a^(k).b^(k)_r, M x R
  std::vector<double> w;             // W_r rows, layout [r][s][j], R x M x J_n
  std::vector<double> resid;         // x-hat, length M
  std::vector<double> bcols;         // contiguous copies of b^(n) columns, R x J_n
  std::vector<double> C;             // J_n x J_n merged accumulator
  std::vector<double> U;             // W^T x-hat, length J_n
  std::vector<double> V;             // gradient carrier, length J_n
  std::vector<std::vector<double>> part_c;  // per-worker partials of C
  std::vector<std::vector<double>> part_u;  // per-worker partials of U
  std::vector<std::uint32_t> sample_pool;

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

struct CoreEpochStats {
  std::size_t batch_size = 0;
  std::size_t effective_workers = 1;
};

// One row of H^(n) O_r for the observation at `coord`:
//   w = (prod_{k != n} a^(k)_{i_k,:} . b^(k)_{:,r}) * a^(n)_{i_n,:}.
void compute_w_row(const TuckerModel& model, std::span<const std::uint32_t> coord,
                   std::size_t mode, std::size_t r, std::span<double> w_out);

// x-hat_s = x_s - sum_{r != r_exclude} w_s(r) . b^(n)_{:,r}. Pass
// r_exclude >= R_core to subtract every term (full residual).
void core_residual(const TuckerModel& model, const CooTensor& t,
                   std::span<const std::uint32_t> batch, std::size_t mode,
                   std::size_t r_exclude, std::vector<double>& out);

// V = -W^T x-hat + (W^T W) b^(n)_{:,r} over the batch; the gradient of the
// batch objective is V/M + lambda * b. C (= W^T W) is exposed for tests.
void grad_b(const TuckerModel& model, const CooTensor& t,
            std::span<const std::uint32_t> batch, std::size_t mode, std::size_t r,
            std::vector<double>& v_out, std::vector<double>* c_out = nullptr);

// w <- w - gamma * (v/m + lambda * w). Non-finite input or result aborts with
// a diagnostic (no silent clipping).
void sgd_step(std::size_t m, double lambda, double gamma, std::span<double> w,
              std::span<const double> v);

// Algorithm: for each mode ascending, build the W_r caches once, then sweep
// r_core ascending (cyclic block order): residual, C and V, SGD step on
// b^(n)_{:,r_core}. The dense core cache is refreshed afterwards. A zero
// learning rate freezes the phase (bit-exact no-op).
CoreEpochStats update_core_epoch(TuckerModel& model, const CooTensor& train,
                                 const CoreHyper& hyper, const SchedContext& sched, Rng& rng,
                                 CoreBatchWorkspace& ws);

}  // namespace sptucker
