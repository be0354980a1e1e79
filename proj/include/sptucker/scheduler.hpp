#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sptucker/common.hpp"
#include "sptucker/sptensor.hpp"

namespace sptucker {

enum class Strategy { Serial, Naive, Improved };
enum class BalancePolicy { Static, Dynamic };

Strategy parse_strategy(const std::string& s);
BalancePolicy parse_balance(const std::string& s);
std::string to_string(Strategy s);
std::string to_string(BalancePolicy p);

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
};

// Contiguous near-equal slices of [0, count): sizes differ by at most one,
// trailing slices may be empty when workers > count.
std::vector<Range> partition_even(std::size_t count, std::size_t workers);

struct RowAssignment {
  std::vector<std::vector<std::uint32_t>> rows_per_worker;  // 1-based row ids
  std::vector<std::uint64_t> load_per_worker;               // observed entries
  std::uint64_t max_load() const;
  double imbalance() const;  // max/ideal - 1 over nonzero ideal
};

// Distribute the rows of mode `mode` over `workers`. Static: round-robin by
// row id. Dynamic: longest-processing-time greedy on bucket sizes.
RowAssignment assign_factor_rows(const CooTensor& t, std::size_t mode, std::size_t workers,
                                 BalancePolicy policy);

// Elementwise sum of per-worker partial accumulators, merged in ascending
// worker-rank order so results are reproducible at fixed worker count.
void reduce_in_order(std::span<const std::vector<double>> partials, std::vector<double>& out);

// Fixed pool of workers. run(f) invokes f(rank) once per rank in [0, size())
// and returns when all are done; rank 0 executes on the calling thread. A
// pool of size 1 never spawns threads.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t workers);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::size_t size() const { return size_; }
  void run(const std::function<void(std::size_t)>& task);

 private:
  void worker_loop(std::size_t rank);

  std::size_t size_ = 1;
  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable work_cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::uint64_t generation_ = 0;
  std::size_t remaining_ = 0;
  bool stopping_ = false;
  std::exception_ptr first_error_;
};

// Scheduling context shared by the optimizers: strategy, balance policy and
// the pool that owns the threads.
struct SchedContext {
  Strategy strategy = Strategy::Serial;
  BalancePolicy balance = BalancePolicy::Dynamic;
  WorkerPool* pool = nullptr;  // may be null for Serial

  std::size_t workers() const {
    return (strategy == Strategy::Serial || pool == nullptr) ? 1 : pool->size();
  }
};

}  // namespace sptucker
