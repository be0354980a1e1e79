#include "sptucker/scheduler.hpp"

#include <algorithm>
#include <numeric>

namespace sptucker {

Strategy parse_strategy(const std::string& s) {
  if (s == "serial") return Strategy::Serial;
  if (s == "naive") return Strategy::Naive;
  if (s == "improved") return Strategy::Improved;
  throw ConfigError("unknown strategy '" + s + "' (serial|naive|improved)");
}

BalancePolicy parse_balance(const std::string& s) {
  if (s == "static") return BalancePolicy::Static;
  if (s == "dynamic") return BalancePolicy::Dynamic;
  throw ConfigError("unknown balance policy '" + s + "' (static|dynamic)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Serial: return "serial";
    case Strategy::Naive: return "naive";
    case Strategy::Improved: return "improved";
  }
  return "?";
}

std::string to_string(BalancePolicy p) {
  return p == BalancePolicy::Static ? "static" : "dynamic";
}

std::vector<Range> partition_even(std::size_t count, std::size_t workers) {
  if (workers < 1) throw DomainError("partition_even: need at least one worker");
  std::vector<Range> out(workers);
  const std::size_t base = count / workers;
  const std::size_t rem = count % workers;
  std::size_t at = 0;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t len = base + (w < rem ? 1 : 0);
    out[w] = {at, at + len};
    at += len;
  }
  return out;
}

std::uint64_t RowAssignment::max_load() const {
  std::uint64_t m = 0;
  for (auto l : load_per_worker) m = std::max(m, l);
  return m;
}

double RowAssignment::imbalance() const {
  const std::uint64_t total = std::accumulate(load_per_worker.begin(), load_per_worker.end(),
                                              std::uint64_t{0});
  if (total == 0 || load_per_worker.empty()) return 0.0;
  const double ideal = static_cast<double>(total) / static_cast<double>(load_per_worker.size());
  return static_cast<double>(max_load()) / ideal - 1.0;
}

RowAssignment assign_factor_rows(const CooTensor& t, std::size_t mode, std::size_t workers,
                                 BalancePolicy policy) {
  if (workers < 1) throw DomainError("assign_factor_rows: need at least one worker");
  const std::uint32_t dim = t.shape().dim(mode);
  RowAssignment out;
  out.rows_per_worker.resize(workers);
  out.load_per_worker.assign(workers, 0);

  if (policy == BalancePolicy::Static) {
    for (std::uint32_t i = 1; i <= dim; ++i) {
      const std::size_t w = (i - 1) % workers;
      out.rows_per_worker[w].push_back(i);
      out.load_per_worker[w] += t.bucket(mode, i).size();
    }
    return out;
  }

  // Longest-processing-time greedy: largest bucket first onto the least
  // loaded worker; ties resolved by worker rank for determinism.
  std::vector<std::uint32_t> rows(dim);
  std::iota(rows.begin(), rows.end(), 1u);
  std::stable_sort(rows.begin(), rows.end(), [&](std::uint32_t a, std::uint32_t b) {
    return t.bucket(mode, a).size() > t.bucket(mode, b).size();
  });
  for (std::uint32_t i : rows) {
    std::size_t target = 0;
    for (std::size_t w = 1; w < workers; ++w)
      if (out.load_per_worker[w] < out.load_per_worker[target]) target = w;
    out.rows_per_worker[target].push_back(i);
    out.load_per_worker[target] += t.bucket(mode, i).size();
  }
  return out;
}

void reduce_in_order(std::span<const std::vector<double>> partials, std::vector<double>& out) {
  if (partials.empty()) throw InternalError("reduce_in_order: no partials");
  const std::size_t n = partials[0].size();
  for (const auto& p : partials)
    if (p.size() != n) throw InternalError("reduce_in_order: shape mismatch");
  out.assign(n, 0.0);
  for (const auto& p : partials)
    for (std::size_t i = 0; i < n; ++i) out[i] += p[i];
}

WorkerPool::WorkerPool(std::size_t workers) : size_(workers == 0 ? 1 : workers) {
  threads_.reserve(size_ - 1);
  for (std::size_t rank = 1; rank < size_; ++rank)
    threads_.emplace_back([this, rank] { worker_loop(rank); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  work_cv_.notify_all();
  for (auto& th : threads_) th.join();
}

void WorkerPool::worker_loop(std::size_t rank) {
  std::uint64_t seen = 0;
  for (;;) {
    const std::function<void(std::size_t)>* task = nullptr;
    {
      std::unique_lock lock(mutex_);
      work_cv_.wait(lock, [&] { return stopping_ || generation_ != seen; });
      if (stopping_) return;
      seen = generation_;
      task = task_;
    }
    try {
      (*task)(rank);
    } catch (...) {
      std::lock_guard lock(mutex_);
      if (!first_error_) first_error_ = std::current_exception();
    }
    {
      std::lock_guard lock(mutex_);
      if (--remaining_ == 0) done_cv_.notify_all();
    }
  }
}

void WorkerPool::run(const std::function<void(std::size_t)>& task) {
  if (size_ == 1) {
    task(0);
    return;
  }
  {
    std::lock_guard lock(mutex_);
    task_ = &task;
    remaining_ = size_ - 1;
    ++generation_;
  }
  work_cv_.notify_all();
  std::exception_ptr local_error;
  try {
    task(0);
  } catch (...) {
    local_error = std::current_exception();
  }
  {
    std::unique_lock lock(mutex_);
    done_cv_.wait(lock, [&] { return remaining_ == 0; });
    if (!local_error && first_error_) {
      local_error = first_error_;
      first_error_ = nullptr;
    } else {
      first_error_ = nullptr;
    }
  }
  if (local_error) std::rethrow_exception(local_error);
}

}  // namespace sptucker
