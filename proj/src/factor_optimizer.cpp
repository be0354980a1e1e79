#include "sptucker/factor_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sptucker {

std::size_t RowBatchWorkspace::bytes() const {
  std::size_t b = 0;
  for (const auto* v : {&s, &e, &fact1, &fact2, &grad, &gram})
    b += v->capacity() * sizeof(double);
  return b;
}

std::vector<std::uint32_t> row_batch(const CooTensor& t, std::size_t mode, std::uint32_t i_n,
                                     double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw DomainError("row_batch: fraction must lie in (0,1]");
  const auto bucket = t.bucket(mode, i_n);
  std::vector<std::uint32_t> out(bucket.begin(), bucket.end());
  if (fraction >= 1.0 || out.empty()) return out;
  std::size_t keep = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(out.size())));
  keep = std::max<std::size_t>(keep, 1);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_below(out.size() - i));
    std::swap(out[i], out[j]);
  }
  out.resize(keep);
  return out;
}

void grad_a_row(const TuckerModel& model, const CooTensor& t, std::size_t mode,
                std::uint32_t i_n, std::span<const std::uint32_t> batch,
                RowBatchWorkspace& ws, std::span<double> f_out) {
  const std::uint32_t jn = model.ranks().J[mode];
  ws.grow(ws.fact1, jn);
  ws.grow(ws.fact2, jn);
  std::fill(ws.fact1.begin(), ws.fact1.end(), 0.0);
  std::fill(ws.fact2.begin(), ws.fact2.end(), 0.0);
  const double* arow = model.factor(mode).row(i_n - 1);
  for (const std::uint32_t entry : batch) {
    const auto coord = t.coord(entry);
    model.e_column(coord, mode, ws.s, ws.e);
    const double p = dot(arow, ws.e.data(), jn);  // cache_Factp
    const double x = t.value(entry);
    for (std::uint32_t j = 0; j < jn; ++j) {
      ws.fact1[j] -= x * ws.e[j];
      ws.fact2[j] += p * ws.e[j];  // cache_Factvec
    }
  }
  for (std::uint32_t j = 0; j < jn; ++j) f_out[j] = ws.fact1[j] + ws.fact2[j];
}

void grad_a_row_gram(const TuckerModel& model, const CooTensor& t, std::size_t mode,
                     std::uint32_t i_n, std::span<const std::uint32_t> batch,
                     RowBatchWorkspace& ws, std::span<double> f_out) {
  const std::uint32_t jn = model.ranks().J[mode];
  ws.grow(ws.fact1, jn);
  ws.grow(ws.gram, static_cast<std::size_t>(jn) * jn);
  std::fill(ws.fact1.begin(), ws.fact1.end(), 0.0);
  std::fill(ws.gram.begin(), ws.gram.end(), 0.0);
  for (const std::uint32_t entry : batch) {
    const auto coord = t.coord(entry);
    model.e_column(coord, mode, ws.s, ws.e);
    const double x = t.value(entry);
    for (std::uint32_t i = 0; i < jn; ++i) {
      ws.fact1[i] -= x * ws.e[i];
      for (std::uint32_t j = 0; j < jn; ++j) ws.gram[i * jn + j] += ws.e[i] * ws.e[j];
    }
  }
  const double* arow = model.factor(mode).row(i_n - 1);
  for (std::uint32_t j = 0; j < jn; ++j) {
    double acc = 0.0;
    for (std::uint32_t i = 0; i < jn; ++i) acc += arow[i] * ws.gram[i * jn + j];
    f_out[j] = ws.fact1[j] + acc;
  }
}

namespace {

struct BoundaryPartial {
  std::uint32_t row = 0;
  std::size_t count = 0;        // entries contributed
  std::vector<double> partial;  // fact1 + fact2 over this worker's share
};

// One row step: F over `batch`, then SGD on the row.
void step_row(TuckerModel& model, const CooTensor& t, const FactorHyper& hyper,
              std::size_t mode, std::uint32_t i_n, std::span<const std::uint32_t> batch,
              RowBatchWorkspace& ws) {
  const std::uint32_t jn = model.ranks().J[mode];
  grad_a_row(model, t, mode, i_n, batch, ws, {ws.grad.data(), jn});
  double* arow = model.factor(mode).row(i_n - 1);
  sgd_step(batch.size(), hyper.reg, hyper.lr, {arow, jn}, {ws.grad.data(), jn});
}

}  // namespace

FactorEpochStats update_factor_epoch(TuckerModel& model, const CooTensor& train,
                                     const FactorHyper& hyper, const SchedContext& sched,
                                     Rng& rng, std::vector<RowBatchWorkspace>& per_worker) {
  if (!(hyper.row_fraction > 0.0 && hyper.row_fraction <= 1.0))
    throw DomainError("row fraction must lie in (0,1]");
  if (hyper.lr < 0.0) throw DomainError("factor learning rate must be non-negative");
  if (hyper.lr == 0.0) return {};  // frozen phase: bit-exact no-op
  const std::size_t order = model.order();
  const std::size_t workers = sched.workers();
  if (per_worker.size() < workers) per_worker.resize(workers);
  FactorEpochStats stats;

  std::vector<std::uint32_t> sub_perm;
  std::vector<std::uint64_t> sub_offsets;
  std::vector<std::uint32_t> bucket_scratch;

  auto run = [&](const std::function<void(std::size_t)>& task) {
    if (workers == 1 || sched.pool == nullptr) {
      task(0);
    } else {
      sched.pool->run(task);
    }
  };

  for (std::size_t n = 0; n < order; ++n) {
    const std::uint32_t jn = model.ranks().J[n];
    const std::uint32_t dim = model.shape().dim(n);
    const std::size_t kron_len =
        static_cast<std::size_t>(model.ranks().core_elems() / jn);
    for (auto& ws : per_worker) {
      ws.grow(ws.s, kron_len);
      ws.grow(ws.e, jn);
      ws.grow(ws.fact1, jn);
      ws.grow(ws.fact2, jn);
      ws.grow(ws.grad, jn);
    }

    // Row batches: full buckets by default; with fraction < 1 the coordinator
    // samples every row's subset upfront from a single stream, so the draw
    // sequence does not depend on strategy or worker count.
    const std::vector<std::uint32_t>* perm = &train.mode_perm(n);
    const std::vector<std::uint64_t>* offsets = &train.mode_offsets(n);
    if (hyper.row_fraction < 1.0) {
      sub_perm.clear();
      sub_offsets.assign(static_cast<std::size_t>(dim) + 1, 0);
      for (std::uint32_t i = 1; i <= dim; ++i) {
        const auto bucket = train.bucket(n, i);
        if (!bucket.empty()) {
          bucket_scratch.assign(bucket.begin(), bucket.end());
          std::size_t keep = static_cast<std::size_t>(
              std::llround(hyper.row_fraction * static_cast<double>(bucket.size())));
          keep = std::max<std::size_t>(keep, 1);
          for (std::size_t t2 = 0; t2 < keep; ++t2) {
            const std::size_t j =
                t2 + static_cast<std::size_t>(rng.next_below(bucket_scratch.size() - t2));
            std::swap(bucket_scratch[t2], bucket_scratch[j]);
          }
          sub_perm.insert(sub_perm.end(), bucket_scratch.begin(),
                          bucket_scratch.begin() + static_cast<std::ptrdiff_t>(keep));
        }
        sub_offsets[i] = sub_perm.size();
      }
      perm = &sub_perm;
      offsets = &sub_offsets;
    }

    auto row_entries = [&](std::uint32_t i) {
      return std::span<const std::uint32_t>(
          perm->data() + (*offsets)[i - 1],
          static_cast<std::size_t>((*offsets)[i] - (*offsets)[i - 1]));
    };

    std::size_t skipped = 0;
    for (std::uint32_t i = 1; i <= dim; ++i)
      if (row_entries(i).empty()) ++skipped;
    stats.rows_skipped += skipped;
    stats.rows_updated += dim - skipped;

    if (sched.strategy == Strategy::Serial || workers == 1) {
      auto& ws = per_worker[0];
      for (std::uint32_t i = 1; i <= dim; ++i) {
        const auto batch = row_entries(i);
        if (batch.empty()) continue;
        step_row(model, train, hyper, n, i, batch, ws);
      }
      continue;
    }

    if (sched.strategy == Strategy::Naive) {
      // Whole rows are worker-exclusive; per-row accumulation order is the
      // bucket order, so the result is bit-identical to the serial sweep.
      const RowAssignment assignment = assign_factor_rows(train, n, workers, sched.balance);
      stats.max_imbalance = std::max(stats.max_imbalance, assignment.imbalance());
      run([&](std::size_t rank) {
        auto& ws = per_worker[rank];
        for (const std::uint32_t i : assignment.rows_per_worker[rank]) {
          const auto batch = row_entries(i);
          if (batch.empty()) continue;
          step_row(model, train, hyper, n, i, batch, ws);
        }
      });
      continue;
    }

    // Improved strategy: one compressive format, entries partitioned evenly.
    // Rows fully inside a slice are finalized by their worker; rows cut by a
    // slice boundary contribute per-worker partials that the coordinator
    // merges in rank order before the single SGD step.
    const std::size_t total_entries = perm->size();
    const auto slices = partition_even(total_entries, workers);
    {
      std::uint64_t max_load = 0;
      for (const auto& sl : slices) max_load = std::max<std::uint64_t>(max_load, sl.size());
      if (total_entries > 0) {
        const double ideal =
            static_cast<double>(total_entries) / static_cast<double>(workers);
        stats.max_imbalance =
            std::max(stats.max_imbalance, static_cast<double>(max_load) / ideal - 1.0);
      }
    }
    std::vector<std::vector<BoundaryPartial>> boundary(workers);
    run([&](std::size_t rank) {
      auto& ws = per_worker[rank];
      const Range sl = slices[rank];
      std::size_t pos = sl.begin;
      while (pos < sl.end) {
        const std::uint32_t i = train.coord((*perm)[pos])[n];
        const std::uint64_t bucket_begin = (*offsets)[i - 1];
        const std::uint64_t bucket_end = (*offsets)[i];
        const std::size_t run_end =
            static_cast<std::size_t>(std::min<std::uint64_t>(bucket_end, sl.end));
        const std::span<const std::uint32_t> part(perm->data() + pos, run_end - pos);
        if (bucket_begin >= sl.begin && bucket_end <= sl.end) {
          step_row(model, train, hyper, n, i, part, ws);
        } else {
          BoundaryPartial bp;
          bp.row = i;
          bp.count = part.size();
          bp.partial.resize(jn);
          grad_a_row(model, train, n, i, part, ws, bp.partial);
          boundary[rank].push_back(std::move(bp));
        }
        pos = run_end;
      }
    });

    // Serialized rank-ordered merge of the shared per-row accumulators.
    std::vector<std::uint32_t> rows_in_order;
    std::vector<std::vector<double>> merged;
    std::vector<std::size_t> counts;
    for (std::size_t rank = 0; rank < workers; ++rank) {
      for (auto& bp : boundary[rank]) {
        std::size_t slot = rows_in_order.size();
        for (std::size_t k = 0; k < rows_in_order.size(); ++k)
          if (rows_in_order[k] == bp.row) slot = k;
        if (slot == rows_in_order.size()) {
          rows_in_order.push_back(bp.row);
          merged.push_back(std::move(bp.partial));
          counts.push_back(bp.count);
        } else {
          for (std::uint32_t j = 0; j < jn; ++j) merged[slot][j] += bp.partial[j];
          counts[slot] += bp.count;
        }
      }
    }
    for (std::size_t k = 0; k < rows_in_order.size(); ++k) {
      double* arow = model.factor(n).row(rows_in_order[k] - 1);
      sgd_step(counts[k], hyper.reg, hyper.lr, {arow, jn},
               {merged[k].data(), merged[k].size()});
    }
  }
  return stats;
}

}  // namespace sptucker
