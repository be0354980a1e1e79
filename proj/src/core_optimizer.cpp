#include "sptucker/core_optimizer.hpp"

#include <cmath>
#include <numeric>

namespace sptucker {

std::size_t CoreBatchWorkspace::bytes() const {
  std::size_t b = 0;
  b += batch.capacity() * sizeof(std::uint32_t);
  b += x.capacity() * sizeof(double);
  b += coeff.capacity() * sizeof(double);
  b += w.capacity() * sizeof(double);
  b += resid.capacity() * sizeof(double);
  b += bcols.capacity() * sizeof(double);
  b += C.capacity() * sizeof(double);
  b += U.capacity() * sizeof(double);
  b += V.capacity() * sizeof(double);
  for (const auto& p : part_c) b += p.capacity() * sizeof(double);
  for (const auto& p : part_u) b += p.capacity() * sizeof(double);
  b += sample_pool.capacity() * sizeof(std::uint32_t);
  return b;
}

void compute_w_row(const TuckerModel& model, std::span<const std::uint32_t> coord,
                   std::size_t mode, std::size_t r, std::span<double> w_out) {
  const std::size_t order = model.order();
  const std::uint32_t r_core = model.ranks().r_core;
  double c = 1.0;
  for (std::size_t k = 0; k < order; ++k) {
    if (k == mode) continue;
    const Matrix& b = model.kruskal(k);
    c *= dot_strided(model.factor(k).row(coord[k] - 1), b.data().data() + r, r_core,
                     b.rows());
  }
  const double* arow = model.factor(mode).row(coord[mode] - 1);
  for (std::size_t j = 0; j < w_out.size(); ++j) w_out[j] = c * arow[j];
}

void core_residual(const TuckerModel& model, const CooTensor& t,
                   std::span<const std::uint32_t> batch, std::size_t mode,
                   std::size_t r_exclude, std::vector<double>& out) {
  const std::uint32_t jn = model.ranks().J[mode];
  const std::uint32_t rc = model.ranks().r_core;
  std::vector<double> w(jn);
  out.resize(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto coord = t.coord(batch[s]);
    double acc = t.value(batch[s]);
    for (std::uint32_t r = 0; r < rc; ++r) {
      if (r == r_exclude) continue;
      compute_w_row(model, coord, mode, r, w);
      acc -= dot_strided(w.data(), model.kruskal(mode).data().data() + r, rc, jn);
    }
    out[s] = acc;
  }
}

void grad_b(const TuckerModel& model, const CooTensor& t,
            std::span<const std::uint32_t> batch, std::size_t mode, std::size_t r,
            std::vector<double>& v_out, std::vector<double>* c_out) {
  const std::uint32_t jn = model.ranks().J[mode];
  std::vector<double> resid;
  core_residual(model, t, batch, mode, r, resid);
  std::vector<double> w(jn);
  std::vector<double> c(static_cast<std::size_t>(jn) * jn, 0.0);
  std::vector<double> u(jn, 0.0);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    compute_w_row(model, t.coord(batch[s]), mode, r, w);
    for (std::uint32_t i = 0; i < jn; ++i) {
      u[i] += w[i] * resid[s];
      for (std::uint32_t j = 0; j < jn; ++j) c[i * jn + j] += w[i] * w[j];
    }
  }
  v_out.assign(jn, 0.0);
  for (std::uint32_t i = 0; i < jn; ++i) {
    double cb = 0.0;
    for (std::uint32_t j = 0; j < jn; ++j)
      cb += c[i * jn + j] * model.kruskal(mode).at(j, r);
    v_out[i] = -u[i] + cb;
  }
  if (c_out) *c_out = std::move(c);
}

void sgd_step(std::size_t m, double lambda, double gamma, std::span<double> w,
              std::span<const double> v) {
  if (m < 1) throw DomainError("sgd_step: batch size must be >= 1");
  if (!(gamma > 0.0)) throw DomainError("sgd_step: learning rate must be positive");
  if (lambda < 0.0) throw DomainError("sgd_step: regularization must be non-negative");
  if (w.size() != v.size()) throw InternalError("sgd_step: size mismatch");
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w[i]) || !std::isfinite(v[i]))
      throw NumericError(
          "sgd_step: non-finite parameter or gradient; reduce the learning rate");
    w[i] -= gamma * (v[i] * inv_m + lambda * w[i]);
    if (!std::isfinite(w[i]))
      throw NumericError("sgd_step: update overflowed; reduce the learning rate");
  }
}

namespace {

// W_r row pointer inside the workspace cache.
inline double* w_row(CoreBatchWorkspace& ws, std::size_t m, std::uint32_t jn, std::uint32_t r,
                     std::size_t s) {
  return ws.w.data() + (static_cast<std::size_t>(r) * m + s) * jn;
}

}  // namespace

CoreEpochStats update_core_epoch(TuckerModel& model, const CooTensor& train,
                                 const CoreHyper& hyper, const SchedContext& sched, Rng& rng,
                                 CoreBatchWorkspace& ws) {
  if (hyper.lr < 0.0) throw DomainError("core learning rate must be non-negative");
  if (hyper.lr == 0.0) return {0, 0};  // frozen phase: bit-exact no-op

  const std::size_t order = model.order();
  const std::uint32_t rc = model.ranks().r_core;
  const std::size_t nnz = train.nnz();
  const std::size_t m = hyper.batch_m == 0 ? nnz : hyper.batch_m;
  if (m > nnz) throw DomainError("core batch size exceeds training nnz");

  auto draw_batch = [&] {
    if (hyper.batch_m == 0) {
      ws.grow(ws.batch, nnz);
      std::iota(ws.batch.begin(), ws.batch.end(), 0u);
    } else {
      sample_batch(train, m, rng, ws.sample_pool, ws.batch);
    }
    ws.grow(ws.x, m);
    for (std::size_t s = 0; s < m; ++s) ws.x[s] = train.value(ws.batch[s]);
  };
  draw_batch();

  const std::size_t workers = sched.workers();
  auto slices = partition_even(m, workers);
  std::size_t effective = 0;
  for (const auto& sl : slices)
    if (!sl.empty()) ++effective;

  ws.part_c.resize(workers);
  ws.part_u.resize(workers);

  auto run = [&](const std::function<void(std::size_t)>& task) {
    if (workers == 1 || sched.pool == nullptr) {
      task(0);
    } else {
      sched.pool->run(task);
    }
  };

  for (std::size_t n = 0; n < order; ++n) {
    if (hyper.resample_per_mode && n > 0 && hyper.batch_m != 0) draw_batch();
    const std::uint32_t jn = model.ranks().J[n];
    Matrix& bn = model.kruskal(n);

    // Cache W_r = H O_r rows for the whole batch, all r; they stay valid for
    // the entire mode-n sweep.
    ws.grow(ws.coeff, m * rc);
    ws.grow(ws.w, static_cast<std::size_t>(rc) * m * jn);
    run([&](std::size_t rank) {
      const Range sl = slices[rank];
      for (std::size_t s = sl.begin; s < sl.end; ++s) {
        const auto coord = train.coord(ws.batch[s]);
        const double* arow = model.factor(n).row(coord[n] - 1);
        for (std::uint32_t r = 0; r < rc; ++r) {
          double c = 1.0;
          for (std::size_t k = 0; k < order; ++k) {
            if (k == n) continue;
            const Matrix& bk = model.kruskal(k);
            c *= dot_strided(model.factor(k).row(coord[k] - 1), bk.data().data() + r, rc,
                             bk.rows());
          }
          ws.coeff[s * rc + r] = c;
          double* wrow = w_row(ws, m, jn, r, s);
          for (std::uint32_t j = 0; j < jn; ++j) wrow[j] = c * arow[j];
        }
      }
    });

    ws.grow(ws.resid, m);
    ws.grow(ws.bcols, static_cast<std::size_t>(rc) * jn);
    ws.grow(ws.C, static_cast<std::size_t>(jn) * jn);
    ws.grow(ws.U, jn);
    ws.grow(ws.V, jn);

    auto refresh_bcols = [&] {
      for (std::uint32_t r = 0; r < rc; ++r)
        for (std::uint32_t j = 0; j < jn; ++j)
          ws.bcols[static_cast<std::size_t>(r) * jn + j] = bn.at(j, r);
    };

    for (std::uint32_t r_core = 0; r_core < rc; ++r_core) {
      refresh_bcols();

      // Residual against every other block, recomputed from the current b
      // values (or maintained incrementally when enabled).
      if (!hyper.incremental_residual || r_core == 0) {
        run([&](std::size_t rank) {
          const Range sl = slices[rank];
          for (std::size_t s = sl.begin; s < sl.end; ++s) {
            double acc = ws.x[s];
            for (std::uint32_t r = 0; r < rc; ++r) {
              if (r == r_core) continue;
              acc -= dot(w_row(ws, m, jn, r, s),
                         ws.bcols.data() + static_cast<std::size_t>(r) * jn, jn);
            }
            ws.resid[s] = acc;
          }
        });
      } else {
        const std::uint32_t prev = r_core - 1;
        run([&](std::size_t rank) {
          const Range sl = slices[rank];
          for (std::size_t s = sl.begin; s < sl.end; ++s) {
            ws.resid[s] -= dot(w_row(ws, m, jn, prev, s),
                               ws.bcols.data() + static_cast<std::size_t>(prev) * jn, jn);
            ws.resid[s] += dot(w_row(ws, m, jn, r_core, s),
                               ws.bcols.data() + static_cast<std::size_t>(r_core) * jn, jn);
          }
        });
      }

      // Per-worker partial C = W^T W and U = W^T x-hat, merged in rank order
      // by the coordinator.
      run([&](std::size_t rank) {
        const Range sl = slices[rank];
        auto& pc = ws.part_c[rank];
        auto& pu = ws.part_u[rank];
        pc.assign(static_cast<std::size_t>(jn) * jn, 0.0);
        pu.assign(jn, 0.0);
        for (std::size_t s = sl.begin; s < sl.end; ++s) {
          const double* wrow = w_row(ws, m, jn, r_core, s);
          const double r_s = ws.resid[s];
          for (std::uint32_t i = 0; i < jn; ++i) {
            pu[i] += wrow[i] * r_s;
            for (std::uint32_t j = 0; j < jn; ++j) pc[i * jn + j] += wrow[i] * wrow[j];
          }
        }
      });
      reduce_in_order({ws.part_c.data(), workers}, ws.C);
      reduce_in_order({ws.part_u.data(), workers}, ws.U);

      // V = -U + C b, then one SGD call on the block.
      std::span<double> bcol(ws.bcols.data() + static_cast<std::size_t>(r_core) * jn, jn);
      for (std::uint32_t i = 0; i < jn; ++i)
        ws.V[i] = -ws.U[i] + dot(ws.C.data() + static_cast<std::size_t>(i) * jn, bcol.data(), jn);
      sgd_step(m, hyper.reg, hyper.lr, bcol, ws.V);
      for (std::uint32_t j = 0; j < jn; ++j) bn.at(j, r_core) = bcol[j];
    }
  }

  // Rebuild the dense core and its unfoldings.
  model.refresh_core_cache();
  return {m, effective};
}

}  // namespace sptucker
