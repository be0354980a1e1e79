#include "sptucker/eval.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sptucker/core_optimizer.hpp"
#include "sptucker/factor_optimizer.hpp"

namespace sptucker {

std::pair<double, double> rmse_mae(const TuckerModel& model, const CooTensor& entries) {
  if (entries.nnz() == 0) throw DomainError("rmse_mae: empty entry set");
  if (entries.order() != model.order())
    throw DomainError("rmse_mae: order mismatch between model and data");
  for (std::size_t n = 0; n < model.order(); ++n)
    if (entries.shape().dim(n) > model.shape().dim(n))
      throw DomainError("rmse_mae: data exceeds the model's shape in mode " +
                        std::to_string(n + 1));
  std::vector<double> s, e;
  double sq = 0.0;
  double ab = 0.0;
  for (std::size_t i = 0; i < entries.nnz(); ++i) {
    const double err = entries.value(i) - model.predict(entries.coord(i), s, e);
    sq += err * err;
    ab += std::abs(err);
  }
  const double inv = 1.0 / static_cast<double>(entries.nnz());
  return {std::sqrt(sq * inv), ab * inv};
}

CommCost comm_cost_report(const Ranks& ranks) {
  CommCost out;
  out.dense_core_params = 1;
  for (std::uint32_t j : ranks.J) out.dense_core_params *= j;
  out.kruskal_params = 0;
  for (std::uint32_t j : ranks.J)
    out.kruskal_params += static_cast<std::uint64_t>(j) * ranks.r_core;
  out.ratio = static_cast<double>(out.dense_core_params) /
              static_cast<double>(out.kruskal_params);
  return out;
}

namespace {

constexpr const char* kCsvHeader =
    "epoch,core_s,factor_s,total_s,train_rmse,train_mae,test_rmse,test_mae,peak_bytes,"
    "comm_bytes";

void append_double(std::string& line, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  line += buf;
}

double parse_double_field(std::string_view f, const std::string& path, std::size_t lineno) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc{} || p != f.data() + f.size())
    throw FormatError(path + ":" + std::to_string(lineno) + ": bad numeric field");
  return v;
}

std::uint64_t parse_u64_field(std::string_view f, const std::string& path,
                              std::size_t lineno) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc{} || p != f.data() + f.size())
    throw FormatError(path + ":" + std::to_string(lineno) + ": bad integer field");
  return v;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows,
                       const std::vector<std::string>& config_comments) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& c : config_comments) out << "# " << c << '\n';
  out << kCsvHeader << '\n';
  for (const auto& r : rows) {
    std::string line = std::to_string(r.epoch);
    for (double v : {r.core_s, r.factor_s, r.total_s, r.train_rmse, r.train_mae, r.test_rmse,
                     r.test_mae}) {
      line += ',';
      append_double(line, v);
    }
    line += ',' + std::to_string(r.peak_bytes);
    line += ',' + std::to_string(r.comm_bytes);
    out << line << '\n';
  }
  if (!out.flush()) throw DataError("write failed for '" + path + "'");
}

std::vector<EpochMetrics> parse_metrics_csv(const std::string& path,
                                            std::vector<std::string>* comments) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<EpochMetrics> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (comments) {
        std::string c = line.substr(1);
        if (!c.empty() && c.front() == ' ') c.erase(0, 1);
        comments->push_back(std::move(c));
      }
      continue;
    }
    if (!header_seen) {
      if (line != kCsvHeader)
        throw FormatError(path + ": unexpected metrics header '" + line + "'");
      header_seen = true;
      continue;
    }
    std::vector<std::string_view> fields;
    std::string_view sv(line);
    std::size_t start = 0;
    for (std::size_t i = 0; i <= sv.size(); ++i) {
      if (i == sv.size() || sv[i] == ',') {
        fields.push_back(sv.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 10)
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected 10 fields");
    EpochMetrics r;
    r.epoch = static_cast<std::size_t>(parse_u64_field(fields[0], path, lineno));
    r.core_s = parse_double_field(fields[1], path, lineno);
    r.factor_s = parse_double_field(fields[2], path, lineno);
    r.total_s = parse_double_field(fields[3], path, lineno);
    r.train_rmse = parse_double_field(fields[4], path, lineno);
    r.train_mae = parse_double_field(fields[5], path, lineno);
    r.test_rmse = parse_double_field(fields[6], path, lineno);
    r.test_mae = parse_double_field(fields[7], path, lineno);
    r.peak_bytes = parse_u64_field(fields[8], path, lineno);
    r.comm_bytes = parse_u64_field(fields[9], path, lineno);
    rows.push_back(r);
  }
  if (!header_seen) throw FormatError(path + ": missing metrics header");
  return rows;
}

LinearFit fit_linear(const std::vector<double>& x, const std::vector<double>& y) {
  LinearFit fit;
  if (x.size() != y.size()) throw InternalError("fit_linear: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) {
    fit.degenerate = true;
    return fit;
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) {
    fit.degenerate = true;
    return fit;
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct EpochTimer {
  using clock = std::chrono::steady_clock;
  clock::time_point start = clock::now();
  double seconds() const {
    return std::chrono::duration<double>(clock::now() - start).count();
  }
};

// Timed training epochs without metric evaluation; returns median measured
// seconds and the final workspace footprint.
std::pair<double, std::uint64_t> timed_epochs(const CooTensor& train, const Ranks& ranks,
                                              const BenchOptions& opts, std::size_t threads,
                                              WorkerPool* pool) {
  TuckerModel model =
      TuckerModel::init_gaussian(train.shape(), ranks, 0.5, 0.1, opts.seed);
  Rng rng(opts.seed + 1);
  CoreHyper core{opts.lr_b, opts.reg, opts.batch_m, false, false};
  FactorHyper factor{opts.lr_a, opts.reg, 1.0};
  SchedContext sched{threads <= 1 ? Strategy::Serial : opts.strategy,
                     BalancePolicy::Dynamic, threads <= 1 ? nullptr : pool};
  CoreBatchWorkspace core_ws;
  std::vector<RowBatchWorkspace> row_ws(sched.workers());
  std::vector<double> seconds;
  for (std::size_t ep = 0; ep < opts.warmup + opts.epochs; ++ep) {
    EpochTimer t;
    update_core_epoch(model, train, core, sched, rng, core_ws);
    update_factor_epoch(model, train, factor, sched, rng, row_ws);
    if (ep >= opts.warmup) seconds.push_back(t.seconds());
  }
  std::uint64_t bytes = core_ws.bytes();
  for (const auto& ws : row_ws) bytes += ws.bytes();
  return {median(std::move(seconds)), bytes};
}

}  // namespace

RankScalingResult bench_rank_scaling(const CooTensor& train, const std::vector<Ranks>& grid,
                                     const std::vector<std::uint32_t>& x_values,
                                     const BenchOptions& opts) {
  if (grid.size() != x_values.size())
    throw DomainError("bench_rank_scaling: grid and x values differ in length");
  RankScalingResult out;
  WorkerPool pool(opts.threads);
  std::vector<double> xs, times, bytes;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto [secs, ws_bytes] = timed_epochs(train, grid[i], opts, opts.threads, &pool);
    out.rows.push_back({x_values[i], secs, ws_bytes});
    xs.push_back(static_cast<double>(x_values[i]));
    times.push_back(secs);
    bytes.push_back(static_cast<double>(ws_bytes));
  }
  out.time_fit = fit_linear(xs, times);
  out.bytes_fit = fit_linear(xs, bytes);
  return out;
}

std::vector<SpeedupRow> bench_speedup(const CooTensor& train, const Ranks& ranks,
                                      const std::vector<std::size_t>& thread_grid,
                                      const BenchOptions& opts) {
  std::vector<SpeedupRow> out;
  double t1 = 0.0;
  for (std::size_t threads : thread_grid) {
    WorkerPool pool(threads);
    auto [secs, ws_bytes] = timed_epochs(train, ranks, opts, threads, &pool);
    (void)ws_bytes;
    if (threads == 1 && t1 == 0.0) t1 = secs;
    SpeedupRow row;
    row.threads = threads;
    row.seconds_per_epoch = secs;
    // T_1/T_L; exactly 1 for the reference point itself.
    row.speedup = (threads == 1 && secs == t1) ? 1.0 : (t1 > 0.0 ? t1 / secs : 0.0);
    row.efficiency = row.speedup / static_cast<double>(threads);
    out.push_back(row);
  }
  return out;
}

}  // namespace sptucker
