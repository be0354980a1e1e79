#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sptucker/eval.hpp"
#include "sptucker/model.hpp"
#include "sptucker/sptensor.hpp"
#include "sptucker/trainer.hpp"

namespace {

using namespace sptucker;

// Flat `key = value` config, applied after the command line with flags
// winning. '#' and ';' start comments; lists stay comma-separated.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#' || stripped[0] == ';') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;  // the command line already set it
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": bad value for '" + key +
                        "': " + e.what());
    }
  }
}

struct LoadFlags {
  std::vector<std::uint32_t> dims;
  std::string zero_policy = "reject";
  double zero_value = 0.5;
  bool skip_header = false;

  LoadOptions options() const {
    LoadOptions o;
    o.skip_header = skip_header;
    o.zero_replacement = zero_value;
    o.dims_override = dims;
    if (zero_policy == "reject") {
      o.zero_policy = ZeroPolicy::Reject;
    } else if (zero_policy == "replace") {
      o.zero_policy = ZeroPolicy::Replace;
    } else {
      throw ConfigError("unknown zero policy '" + zero_policy + "' (reject|replace)");
    }
    return o;
  }
};

void add_load_flags(CLI::App* cmd, LoadFlags& f) {
  cmd->add_option("--dims", f.dims, "explicit dims (default: inferred from data maxima)")
      ->delimiter(',');
  cmd->add_option("--zero-policy", f.zero_policy, "zero-valued observations: reject|replace");
  cmd->add_option("--zero-value", f.zero_value, "replacement for zero values");
  cmd->add_flag("--skip-header", f.skip_header, "skip the first non-comment line");
}

struct TrainArgs {
  std::string train_path, test_path, metrics_out, model_out;
  std::size_t order = 0;
  LoadFlags load;
  HyperParams hyper;
  std::string strategy = "improved";
  std::string balance = "dynamic";
};

void add_hyper_flags(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--ranks", a.hyper.ranks, "J_1..J_N (default: 5 per mode)")->delimiter(',');
  cmd->add_option("--rcore", a.hyper.r_core, "Kruskal rank of the core");
  cmd->add_option("--lr-a", a.hyper.lr_a, "factor learning rate");
  cmd->add_option("--lr-b", a.hyper.lr_b, "core learning rate");
  cmd->add_option("--reg-a", a.hyper.reg_a, "factor regularization");
  cmd->add_option("--reg-b", a.hyper.reg_b, "core regularization");
  cmd->add_option("--batch-m", a.hyper.batch_m, "core batch size M (0 = full)");
  cmd->add_option("--row-fraction", a.hyper.row_fraction,
                  "share of each row's entries per factor step");
  cmd->add_option("--epochs", a.hyper.epochs, "training epochs");
  cmd->add_option("--seed", a.hyper.seed, "random seed");
  cmd->add_option("--threads", a.hyper.threads, "worker count (0 = all hardware threads)");
  cmd->add_option("--strategy", a.strategy, "serial|naive|improved");
  cmd->add_option("--balance", a.balance, "static|dynamic row balancing");
  cmd->add_option("--init-mean", a.hyper.init_mean, "Gaussian init mean");
  cmd->add_option("--init-stddev", a.hyper.init_stddev, "Gaussian init stddev");
  cmd->add_flag("--resample-core-batch", a.hyper.resample_core_batch,
                "draw a fresh core batch per mode");
  cmd->add_flag("--incremental-residual", a.hyper.incremental_residual,
                "maintain the core residual incrementally");
}

int cmd_train(TrainArgs& a) {
  if (a.train_path.empty()) throw ConfigError("--train is required");
  if (a.order < 2) throw ConfigError("--order must be >= 2");
  a.hyper.strategy = parse_strategy(a.strategy);
  a.hyper.balance = parse_balance(a.balance);
  if (a.hyper.ranks.empty()) a.hyper.ranks.assign(a.order, 5);
  if (a.hyper.ranks.size() != a.order)
    throw ConfigError("--ranks arity does not match --order");
  a.hyper.validate();
  if (a.hyper.epochs == 0) throw ConfigError("epochs must be >= 1");

  CooTensor train_set = CooTensor::load_delimited(a.train_path, a.order, a.load.options());
  std::optional<CooTensor> test_set;
  if (!a.test_path.empty()) {
    LoadOptions topts = a.load.options();
    if (topts.dims_override.empty()) topts.dims_override = train_set.shape().dims();
    test_set = CooTensor::load_delimited(a.test_path, a.order, topts);
  }

  auto [model, result] =
      train_from_scratch(train_set, test_set ? &*test_set : nullptr, a.hyper);

  for (const auto& m : result.metrics) {
    std::printf("epoch %zu  train_rmse %.6f  train_mae %.6f", m.epoch, m.train_rmse,
                m.train_mae);
    if (test_set) std::printf("  test_rmse %.6f  test_mae %.6f", m.test_rmse, m.test_mae);
    std::printf("  (%.3fs)\n", m.total_s);
  }
  if (!a.metrics_out.empty())
    write_metrics_csv(a.metrics_out, result.metrics, a.hyper.describe());
  if (!a.model_out.empty()) model.save(a.model_out);
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, LoadFlags& load) {
  if (model_path.empty() || data_path.empty())
    throw ConfigError("--model and --data are required");
  TuckerModel model = TuckerModel::load(model_path);
  LoadOptions opts = load.options();
  if (opts.dims_override.empty()) opts.dims_override = model.shape().dims();
  CooTensor data = CooTensor::load_delimited(data_path, model.order(), opts);
  auto [rmse, mae] = rmse_mae(model, data);
  std::printf("rmse %.10f\nmae %.10f\n", rmse, mae);
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& coords_path,
                const std::string& out_path, const std::vector<double>& clamp) {
  if (model_path.empty() || coords_path.empty() || out_path.empty())
    throw ConfigError("--model, --coords and --out are required");
  TuckerModel model = TuckerModel::load(model_path);
  const std::size_t order = model.order();
  std::ifstream in(coords_path);
  if (!in) throw DataError("cannot open '" + coords_path + "'");
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot write '" + out_path + "'");

  std::vector<double> s, e;
  std::vector<std::uint32_t> coord(order);
  std::string line;
  std::size_t lineno = 0;
  std::size_t errors = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
      if (c == ' ' || c == '\t' || c == ',' || c == '\r') {
        if (!cur.empty()) fields.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) fields.push_back(std::move(cur));
    if (fields.empty() || fields[0][0] == '#') continue;
    // N indices; a trailing value column is tolerated and ignored.
    if (fields.size() != order && fields.size() != order + 1) {
      out << "error: line " << lineno << ": expected " << order << " indices\n";
      ++errors;
      continue;
    }
    bool ok = true;
    for (std::size_t k = 0; k < order; ++k) {
      std::uint32_t v = 0;
      const auto [p, ec] =
          std::from_chars(fields[k].data(), fields[k].data() + fields[k].size(), v);
      if (ec != std::errc{} || p != fields[k].data() + fields[k].size() || v < 1 ||
          v > model.shape().dim(k)) {
        ok = false;
        break;
      }
      coord[k] = v;
    }
    if (!ok) {
      out << "error: line " << lineno << ": coordinate out of range\n";
      ++errors;
      continue;
    }
    double pred = model.predict(coord, s, e);
    if (clamp.size() == 2) pred = std::clamp(pred, clamp[0], clamp[1]);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", pred);
    out << buf << '\n';
  }
  if (!out.flush()) throw DataError("write failed for '" + out_path + "'");
  if (errors > 0) {
    std::fprintf(stderr, "%zu coordinate line(s) failed\n", errors);
    return 3;
  }
  return 0;
}

struct BenchArgs {
  std::string train_path, out_path;
  std::size_t order = 0;
  LoadFlags load;
  std::string kind = "rank";
  std::vector<std::uint32_t> rank_grid{5, 10, 15, 20, 25};
  std::size_t vary_mode = 1;  // 1-based
  std::uint32_t base_rank = 5;
  std::uint32_t rcore = 3;
  std::vector<std::size_t> thread_grid{1, 2, 4};
  std::size_t epochs = 2;
  std::size_t warmup = 1;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string strategy = "improved";
};

int cmd_bench(BenchArgs& a) {
  if (a.train_path.empty()) throw ConfigError("--train is required");
  if (a.out_path.empty()) throw ConfigError("--out is required");
  if (a.order < 2) throw ConfigError("--order must be >= 2");
  CooTensor train_set = CooTensor::load_delimited(a.train_path, a.order, a.load.options());
  BenchOptions opts;
  opts.epochs = a.epochs;
  opts.warmup = a.warmup;
  opts.seed = a.seed;
  opts.threads = a.threads;
  opts.strategy = parse_strategy(a.strategy);

  std::ofstream out(a.out_path);
  if (!out) throw DataError("cannot write '" + a.out_path + "'");
  if (a.kind == "rank") {
    if (a.vary_mode > a.order)
      throw ConfigError("--vary-mode out of range (0 = uniform grid)");
    std::vector<Ranks> grid;
    for (std::uint32_t j : a.rank_grid) {
      Ranks r;
      if (a.vary_mode == 0) {
        r.J.assign(a.order, j);  // uniform J across every mode
      } else {
        r.J.assign(a.order, a.base_rank);
        r.J[a.vary_mode - 1] = j;
      }
      r.r_core = a.rcore;
      grid.push_back(std::move(r));
    }
    const RankScalingResult res = bench_rank_scaling(train_set, grid, a.rank_grid, opts);
    out << "j,seconds_per_epoch,peak_bytes\n";
    for (const auto& row : res.rows)
      out << row.j_value << ',' << row.seconds_per_epoch << ',' << row.peak_bytes << '\n';
    char buf[160];
    std::snprintf(buf, sizeof buf, "# time fit: slope %.6g intercept %.6g r2 %.4f%s\n",
                  res.time_fit.slope, res.time_fit.intercept, res.time_fit.r2,
                  res.time_fit.degenerate ? " (degenerate)" : "");
    out << buf;
    std::fputs(buf + 2, stdout);
  } else if (a.kind == "speedup") {
    Ranks r;
    r.J.assign(a.order, a.base_rank);
    r.r_core = a.rcore;
    const auto rows = bench_speedup(train_set, r, a.thread_grid, opts);
    out << "threads,seconds_per_epoch,speedup,efficiency\n";
    for (const auto& row : rows) {
      out << row.threads << ',' << row.seconds_per_epoch << ',' << row.speedup << ','
          << row.efficiency << '\n';
      std::printf("threads %zu  %.4fs/epoch  speedup %.2f  efficiency %.0f%%\n", row.threads,
                  row.seconds_per_epoch, row.speedup, 100.0 * row.efficiency);
    }
  } else {
    throw ConfigError("unknown bench kind '" + a.kind + "' (rank|speedup)");
  }
  if (!out.flush()) throw DataError("write failed for '" + a.out_path + "'");
  return 0;
}

int cmd_split(const std::string& input, std::size_t order, double fraction,
              std::uint64_t seed, const std::string& out_train, const std::string& out_test,
              LoadFlags& load) {
  if (input.empty()) throw ConfigError("--input is required");
  if (order < 2) throw ConfigError("--order must be >= 2");
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError("--fraction must lie in (0,1)");
  CooTensor t = CooTensor::load_delimited(input, order, load.options());
  auto [train_set, test_set] = train_test_split(t, fraction, seed);
  train_set.save_delimited(out_train);
  test_set.save_delimited(out_test);
  std::printf("train %zu entries -> %s\ntest %zu entries -> %s\n", train_set.nnz(),
              out_train.c_str(), test_set.nnz(), out_test.c_str());
  return 0;
}

}  // namespace

int run_main(int argc, char** argv) {
  CLI::App app{"sparse Tucker decomposition trainer"};
  app.require_subcommand(1);

  TrainArgs train_args;
  std::string train_config;
  auto* train_cmd = app.add_subcommand("train", "fit a model on a sparse tensor");
  train_cmd->add_option("--config", train_config, "flat key = value config file");
  train_cmd->add_option("--train", train_args.train_path, "training data");
  train_cmd->add_option("--test", train_args.test_path, "held-out data");
  train_cmd->add_option("--order", train_args.order, "tensor order N");
  train_cmd->add_option("--metrics-out", train_args.metrics_out, "per-epoch metrics CSV");
  train_cmd->add_option("--model-out", train_args.model_out, "model file");
  add_load_flags(train_cmd, train_args.load);
  add_hyper_flags(train_cmd, train_args);

  std::string eval_model, eval_data;
  LoadFlags eval_load;
  std::string eval_config;
  auto* eval_cmd = app.add_subcommand("eval", "report RMSE/MAE of a model on a dataset");
  eval_cmd->add_option("--config", eval_config, "flat key = value config file");
  eval_cmd->add_option("--model", eval_model, "model file");
  eval_cmd->add_option("--data", eval_data, "dataset");
  add_load_flags(eval_cmd, eval_load);

  std::string pred_model, pred_coords, pred_out;
  std::vector<double> pred_clamp;
  std::string pred_config;
  auto* pred_cmd = app.add_subcommand("predict", "predict values at given coordinates");
  pred_cmd->add_option("--config", pred_config, "flat key = value config file");
  pred_cmd->add_option("--model", pred_model, "model file");
  pred_cmd->add_option("--coords", pred_coords, "coordinate file (N indices per line)");
  pred_cmd->add_option("--out", pred_out, "output file");
  pred_cmd->add_option("--clamp", pred_clamp, "clamp predictions to [min max]")->expected(2);

  BenchArgs bench_args;
  std::string bench_config;
  auto* bench_cmd = app.add_subcommand("bench", "rank-scaling and speedup benchmarks");
  bench_cmd->add_option("--config", bench_config, "flat key = value config file");
  bench_cmd->add_option("--train", bench_args.train_path, "training data");
  bench_cmd->add_option("--order", bench_args.order, "tensor order N");
  bench_cmd->add_option("--out", bench_args.out_path, "output CSV");
  bench_cmd->add_option("--bench", bench_args.kind, "rank|speedup");
  bench_cmd->add_option("--rank-grid", bench_args.rank_grid, "J values for the varied mode")
      ->delimiter(',');
  bench_cmd->add_option("--vary-mode", bench_args.vary_mode, "1-based mode whose J varies (0 = uniform grid)");
  bench_cmd->add_option("--base-rank", bench_args.base_rank, "J for the other modes");
  bench_cmd->add_option("--rcore", bench_args.rcore, "Kruskal rank of the core");
  bench_cmd->add_option("--thread-grid", bench_args.thread_grid, "worker counts")
      ->delimiter(',');
  bench_cmd->add_option("--epochs", bench_args.epochs, "measured epochs per point");
  bench_cmd->add_option("--warmup", bench_args.warmup, "warm-up epochs excluded from fits");
  bench_cmd->add_option("--seed", bench_args.seed, "random seed");
  bench_cmd->add_option("--threads", bench_args.threads, "workers for the rank bench");
  bench_cmd->add_option("--strategy", bench_args.strategy, "serial|naive|improved");
  add_load_flags(bench_cmd, bench_args.load);

  std::string split_input, split_train = "train.txt", split_test = "test.txt";
  std::size_t split_order = 0;
  double split_fraction = 0.1;
  std::uint64_t split_seed = 1;
  LoadFlags split_load;
  std::string split_config;
  auto* split_cmd = app.add_subcommand("split", "deterministic train/test split");
  split_cmd->add_option("--config", split_config, "flat key = value config file");
  split_cmd->add_option("--input", split_input, "dataset to split");
  split_cmd->add_option("--order", split_order, "tensor order N");
  split_cmd->add_option("--fraction", split_fraction, "test fraction in (0,1)");
  split_cmd->add_option("--seed", split_seed, "shuffle seed");
  split_cmd->add_option("--out-train", split_train, "training output path");
  split_cmd->add_option("--out-test", split_test, "test output path");
  add_load_flags(split_cmd, split_load);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      if (!train_config.empty()) apply_config_file(train_cmd, train_config);
      return cmd_train(train_args);
    }
    if (eval_cmd->parsed()) {
      if (!eval_config.empty()) apply_config_file(eval_cmd, eval_config);
      return cmd_eval(eval_model, eval_data, eval_load);
    }
    if (pred_cmd->parsed()) {
      if (!pred_config.empty()) apply_config_file(pred_cmd, pred_config);
      return cmd_predict(pred_model, pred_coords, pred_out, pred_clamp);
    }
    if (bench_cmd->parsed()) {
      if (!bench_config.empty()) apply_config_file(bench_cmd, bench_config);
      return cmd_bench(bench_args);
    }
    if (split_cmd->parsed()) {
      if (!split_config.empty()) apply_config_file(split_cmd, split_config);
      return cmd_split(split_input, split_order, split_fraction, split_seed, split_train,
                       split_test, split_load);
    }
  } catch (const sptucker::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const sptucker::DomainError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const sptucker::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const sptucker::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
