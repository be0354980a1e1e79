#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <vector>

#include "sptucker/eval.hpp"
#include "sptucker/synth.hpp"

using namespace sptucker;
namespace fs = std::filesystem;

namespace {

std::string temp_path() {
  static int counter = 0;
  return (fs::temp_directory_path() /
          ("sptucker_eval_" + std::to_string(::getpid()) + "_" + std::to_string(counter++)))
      .string();
}

// Model predicting all zeros: errors are the raw values.
TuckerModel zero_model(const Shape& shape) {
  return TuckerModel(shape, Ranks{std::vector<std::uint32_t>(shape.order(), 2), 2});
}

}  // namespace

TEST_CASE("rmse/mae of a fixed error set") {
  // Predictions are all zero, values {0, 2}: RMSE = sqrt(2), MAE = 1.
  std::vector<std::uint32_t> coords{1, 1, 2, 1};
  std::vector<double> values{0.0, 2.0};
  LoadOptions opts;
  const CooTensor t(Shape({2, 1}), std::move(coords), std::move(values));
  const auto [rmse, mae] = rmse_mae(zero_model(t.shape()), t);
  CHECK(rmse == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(mae == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("perfect predictions give zero error") {
  PlantedSpec spec;
  spec.shape = Shape({5, 4, 3});
  spec.teacher_ranks = Ranks{{2, 2, 2}, 2};
  spec.nnz = 25;
  spec.noise_stddev = 0.0;
  spec.seed = 5;
  const CooTensor t = synth_planted(spec);
  const TuckerModel teacher = TuckerModel::init_gaussian(spec.shape, spec.teacher_ranks,
                                                         spec.teacher_mean,
                                                         spec.teacher_stddev, spec.seed);
  const auto [rmse, mae] = rmse_mae(teacher, t);
  CHECK(rmse <= 1e-12);
  CHECK(mae <= 1e-12);
}

TEST_CASE("rmse matches an extended-precision accumulation and is permutation-stable") {
  PlantedSpec spec;
  spec.shape = Shape({20, 20, 10});
  spec.teacher_ranks = Ranks{{3, 3, 3}, 3};
  spec.nnz = 500;
  spec.noise_stddev = 0.5;
  spec.seed = 7;
  const CooTensor t = synth_planted(spec);
  const TuckerModel m = TuckerModel::init_gaussian(spec.shape, spec.teacher_ranks, 0.5, 0.1,
                                                   999);
  const auto [rmse, mae] = rmse_mae(m, t);

  long double sq = 0.0L, ab = 0.0L;
  std::vector<double> s, e;
  for (std::size_t i = 0; i < t.nnz(); ++i) {
    const long double err = static_cast<long double>(t.value(i)) -
                            static_cast<long double>(m.predict(t.coord(i), s, e));
    sq += err * err;
    ab += std::abs(err);
  }
  const double rmse_ref = static_cast<double>(
      std::sqrt(sq / static_cast<long double>(t.nnz())));
  const double mae_ref = static_cast<double>(ab / static_cast<long double>(t.nnz()));
  CHECK(std::abs(rmse - rmse_ref) <= 1e-12 * std::max(1.0, rmse_ref));
  CHECK(std::abs(mae - mae_ref) <= 1e-12 * std::max(1.0, mae_ref));

  // Jensen: RMSE^2 >= (mean signed error)^2.
  long double signed_sum = 0.0L;
  for (std::size_t i = 0; i < t.nnz(); ++i)
    signed_sum += static_cast<long double>(t.value(i)) -
                  static_cast<long double>(m.predict(t.coord(i), s, e));
  const double mean_err = static_cast<double>(signed_sum / static_cast<long double>(t.nnz()));
  CHECK(rmse * rmse + 1e-15 >= mean_err * mean_err);

  // Permutation of the entry set moves the result by at most 1e-12.
  std::vector<std::uint32_t> coords2;
  std::vector<double> values2;
  for (std::size_t i = t.nnz(); i-- > 0;) {
    const auto c = t.coord(i);
    coords2.insert(coords2.end(), c.begin(), c.end());
    values2.push_back(t.value(i));
  }
  const CooTensor reversed(t.shape(), std::move(coords2), std::move(values2));
  const auto [rmse2, mae2] = rmse_mae(m, reversed);
  CHECK(std::abs(rmse - rmse2) <= 1e-12 * std::max(1.0, rmse));
  CHECK(std::abs(mae - mae2) <= 1e-12 * std::max(1.0, mae));
}

TEST_CASE("communication cost report is exact integer arithmetic") {
  {
    const CommCost c = comm_cost_report(Ranks{{5, 5, 5, 5}, 5});
    CHECK(c.dense_core_params == 625);
    CHECK(c.kruskal_params == 100);
    CHECK(c.ratio == doctest::Approx(6.25));
  }
  {
    const CommCost c = comm_cost_report(Ranks{{10, 10, 10}, 2});
    CHECK(c.dense_core_params == 1000);
    CHECK(c.kruskal_params == 60);
  }
  {
    // Single-mode boundary: J = R gives equal counts.
    Ranks r;
    r.J = {7};
    r.r_core = 7;
    const CommCost c = comm_cost_report(r);
    CHECK(c.dense_core_params == 7);
    CHECK(c.kruskal_params == 49);
  }
}

TEST_CASE("metrics CSV round-trips through its own parser") {
  std::vector<EpochMetrics> rows(3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].epoch = i + 1;
    rows[i].core_s = 0.125 * static_cast<double>(i + 1);
    rows[i].factor_s = 0.25;
    rows[i].total_s = rows[i].core_s + rows[i].factor_s;
    rows[i].train_rmse = 1.0 / static_cast<double>(i + 3);
    rows[i].train_mae = 0.1;
    rows[i].test_rmse = 0.9;
    rows[i].test_mae = 0.7;
    rows[i].peak_bytes = 1024 * (i + 1);
    rows[i].comm_bytes = 800;
  }
  rows[2].test_rmse = std::numeric_limits<double>::quiet_NaN();
  rows[2].test_mae = std::numeric_limits<double>::quiet_NaN();

  const std::string path = temp_path();
  write_metrics_csv(path, rows, {"seed = 1", "threads = 2"});
  std::vector<std::string> comments;
  const auto parsed = parse_metrics_csv(path, &comments);
  REQUIRE(parsed.size() == rows.size());
  CHECK(comments == std::vector<std::string>{"seed = 1", "threads = 2"});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(parsed[i].epoch == rows[i].epoch);
    CHECK(parsed[i].core_s == rows[i].core_s);
    CHECK(parsed[i].total_s == rows[i].total_s);
    CHECK(parsed[i].train_rmse == rows[i].train_rmse);
    CHECK(parsed[i].peak_bytes == rows[i].peak_bytes);
    CHECK(parsed[i].comm_bytes == rows[i].comm_bytes);
    if (std::isnan(rows[i].test_rmse)) {
      CHECK(std::isnan(parsed[i].test_rmse));
    } else {
      CHECK(parsed[i].test_rmse == rows[i].test_rmse);
    }
  }
  fs::remove(path);
}

TEST_CASE("metrics parser rejects malformed files") {
  const std::string path = temp_path();
  {
    std::ofstream out(path);
    out << "epoch,bogus\n";
  }
  CHECK_THROWS_AS(parse_metrics_csv(path), FormatError);
  {
    std::ofstream out(path);
    out << "epoch,core_s,factor_s,total_s,train_rmse,train_mae,test_rmse,test_mae,"
           "peak_bytes,comm_bytes\n1,0.1\n";
  }
  CHECK_THROWS_AS(parse_metrics_csv(path), FormatError);
  fs::remove(path);
}

TEST_CASE("linear fit recovers exact lines and flags degenerate input") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> y;
  for (double xi : x) y.push_back(3.0 * xi + 2.0);
  const LinearFit fit = fit_linear(x, y);
  CHECK(!fit.degenerate);
  CHECK(fit.slope == doctest::Approx(3.0));
  CHECK(fit.intercept == doctest::Approx(2.0));
  CHECK(fit.r2 == doctest::Approx(1.0));

  const LinearFit single = fit_linear({1.0}, {2.0});
  CHECK(single.degenerate);
  const LinearFit flat_x = fit_linear({2.0, 2.0}, {1.0, 3.0});
  CHECK(flat_x.degenerate);
}

TEST_CASE("empty entry set is rejected by construction") {
  CHECK_THROWS_AS(CooTensor(Shape({2, 2}), {}, {}), DataError);
}
