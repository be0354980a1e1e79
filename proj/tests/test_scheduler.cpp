#include <doctest.h>

#include <atomic>
#include <numeric>
#include <set>
#include <vector>

#include "sptucker/rng.hpp"
#include "sptucker/scheduler.hpp"

using namespace sptucker;

namespace {

CooTensor tensor_with_bucket_sizes(const std::vector<std::size_t>& sizes) {
  // Mode-1 buckets with the requested sizes over a 2-mode tensor.
  std::vector<std::uint32_t> coords;
  std::vector<double> values;
  std::uint32_t col = 1;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    for (std::size_t k = 0; k < sizes[i]; ++k) {
      coords.push_back(static_cast<std::uint32_t>(i + 1));
      coords.push_back(col++);
      values.push_back(1.0);
    }
  }
  std::uint32_t dim2 = col > 1 ? col - 1 : 1;
  return CooTensor(Shape({static_cast<std::uint32_t>(sizes.size()), dim2}),
                   std::move(coords), std::move(values));
}

}  // namespace

TEST_CASE("partition_even splits with sizes differing by at most one") {
  auto p = partition_even(6, 3);
  REQUIRE(p.size() == 3);
  CHECK(p[0].size() == 2);
  CHECK(p[1].size() == 2);
  CHECK(p[2].size() == 2);

  p = partition_even(7, 3);
  CHECK(p[0].size() == 3);
  CHECK(p[1].size() == 2);
  CHECK(p[2].size() == 2);

  p = partition_even(5, 1);
  REQUIRE(p.size() == 1);
  CHECK(p[0].begin == 0);
  CHECK(p[0].end == 5);

  // More workers than items: trailing slices are empty (smaller effective L).
  p = partition_even(2, 5);
  std::size_t nonempty = 0;
  for (const auto& r : p)
    if (!r.empty()) ++nonempty;
  CHECK(nonempty == 2);

  // Exact cover, in order.
  p = partition_even(17, 4);
  std::size_t at = 0;
  for (const auto& r : p) {
    CHECK(r.begin == at);
    at = r.end;
  }
  CHECK(at == 17);
}

TEST_CASE("assign_factor_rows: the toy bucket layout balances to (4,3)") {
  const CooTensor t = tensor_with_bucket_sizes({4, 2, 1});
  const RowAssignment dyn = assign_factor_rows(t, 0, 2, BalancePolicy::Dynamic);
  std::multiset<std::uint64_t> loads(dyn.load_per_worker.begin(), dyn.load_per_worker.end());
  CHECK(loads == std::multiset<std::uint64_t>{3, 4});
  CHECK(dyn.max_load() == 4);
}

TEST_CASE("assign_factor_rows: equal buckets give equal loads") {
  const CooTensor t = tensor_with_bucket_sizes({3, 3, 3, 3});
  for (auto policy : {BalancePolicy::Static, BalancePolicy::Dynamic}) {
    const RowAssignment a = assign_factor_rows(t, 0, 2, policy);
    CHECK(a.load_per_worker[0] == 6);
    CHECK(a.load_per_worker[1] == 6);
    CHECK(a.imbalance() == doctest::Approx(0.0));
  }
}

TEST_CASE("dynamic balancing beats static on random buckets") {
  // Longest-processing-time is a 4/3-approximation, so round-robin can win
  // the occasional adversarial instance; the comparison over 100 random
  // instances is therefore asserted in near-always and aggregate form, plus
  // the (1+eps)-of-ideal bound that only the dynamic policy provides.
  Rng rng(7);
  int dynamic_wins_or_ties = 0;
  std::uint64_t static_total = 0;
  std::uint64_t dynamic_total = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 2 + rng.next_below(12);
    std::vector<std::size_t> sizes(rows);
    for (auto& s : sizes) s = 1 + rng.next_below(20);
    const CooTensor t = tensor_with_bucket_sizes(sizes);
    const std::size_t workers = 2 + rng.next_below(3);
    const RowAssignment stat = assign_factor_rows(t, 0, workers, BalancePolicy::Static);
    const RowAssignment dyn = assign_factor_rows(t, 0, workers, BalancePolicy::Dynamic);
    if (dyn.max_load() <= stat.max_load()) ++dynamic_wins_or_ties;
    static_total += stat.max_load();
    dynamic_total += dyn.max_load();

    // LPT's guarantee: max load <= (4/3 - 1/(3L)) * optimum <= 4/3 * ideal
    // once one bucket does not dominate.
    const std::uint64_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    const double ideal = static_cast<double>(total) / static_cast<double>(workers);
    const double biggest = static_cast<double>(*std::max_element(sizes.begin(), sizes.end()));
    CHECK(static_cast<double>(dyn.max_load()) <=
          std::max(biggest, (4.0 / 3.0) * ideal) + 1e-9);

    // Exact cover of rows in both policies.
    for (const auto& a : {stat, dyn}) {
      std::set<std::uint32_t> seen;
      for (const auto& rows_w : a.rows_per_worker)
        for (auto r : rows_w) CHECK(seen.insert(r).second);
      CHECK(seen.size() == rows);
    }
  }
  CHECK(dynamic_wins_or_ties >= 90);
  CHECK(dynamic_total < static_total);
}

TEST_CASE("reduce_in_order sums elementwise in rank order") {
  std::vector<std::vector<double>> partials{{1.0, 2.0}};
  std::vector<double> out;
  reduce_in_order({partials.data(), 1}, out);
  CHECK(out == std::vector<double>{1.0, 2.0});

  partials.assign(4, {1.0, 1.0, 1.0});
  reduce_in_order({partials.data(), 4}, out);
  CHECK(out == std::vector<double>{4.0, 4.0, 4.0});

  // Matches a serial accumulation of the same parts.
  Rng rng(11);
  partials.assign(5, std::vector<double>(16));
  std::vector<double> serial(16, 0.0);
  for (auto& p : partials)
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = rng.next_gaussian(0.0, 1.0);
      serial[i] += p[i];
    }
  reduce_in_order({partials.data(), 5}, out);
  for (std::size_t i = 0; i < out.size(); ++i)
    CHECK(out[i] == doctest::Approx(serial[i]).epsilon(1e-12));

  partials[2].resize(3);
  CHECK_THROWS_AS(reduce_in_order({partials.data(), 5}, out), InternalError);
}

TEST_CASE("worker pool runs every rank exactly once per dispatch") {
  WorkerPool pool(4);
  CHECK(pool.size() == 4);
  std::vector<std::atomic<int>> hits(4);
  for (int round = 0; round < 50; ++round)
    pool.run([&](std::size_t rank) { hits[rank].fetch_add(1); });
  for (auto& h : hits) CHECK(h.load() == 50);
}

TEST_CASE("worker pool propagates exceptions from any rank") {
  WorkerPool pool(3);
  CHECK_THROWS_AS(pool.run([&](std::size_t rank) {
    if (rank == 2) throw DataError("boom");
  }),
                  DataError);
  // Pool stays usable afterwards.
  std::atomic<int> count{0};
  pool.run([&](std::size_t) { count.fetch_add(1); });
  CHECK(count.load() == 3);
}

TEST_CASE("strategy and balance parsing") {
  CHECK(parse_strategy("serial") == Strategy::Serial);
  CHECK(parse_strategy("naive") == Strategy::Naive);
  CHECK(parse_strategy("improved") == Strategy::Improved);
  CHECK_THROWS_AS(parse_strategy("fast"), ConfigError);
  CHECK(parse_balance("static") == BalancePolicy::Static);
  CHECK(parse_balance("dynamic") == BalancePolicy::Dynamic);
  CHECK_THROWS_AS(parse_balance("auto"), ConfigError);
  CHECK(to_string(Strategy::Improved) == "improved");
  CHECK(to_string(BalancePolicy::Static) == "static");
}
