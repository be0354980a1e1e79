#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unistd.h>

#include "sptucker/sptensor.hpp"

using namespace sptucker;
namespace fs = std::filesystem;

namespace {

struct TempFile {
  fs::path path;
  explicit TempFile(const std::string& contents) {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("sptucker_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() {
    std::error_code ec;
    fs::remove(path, ec);
  }
};

using EntryMap = std::map<std::vector<std::uint32_t>, double>;

EntryMap entry_map(const CooTensor& t) {
  EntryMap m;
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    const auto c = t.coord(e);
    m[{c.begin(), c.end()}] = t.value(e);
  }
  return m;
}

}  // namespace

TEST_CASE("loads the two-entry toy file and infers the shape") {
  TempFile f("1 1 1 2.0\n3 2 1 1.0\n");
  const CooTensor t = CooTensor::load_delimited(f.path.string(), 3);
  CHECK(t.nnz() == 2);
  CHECK(t.shape().dims() == std::vector<std::uint32_t>{3, 2, 1});
  CHECK(t.value(0) == 2.0);
  CHECK(t.coord(1)[0] == 3);
}

TEST_CASE("comments, commas, blank lines and headers") {
  TempFile f("# a comment\nindex_u,index_i,rating\n1,2,4.5\n\n2, 1 ,3.0\n");
  LoadOptions opts;
  opts.skip_header = true;
  const CooTensor t = CooTensor::load_delimited(f.path.string(), 2, opts);
  CHECK(t.nnz() == 2);
  CHECK(t.value(0) == 4.5);
}

TEST_CASE("empty file is an error") {
  TempFile f("# only a comment\n");
  CHECK_THROWS_AS(CooTensor::load_delimited(f.path.string(), 3), DataError);
}

TEST_CASE("zero policy") {
  TempFile f("1 1 1 0.0\n");
  CHECK_THROWS_AS(CooTensor::load_delimited(f.path.string(), 3), DataError);
  LoadOptions opts;
  opts.zero_policy = ZeroPolicy::Replace;
  opts.zero_replacement = 0.5;
  const CooTensor t = CooTensor::load_delimited(f.path.string(), 3, opts);
  CHECK(t.value(0) == 0.5);
}

TEST_CASE("malformed lines carry the line number") {
  TempFile wrong_count("1 1 2.0\n");
  CHECK_THROWS_WITH_AS(CooTensor::load_delimited(wrong_count.path.string(), 3),
                       doctest::Contains(":1:"), DataError);
  TempFile bad_number("1 1 1 2.0\n1 x 2 1.0\n");
  CHECK_THROWS_WITH_AS(CooTensor::load_delimited(bad_number.path.string(), 3),
                       doctest::Contains(":2:"), DataError);
}

TEST_CASE("duplicate coordinates are rejected") {
  TempFile f("1 1 1 2.0\n1 1 1 3.0\n");
  CHECK_THROWS_AS(CooTensor::load_delimited(f.path.string(), 3), DataError);
}

TEST_CASE("dims override validates data and widens the shape") {
  TempFile f("1 1 1 2.0\n3 2 1 1.0\n");
  LoadOptions opts;
  opts.dims_override = {4, 4, 4};
  const CooTensor t = CooTensor::load_delimited(f.path.string(), 3, opts);
  CHECK(t.shape().dims() == std::vector<std::uint32_t>{4, 4, 4});
  opts.dims_override = {2, 2, 2};  // too small for index 3
  CHECK_THROWS_AS(CooTensor::load_delimited(f.path.string(), 3, opts), DataError);
}

TEST_CASE("save then load preserves the entry multiset") {
  TempFile f("1 2 1 2.5\n3 1 2 -1.25\n2 2 2 0.3333333333333333\n");
  const CooTensor t = CooTensor::load_delimited(f.path.string(), 3);
  TempFile out("");
  t.save_delimited(out.path.string());
  const CooTensor t2 = CooTensor::load_delimited(out.path.string(), 3);
  CHECK(entry_map(t) == entry_map(t2));
}

TEST_CASE("mode groups visit every entry once with matching coordinates") {
  TempFile f("1 1 1 1\n1 2 1 2\n2 1 1 3\n2 2 2 4\n1 1 2 5\n3 2 2 6\n");
  const CooTensor t = CooTensor::load_delimited(f.path.string(), 3);
  for (std::size_t n = 0; n < t.order(); ++n) {
    std::set<std::uint32_t> seen;
    for (std::uint32_t i = 1; i <= t.shape().dim(n); ++i) {
      for (const std::uint32_t e : t.bucket(n, i)) {
        CHECK(t.coord(e)[n] == i);
        CHECK(seen.insert(e).second);
      }
    }
    CHECK(seen.size() == t.nnz());
  }
}

TEST_CASE("train_test_split partitions deterministically") {
  std::string data;
  for (int i = 1; i <= 40; ++i)
    for (int j = 1; j <= 25; ++j) data += std::to_string(i) + " " + std::to_string(j) + " 1.0\n";
  TempFile f(data);
  const CooTensor t = CooTensor::load_delimited(f.path.string(), 2);
  REQUIRE(t.nnz() == 1000);

  auto [train1, test1] = train_test_split(t, 0.1, 42);
  CHECK(test1.nnz() == 100);
  CHECK(train1.nnz() == 900);

  auto [train2, test2] = train_test_split(t, 0.1, 42);
  CHECK(entry_map(test1) == entry_map(test2));
  CHECK(entry_map(train1) == entry_map(train2));

  auto [train3, test3] = train_test_split(t, 0.1, 43);
  CHECK(entry_map(test1) != entry_map(test3));

  // Disjoint exact cover.
  EntryMap all = entry_map(train1);
  for (const auto& [k, v] : entry_map(test1)) {
    CHECK(all.find(k) == all.end());
    all[k] = v;
  }
  CHECK(all == entry_map(t));

  // |test| rounds: 4321 entries at 0.1 -> 432.
  std::string data2;
  for (int i = 1; i <= 4321; ++i) data2 += std::to_string(i) + " 1 1.0\n";
  TempFile f2(data2);
  const CooTensor t2 = CooTensor::load_delimited(f2.path.string(), 2);
  auto [tr, te] = train_test_split(t2, 0.1, 7);
  CHECK(te.nnz() == 432);
  CHECK(tr.nnz() == 3889);
}

TEST_CASE("degenerate splits are rejected") {
  TempFile f("1 1 1.0\n2 1 2.0\n");
  const CooTensor t = CooTensor::load_delimited(f.path.string(), 2);
  CHECK_THROWS_AS(train_test_split(t, 0.1, 1), DomainError);   // |test| = 0
  CHECK_THROWS_AS(train_test_split(t, 0.95, 1), DomainError);  // |test| = nnz
  CHECK_THROWS_AS(train_test_split(t, 0.0, 1), DomainError);
  CHECK_THROWS_AS(train_test_split(t, 1.0, 1), DomainError);
}

TEST_CASE("sample_batch draws distinct entries and covers the full set") {
  std::string data;
  for (int i = 1; i <= 10; ++i) data += std::to_string(i) + " 1 1.0\n";
  TempFile f(data);
  const CooTensor t = CooTensor::load_delimited(f.path.string(), 2);

  Rng rng(5);
  const auto all = sample_batch(t, 10, rng);
  std::set<std::uint32_t> uniq(all.begin(), all.end());
  CHECK(uniq.size() == 10);  // a permutation of all entries

  const auto one = sample_batch(t, 1, rng);
  CHECK(one.size() == 1);

  CHECK_THROWS_AS(sample_batch(t, 11, rng), DomainError);
  CHECK_THROWS_AS(sample_batch(t, 0, rng), DomainError);

  Rng r1(99), r2(99);
  CHECK(sample_batch(t, 4, r1) == sample_batch(t, 4, r2));
}

TEST_CASE("sample_batch single draws are uniform (chi-squared)") {
  std::string data;
  for (int i = 1; i <= 10; ++i) data += std::to_string(i) + " 1 1.0\n";
  TempFile f(data);
  const CooTensor t = CooTensor::load_delimited(f.path.string(), 2);

  Rng rng(12345);
  std::vector<std::uint32_t> pool, out;
  std::array<std::uint64_t, 10> counts{};
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws; ++i) {
    sample_batch(t, 1, rng, pool, out);
    counts[out[0]]++;
  }
  const double expected = static_cast<double>(draws) / 10.0;
  double chi2 = 0.0;
  for (auto c : counts) {
    const double d = static_cast<double>(c) - expected;
    chi2 += d * d / expected;
  }
  // 9 degrees of freedom: p > 0.01 needs chi2 below 21.666.
  CHECK(chi2 < 21.666);
}
