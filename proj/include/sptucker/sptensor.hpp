#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sptucker/common.hpp"
#include "sptucker/rng.hpp"

namespace sptucker {

// Conventions used throughout:
//  - modes are 0-based in the API (array positions),
//  - coordinate VALUES are 1-based, exactly as they appear in input files and
//    in the unfolding/vectorization formulas.

class Shape {
 public:
  Shape() = default;
  explicit Shape(std::vector<std::uint32_t> dims);

  std::size_t order() const { return dims_.size(); }
  std::uint32_t dim(std::size_t mode) const { return dims_[mode]; }
  const std::vector<std::uint32_t>& dims() const { return dims_; }

  // Product of all dims; construction rejects shapes whose product does not
  // fit in 64 bits.
  std::uint64_t total_elems() const { return total_; }

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<std::uint32_t> dims_;
  std::uint64_t total_ = 0;
};

// Column index (1-based) of `coord` in the mode-n unfolding X^(n):
//   j = 1 + sum_{k != n} (i_k - 1) * prod_{m < k, m != n} I_m.
std::uint64_t unfold_col_index(const Shape& shape, std::span<const std::uint32_t> coord,
                               std::size_t mode);

// Position (1-based) of `coord` in the mode-n vectorization Vec_n:
//   k = (j - 1) * I_n + i_n.
std::uint64_t vec_index(const Shape& shape, std::span<const std::uint32_t> coord,
                        std::size_t mode);

// Inverse of vec_index; writes the 1-based coordinate into `coord`.
void invert_vec_index(const Shape& shape, std::uint64_t k, std::size_t mode,
                      std::span<std::uint32_t> coord);

enum class ZeroPolicy { Reject, Replace };

struct LoadOptions {
  bool skip_header = false;
  ZeroPolicy zero_policy = ZeroPolicy::Reject;
  double zero_replacement = 0.5;
  // Empty: infer dims as the per-mode maxima seen in the data.
  std::vector<std::uint32_t> dims_override;
};

// Order-N sparse tensor in coordinate format. Immutable after construction;
// safe for concurrent reads. Entry ids are dense 0..nnz-1; per-mode buckets
// group entry ids by their coordinate in that mode.
class CooTensor {
 public:
  // coords is nnz*order, 1-based. Values and coords are validated and the
  // per-mode groupings are built here (single-threaded).
  CooTensor(Shape shape, std::vector<std::uint32_t> coords, std::vector<double> values);

  static CooTensor load_delimited(const std::string& path, std::size_t order,
                                  const LoadOptions& opts = {});
  void save_delimited(const std::string& path) const;

  const Shape& shape() const { return shape_; }
  std::size_t order() const { return shape_.order(); }
  std::size_t nnz() const { return values_.size(); }

  std::span<const std::uint32_t> coord(std::size_t entry) const {
    return {coords_.data() + entry * order(), order()};
  }
  double value(std::size_t entry) const { return values_[entry]; }
  const std::vector<double>& values() const { return values_; }

  // Entry ids whose mode-`mode` coordinate equals i (1-based i).
  std::span<const std::uint32_t> bucket(std::size_t mode, std::uint32_t i) const {
    const auto& off = mode_offsets_[mode];
    return {mode_perm_[mode].data() + off[i - 1],
            static_cast<std::size_t>(off[i] - off[i - 1])};
  }
  const std::vector<std::uint32_t>& mode_perm(std::size_t mode) const {
    return mode_perm_[mode];
  }
  const std::vector<std::uint64_t>& mode_offsets(std::size_t mode) const {
    return mode_offsets_[mode];
  }

  double mean_value() const;

 private:
  Shape shape_;
  std::vector<std::uint32_t> coords_;
  std::vector<double> values_;
  std::vector<std::vector<std::uint32_t>> mode_perm_;
  std::vector<std::vector<std::uint64_t>> mode_offsets_;
};

// Disjoint deterministic partition; |test| = round(test_fraction * nnz).
std::pair<CooTensor, CooTensor> train_test_split(const CooTensor& t, double test_fraction,
                                                 std::uint64_t seed);

// m distinct entry ids drawn uniformly without replacement (the set Psi).
std::vector<std::uint32_t> sample_batch(const CooTensor& t, std::size_t m, Rng& rng);

// Reusable-scratch form: `pool` must be a permutation of 0..nnz-1 (it is
// rebuilt if sized wrong) and is permuted in place, keeping draws uniform
// across calls without reallocation.
void sample_batch(const CooTensor& t, std::size_t m, Rng& rng,
                  std::vector<std::uint32_t>& pool, std::vector<std::uint32_t>& out);

}  // namespace sptucker
