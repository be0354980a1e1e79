#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sptucker/common.hpp"
#include "sptucker/matrix.hpp"
#include "sptucker/sptensor.hpp"

namespace sptucker {

struct Ranks {
  std::vector<std::uint32_t> J;  // J_1..J_N
  std::uint32_t r_core = 0;

  void validate(std::size_t order) const;
  std::uint64_t core_elems() const;  // prod J_n
  std::uint64_t min_j() const;
};

// The dense core cache is refreshed eagerly; cap its size so the factor phase
// can afford to read the unfoldings once per observed entry.
inline constexpr std::uint64_t kMaxCoreElems = 100000;

// Dense core tensor G-hat from the Kruskal matrices:
//   G[j_1..j_N] = sum_r prod_n B^(n)[j_n, r],
// returned flat with mode 1 varying fastest.
std::vector<double> reconstruct_core(const std::vector<Matrix>& kruskal, const Ranks& ranks);

// Mode-n unfolding of a flat dense tensor (mode-1-fastest layout) into a
// dims[mode] x prod_{k != mode} dims[k] matrix, columns ordered by
// unfold_col_index.
Matrix unfold_dense(const std::vector<double>& flat, const std::vector<std::uint32_t>& dims,
                    std::size_t mode);

// Learned parameters: N factor matrices A^(n) (I_n x J_n) and N Kruskal
// matrices B^(n) (J_n x R_core) whose Kruskal product is the core tensor.
class TuckerModel {
 public:
  TuckerModel(Shape shape, Ranks ranks);

  // All A and B entries i.i.d. Normal(mean, stddev^2); draw order is pinned
  // (B^(1)..B^(N) row-major, then A^(1)..A^(N) row-major) so a seed fully
  // determines the model.
  static TuckerModel init_gaussian(const Shape& shape, const Ranks& ranks, double mean,
                                   double stddev, std::uint64_t seed);

  const Shape& shape() const { return shape_; }
  const Ranks& ranks() const { return ranks_; }
  std::size_t order() const { return shape_.order(); }

  Matrix& factor(std::size_t n) { return factors_[n]; }
  const Matrix& factor(std::size_t n) const { return factors_[n]; }
  Matrix& kruskal(std::size_t n) { return kruskal_[n]; }
  const Matrix& kruskal(std::size_t n) const { return kruskal_[n]; }
  const std::vector<Matrix>& kruskal() const { return kruskal_; }

  // Cached dense core and its unfoldings; must be refreshed after any B edit.
  const std::vector<double>& core_dense() const { return core_dense_; }
  const Matrix& core_unfolding(std::size_t n) const { return core_unfold_[n]; }
  void refresh_core_cache();

  // Row of S^(n) for one observation: s[col-1] = prod_{k != n} A^(k)[i_k, j_k]
  // with col = unfold_col_index of (j_1..j_N) over the core shape.
  void kron_row_excluding(std::span<const std::uint32_t> coord, std::size_t mode,
                          std::vector<double>& s) const;

  // e = G-hat^(n) * s^T, length J_n.
  void e_column(std::span<const std::uint32_t> coord, std::size_t mode,
                std::vector<double>& s_scratch, std::vector<double>& e) const;

  double predict(std::span<const std::uint32_t> coord, std::vector<double>& s_scratch,
                 std::vector<double>& e_scratch) const;
  double predict(std::span<const std::uint32_t> coord) const;

  bool all_finite() const;

  // Versioned binary format; round-trips bit-exactly for finite values.
  void save(const std::string& path) const;
  static TuckerModel load(const std::string& path);

 private:
  Shape shape_;
  Ranks ranks_;
  std::vector<Matrix> factors_;
  std::vector<Matrix> kruskal_;
  std::vector<double> core_dense_;
  std::vector<Matrix> core_unfold_;
};

}  // namespace sptucker
