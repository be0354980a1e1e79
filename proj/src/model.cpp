#include "sptucker/model.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "sptucker/rng.hpp"

namespace sptucker {

void Ranks::validate(std::size_t order) const {
  if (J.size() != order) throw DomainError("ranks: J arity does not match tensor order");
  if (r_core < 1) throw DomainError("ranks: R_core must be >= 1");
  std::uint64_t prod = 1;
  for (std::uint32_t j : J) {
    if (j < 1) throw DomainError("ranks: every J_n must be >= 1");
    if (j < r_core) throw DomainError("ranks: R_core must satisfy R_core <= J_n");
    if (prod > std::numeric_limits<std::uint64_t>::max() / j)
      throw DomainError("ranks: core element count overflows 64 bits");
    prod *= j;
  }
}

std::uint64_t Ranks::core_elems() const {
  std::uint64_t prod = 1;
  for (std::uint32_t j : J) prod *= j;
  return prod;
}

std::uint64_t Ranks::min_j() const {
  return *std::min_element(J.begin(), J.end());
}

std::vector<double> reconstruct_core(const std::vector<Matrix>& kruskal, const Ranks& ranks) {
  const std::size_t order = ranks.J.size();
  const std::size_t total = static_cast<std::size_t>(ranks.core_elems());
  std::vector<double> flat(total, 0.0);
  std::vector<double> term;
  std::vector<double> next;
  for (std::uint32_t r = 0; r < ranks.r_core; ++r) {
    // Outer-product expansion, mode 1 fastest.
    term.assign(ranks.J[0], 0.0);
    for (std::uint32_t j = 0; j < ranks.J[0]; ++j) term[j] = kruskal[0].at(j, r);
    for (std::size_t n = 1; n < order; ++n) {
      next.assign(term.size() * ranks.J[n], 0.0);
      for (std::uint32_t j = 0; j < ranks.J[n]; ++j) {
        const double b = kruskal[n].at(j, r);
        for (std::size_t i = 0; i < term.size(); ++i) next[j * term.size() + i] = b * term[i];
      }
      term.swap(next);
    }
    for (std::size_t i = 0; i < total; ++i) flat[i] += term[i];
  }
  return flat;
}

Matrix unfold_dense(const std::vector<double>& flat, const std::vector<std::uint32_t>& dims,
                    std::size_t mode) {
  const std::size_t order = dims.size();
  std::uint64_t total = 1;
  for (std::uint32_t d : dims) total *= d;
  if (flat.size() != total) throw InternalError("unfold_dense: size mismatch");
  const std::size_t rows = dims[mode];
  const std::size_t cols = static_cast<std::size_t>(total / rows);
  Matrix out(rows, cols);
  std::vector<std::uint32_t> idx(order, 0);  // 0-based odometer, mode 1 fastest
  std::uint64_t col_stride = 1;              // running strides of modes != mode
  for (std::uint64_t lin = 0; lin < total; ++lin) {
    std::uint64_t col = 0;
    col_stride = 1;
    for (std::size_t k = 0; k < order; ++k) {
      if (k == mode) continue;
      col += idx[k] * col_stride;
      col_stride *= dims[k];
    }
    out.at(idx[mode], static_cast<std::size_t>(col)) = flat[lin];
    for (std::size_t k = 0; k < order; ++k) {
      if (++idx[k] < dims[k]) break;
      idx[k] = 0;
    }
  }
  return out;
}

TuckerModel::TuckerModel(Shape shape, Ranks ranks)
    : shape_(std::move(shape)), ranks_(std::move(ranks)) {
  ranks_.validate(shape_.order());
  if (ranks_.core_elems() > kMaxCoreElems)
    throw DomainError("model: core has " + std::to_string(ranks_.core_elems()) +
                      " elements, cap is " + std::to_string(kMaxCoreElems));
  const std::size_t order = shape_.order();
  factors_.reserve(order);
  kruskal_.reserve(order);
  for (std::size_t n = 0; n < order; ++n) {
    factors_.emplace_back(shape_.dim(n), ranks_.J[n]);
    kruskal_.emplace_back(ranks_.J[n], ranks_.r_core);
  }
  refresh_core_cache();
}

TuckerModel TuckerModel::init_gaussian(const Shape& shape, const Ranks& ranks, double mean,
                                       double stddev, std::uint64_t seed) {
  if (!(stddev > 0.0)) throw DomainError("init_gaussian: stddev must be positive");
  TuckerModel m(shape, ranks);
  Rng rng(seed);
  for (auto& b : m.kruskal_)
    for (double& v : b.data()) v = rng.next_gaussian(mean, stddev);
  for (auto& a : m.factors_)
    for (double& v : a.data()) v = rng.next_gaussian(mean, stddev);
  m.refresh_core_cache();
  return m;
}

void TuckerModel::refresh_core_cache() {
  core_dense_ = reconstruct_core(kruskal_, ranks_);
  core_unfold_.clear();
  core_unfold_.reserve(order());
  for (std::size_t n = 0; n < order(); ++n)
    core_unfold_.push_back(unfold_dense(core_dense_, ranks_.J, n));
}

void TuckerModel::kron_row_excluding(std::span<const std::uint32_t> coord, std::size_t mode,
                                     std::vector<double>& s) const {
  // Incremental expansion over modes k != mode, ascending, lower modes fastest.
  s.assign(1, 1.0);
  std::size_t len = 1;
  for (std::size_t k = 0; k < order(); ++k) {
    if (k == mode) continue;
    const double* arow = factors_[k].row(coord[k] - 1);
    const std::uint32_t jk = ranks_.J[k];
    s.resize(len * jk);
    for (std::uint32_t j = jk; j-- > 0;) {
      const double f = arow[j];
      double* dst = s.data() + static_cast<std::size_t>(j) * len;
      if (j == 0) {
        for (std::size_t i = 0; i < len; ++i) dst[i] = s[i] * f;
      } else {
        const double* src = s.data();
        for (std::size_t i = 0; i < len; ++i) dst[i] = src[i] * f;
      }
    }
    len *= jk;
  }
}

void TuckerModel::e_column(std::span<const std::uint32_t> coord, std::size_t mode,
                           std::vector<double>& s_scratch, std::vector<double>& e) const {
  kron_row_excluding(coord, mode, s_scratch);
  const Matrix& g = core_unfold_[mode];
  e.resize(g.rows());
  for (std::size_t j = 0; j < g.rows(); ++j)
    e[j] = dot(g.row(j), s_scratch.data(), g.cols());
}

double TuckerModel::predict(std::span<const std::uint32_t> coord,
                            std::vector<double>& s_scratch,
                            std::vector<double>& e_scratch) const {
  e_column(coord, 0, s_scratch, e_scratch);
  return dot(factors_[0].row(coord[0] - 1), e_scratch.data(), e_scratch.size());
}

double TuckerModel::predict(std::span<const std::uint32_t> coord) const {
  std::vector<double> s, e;
  return predict(coord, s, e);
}

bool TuckerModel::all_finite() const {
  for (const auto& a : factors_)
    if (!a.all_finite()) return false;
  for (const auto& b : kruskal_)
    if (!b.all_finite()) return false;
  return true;
}

namespace {

constexpr char kMagic[8] = {'S', 'P', 'T', 'U', 'C', 'K', 'M', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ofstream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("model file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::ifstream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("model file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::ifstream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

void TuckerModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(order()));
  for (std::size_t n = 0; n < order(); ++n) put_u64(out, shape_.dim(n));
  for (std::size_t n = 0; n < order(); ++n) put_u64(out, ranks_.J[n]);
  put_u64(out, ranks_.r_core);
  for (const auto& b : kruskal_)
    for (double v : b.data()) put_f64(out, v);
  for (const auto& a : factors_)
    for (double v : a.data()) put_f64(out, v);
  if (!out.flush()) throw DataError("write failed for '" + path + "'");
}

TuckerModel TuckerModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw FormatError("not a model file (bad magic)");
  const std::uint32_t version = get_u32(in);
  if (version != kVersion)
    throw FormatError("unsupported model format version " + std::to_string(version));
  const std::uint32_t order = get_u32(in);
  if (order < 2 || order > 64) throw FormatError("implausible tensor order");
  std::vector<std::uint32_t> dims(order);
  for (auto& d : dims) {
    const std::uint64_t v = get_u64(in);
    if (v < 1 || v > std::numeric_limits<std::uint32_t>::max())
      throw FormatError("dimension out of range");
    d = static_cast<std::uint32_t>(v);
  }
  Ranks ranks;
  ranks.J.resize(order);
  for (auto& j : ranks.J) {
    const std::uint64_t v = get_u64(in);
    if (v < 1 || v > std::numeric_limits<std::uint32_t>::max())
      throw FormatError("rank out of range");
    j = static_cast<std::uint32_t>(v);
  }
  {
    const std::uint64_t v = get_u64(in);
    if (v < 1 || v > std::numeric_limits<std::uint32_t>::max())
      throw FormatError("R_core out of range");
    ranks.r_core = static_cast<std::uint32_t>(v);
  }
  TuckerModel m = [&] {
    try {
      return TuckerModel(Shape(dims), ranks);
    } catch (const DomainError& e) {
      throw FormatError(std::string("model file violates invariants: ") + e.what());
    }
  }();
  for (auto& b : m.kruskal_)
    for (double& v : b.data()) v = get_f64(in);
  for (auto& a : m.factors_)
    for (double& v : a.data()) v = get_f64(in);
  char extra;
  if (in.read(&extra, 1)) throw FormatError("trailing bytes after model payload");
  if (!m.all_finite()) throw FormatError("model file holds non-finite parameters");
  m.refresh_core_cache();
  return m;
}

}  // namespace sptucker
