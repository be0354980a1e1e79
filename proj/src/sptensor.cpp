#include "sptucker/sptensor.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_set>

namespace sptucker {

namespace {

// Linear position (0-based) with mode-1 varying fastest; used only as a
// collision key for duplicate detection.
std::uint64_t linear_key(const Shape& shape, std::span<const std::uint32_t> coord) {
  std::uint64_t key = 0;
  std::uint64_t stride = 1;
  for (std::size_t k = 0; k < shape.order(); ++k) {
    key += static_cast<std::uint64_t>(coord[k] - 1) * stride;
    stride *= shape.dim(k);
  }
  return key;
}

}  // namespace

Shape::Shape(std::vector<std::uint32_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw DomainError("shape: order must be at least 2");
  total_ = 1;
  for (std::uint32_t d : dims_) {
    if (d < 1) throw DomainError("shape: every dim must be >= 1");
    if (total_ > std::numeric_limits<std::uint64_t>::max() / d)
      throw DomainError("shape: total element count overflows 64 bits");
    total_ *= d;
  }
}

std::uint64_t unfold_col_index(const Shape& shape, std::span<const std::uint32_t> coord,
                               std::size_t mode) {
  const std::size_t order = shape.order();
  if (mode >= order) throw DomainError("unfold_col_index: mode out of range");
  if (coord.size() != order) throw DomainError("unfold_col_index: coord arity mismatch");
  std::uint64_t j = 1;
  std::uint64_t stride = 1;
  for (std::size_t k = 0; k < order; ++k) {
    if (coord[k] < 1 || coord[k] > shape.dim(k))
      throw DomainError("unfold_col_index: coordinate out of range");
    if (k == mode) continue;
    j += static_cast<std::uint64_t>(coord[k] - 1) * stride;
    stride *= shape.dim(k);
  }
  return j;
}

std::uint64_t vec_index(const Shape& shape, std::span<const std::uint32_t> coord,
                        std::size_t mode) {
  const std::uint64_t j = unfold_col_index(shape, coord, mode);
  return (j - 1) * shape.dim(mode) + coord[mode];
}

void invert_vec_index(const Shape& shape, std::uint64_t k, std::size_t mode,
                      std::span<std::uint32_t> coord) {
  const std::size_t order = shape.order();
  if (mode >= order) throw DomainError("invert_vec_index: mode out of range");
  if (coord.size() != order) throw DomainError("invert_vec_index: coord arity mismatch");
  if (k < 1 || k > shape.total_elems())
    throw DomainError("invert_vec_index: position out of range");
  const std::uint64_t k0 = k - 1;
  coord[mode] = static_cast<std::uint32_t>(k0 % shape.dim(mode)) + 1;
  std::uint64_t j0 = k0 / shape.dim(mode);
  for (std::size_t m = 0; m < order; ++m) {
    if (m == mode) continue;
    coord[m] = static_cast<std::uint32_t>(j0 % shape.dim(m)) + 1;
    j0 /= shape.dim(m);
  }
}

CooTensor::CooTensor(Shape shape, std::vector<std::uint32_t> coords,
                     std::vector<double> values)
    : shape_(std::move(shape)), coords_(std::move(coords)), values_(std::move(values)) {
  const std::size_t order = shape_.order();
  if (values_.empty()) throw DataError("tensor has no entries");
  if (coords_.size() != values_.size() * order)
    throw DataError("coords/values length mismatch");
  if (values_.size() > std::numeric_limits<std::uint32_t>::max())
    throw DataError("entry count exceeds the 32-bit id space");

  std::unordered_set<std::uint64_t> seen;
  seen.reserve(values_.size() * 2);
  for (std::size_t e = 0; e < values_.size(); ++e) {
    const auto c = coord(e);
    for (std::size_t k = 0; k < order; ++k) {
      if (c[k] < 1 || c[k] > shape_.dim(k))
        throw DataError("entry " + std::to_string(e) + ": coordinate out of range");
    }
    if (!seen.insert(linear_key(shape_, c)).second)
      throw DataError("entry " + std::to_string(e) + ": duplicate coordinate");
  }

  // Counting sort of entry ids per mode (one COO store + N permutations, never
  // N matricized copies).
  mode_perm_.resize(order);
  mode_offsets_.resize(order);
  for (std::size_t n = 0; n < order; ++n) {
    const std::uint32_t dim = shape_.dim(n);
    auto& off = mode_offsets_[n];
    off.assign(static_cast<std::size_t>(dim) + 1, 0);
    for (std::size_t e = 0; e < values_.size(); ++e) off[coord(e)[n]]++;
    for (std::size_t i = 1; i <= dim; ++i) off[i] += off[i - 1];
    auto& perm = mode_perm_[n];
    perm.resize(values_.size());
    std::vector<std::uint64_t> cursor(off.begin(), off.end() - 1);
    for (std::size_t e = 0; e < values_.size(); ++e)
      perm[cursor[coord(e)[n] - 1]++] = static_cast<std::uint32_t>(e);
  }
}

CooTensor CooTensor::load_delimited(const std::string& path, std::size_t order,
                                    const LoadOptions& opts) {
  if (order < 2) throw DomainError("load_delimited: order must be >= 2");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");

  std::vector<std::uint32_t> coords;
  std::vector<double> values;
  std::vector<std::uint32_t> maxima(order, 0);

  auto fail = [&](std::size_t lineno, const std::string& what) {
    throw DataError(path + ":" + std::to_string(lineno) + ": " + what);
  };

  std::string line;
  std::size_t lineno = 0;
  bool header_pending = opts.skip_header;
  while (std::getline(in, line)) {
    ++lineno;
    // Tokenize on whitespace or commas.
    std::vector<std::string_view> fields;
    std::string_view sv(line);
    std::size_t pos = 0;
    while (pos < sv.size()) {
      while (pos < sv.size() && (sv[pos] == ' ' || sv[pos] == '\t' || sv[pos] == ',' ||
                                 sv[pos] == '\r'))
        ++pos;
      std::size_t start = pos;
      while (pos < sv.size() && sv[pos] != ' ' && sv[pos] != '\t' && sv[pos] != ',' &&
             sv[pos] != '\r')
        ++pos;
      if (pos > start) fields.push_back(sv.substr(start, pos - start));
    }
    if (fields.empty()) continue;
    if (fields[0][0] == '#') continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    if (fields.size() != order + 1)
      fail(lineno, "expected " + std::to_string(order + 1) + " fields, got " +
                       std::to_string(fields.size()));
    for (std::size_t k = 0; k < order; ++k) {
      std::uint32_t idx = 0;
      auto [p, ec] = std::from_chars(fields[k].data(), fields[k].data() + fields[k].size(), idx);
      if (ec != std::errc{} || p != fields[k].data() + fields[k].size() || idx < 1)
        fail(lineno, "bad index in field " + std::to_string(k + 1));
      coords.push_back(idx);
      maxima[k] = std::max(maxima[k], idx);
    }
    double v = 0.0;
    {
      const auto& f = fields[order];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{} || p != f.data() + f.size() || !std::isfinite(v))
        fail(lineno, "bad value field");
    }
    if (v == 0.0) {
      if (opts.zero_policy == ZeroPolicy::Reject)
        fail(lineno, "zero value (zero policy is reject)");
      v = opts.zero_replacement;
    }
    values.push_back(v);
  }
  if (values.empty()) throw DataError(path + ": no data lines (empty tensor)");

  std::vector<std::uint32_t> dims = opts.dims_override.empty() ? maxima : opts.dims_override;
  if (!opts.dims_override.empty()) {
    if (opts.dims_override.size() != order)
      throw DataError("dims override arity does not match order");
    for (std::size_t k = 0; k < order; ++k)
      if (maxima[k] > dims[k])
        throw DataError(path + ": index " + std::to_string(maxima[k]) + " exceeds dim " +
                        std::to_string(dims[k]) + " in mode " + std::to_string(k + 1));
  }
  return CooTensor(Shape(std::move(dims)), std::move(coords), std::move(values));
}

void CooTensor::save_delimited(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  char buf[64];
  for (std::size_t e = 0; e < nnz(); ++e) {
    const auto c = coord(e);
    for (std::size_t k = 0; k < order(); ++k) out << c[k] << ' ';
    std::snprintf(buf, sizeof buf, "%.17g", values_[e]);
    out << buf << '\n';
  }
  if (!out.flush()) throw DataError("write failed for '" + path + "'");
}

double CooTensor::mean_value() const {
  double acc = 0.0;
  for (double v : values_) acc += v;
  return acc / static_cast<double>(values_.size());
}

std::pair<CooTensor, CooTensor> train_test_split(const CooTensor& t, double test_fraction,
                                                 std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw DomainError("train_test_split: fraction must lie in (0,1)");
  const std::size_t nnz = t.nnz();
  const std::size_t ntest =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(nnz)));
  if (ntest == 0 || ntest == nnz)
    throw DomainError("train_test_split: degenerate split (|test|=" +
                      std::to_string(ntest) + " of " + std::to_string(nnz) + ")");

  std::vector<std::uint32_t> ids(nnz);
  for (std::size_t e = 0; e < nnz; ++e) ids[e] = static_cast<std::uint32_t>(e);
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < nnz; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_below(nnz - i));
    std::swap(ids[i], ids[j]);
  }
  std::sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(ntest));
  std::sort(ids.begin() + static_cast<std::ptrdiff_t>(ntest), ids.end());

  const std::size_t order = t.order();
  auto gather = [&](std::size_t begin, std::size_t end) {
    std::vector<std::uint32_t> coords;
    coords.reserve((end - begin) * order);
    std::vector<double> values;
    values.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const auto c = t.coord(ids[i]);
      coords.insert(coords.end(), c.begin(), c.end());
      values.push_back(t.value(ids[i]));
    }
    return CooTensor(t.shape(), std::move(coords), std::move(values));
  };
  CooTensor test = gather(0, ntest);
  CooTensor train = gather(ntest, nnz);
  return {std::move(train), std::move(test)};
}

void sample_batch(const CooTensor& t, std::size_t m, Rng& rng,
                  std::vector<std::uint32_t>& pool, std::vector<std::uint32_t>& out) {
  const std::size_t nnz = t.nnz();
  if (m < 1 || m > nnz) throw DomainError("sample_batch: batch size out of range");
  if (pool.size() != nnz) {
    pool.resize(nnz);
    for (std::size_t e = 0; e < nnz; ++e) pool[e] = static_cast<std::uint32_t>(e);
  }
  // Partial Fisher-Yates; the pool stays a permutation across calls.
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_below(nnz - i));
    std::swap(pool[i], pool[j]);
  }
  out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
}

std::vector<std::uint32_t> sample_batch(const CooTensor& t, std::size_t m, Rng& rng) {
  std::vector<std::uint32_t> pool;
  std::vector<std::uint32_t> out;
  sample_batch(t, m, rng, pool, out);
  return out;
}

}  // namespace sptucker
