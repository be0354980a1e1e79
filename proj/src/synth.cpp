#include "sptucker/synth.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "sptucker/rng.hpp"

namespace sptucker {

namespace {

// Distinct linear positions (1-based vec_1 indices), uniform without
// replacement; sorted so entry order is reproducible. Small index spaces use
// a partial shuffle, large sparse ones rejection sampling.
std::vector<std::uint64_t> draw_positions(const Shape& shape, std::size_t count, Rng& rng) {
  const std::uint64_t total = shape.total_elems();
  if (count == 0 || count > total)
    throw DomainError("synth: requested nnz out of range for the shape");
  std::vector<std::uint64_t> out;
  out.reserve(count);
  if (total <= (1ull << 22)) {
    std::vector<std::uint64_t> pool(total);
    for (std::uint64_t i = 0; i < total; ++i) pool[i] = i + 1;
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t j = i + rng.next_below(total - i);
      std::swap(pool[i], pool[j]);
    }
    out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    if (count > total / 2)
      throw DomainError("synth: density above 50% needs a small index space");
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(count * 2);
    while (out.size() < count) {
      const std::uint64_t pos = rng.next_below(total) + 1;
      if (seen.insert(pos).second) out.push_back(pos);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct Planted {
  std::vector<std::uint32_t> coords;
  std::vector<double> raw;  // teacher predictions before noise
};

Planted plant(const PlantedSpec& spec, Rng& rng) {
  spec.teacher_ranks.validate(spec.shape.order());
  TuckerModel teacher = TuckerModel::init_gaussian(spec.shape, spec.teacher_ranks,
                                                   spec.teacher_mean, spec.teacher_stddev,
                                                   spec.seed);
  const auto positions = draw_positions(spec.shape, spec.nnz, rng);
  const std::size_t order = spec.shape.order();
  Planted out;
  out.coords.resize(positions.size() * order);
  out.raw.resize(positions.size());
  std::vector<double> s, e;
  std::vector<std::uint32_t> coord(order);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    invert_vec_index(spec.shape, positions[i], 0, coord);
    std::copy(coord.begin(), coord.end(), out.coords.begin() + i * order);
    out.raw[i] = teacher.predict(coord, s, e);
  }
  return out;
}

}  // namespace

CooTensor synth_planted(const PlantedSpec& spec) {
  Rng rng(spec.seed + 0x9E3779B97F4A7C15ull);
  Planted p = plant(spec, rng);
  std::vector<double> values(p.raw.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = p.raw[i] + (spec.noise_stddev > 0.0
                                ? rng.next_gaussian(0.0, spec.noise_stddev)
                                : 0.0);
  return CooTensor(spec.shape, std::move(p.coords), std::move(values));
}

CooTensor synth_ratings(const RatingSpec& spec) {
  Rng rng(spec.base.seed + 0x9E3779B97F4A7C15ull);
  Planted p = plant(spec.base, rng);
  double mean = 0.0;
  for (double v : p.raw) mean += v;
  mean /= static_cast<double>(p.raw.size());
  double var = 0.0;
  for (double v : p.raw) var += (v - mean) * (v - mean);
  var /= static_cast<double>(p.raw.size());
  const double stddev = std::sqrt(var);
  const double scale = stddev > 0.0 ? spec.target_stddev / stddev : 0.0;

  std::vector<double> values(p.raw.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = spec.target_mean + (p.raw[i] - mean) * scale;
    if (spec.noise_stddev > 0.0) v += rng.next_gaussian(0.0, spec.noise_stddev);
    if (spec.quantize_half_steps) v = std::round(v * 2.0) / 2.0;
    v = std::clamp(v, spec.min_value, spec.max_value);
    values[i] = v;
  }
  return CooTensor(spec.base.shape, std::move(p.coords), std::move(values));
}

}  // namespace sptucker
