#pragma once

#include <cstdint>
#include <vector>

#include "sptucker/model.hpp"
#include "sptucker/sptensor.hpp"

namespace sptucker {

struct PlantedSpec {
  Shape shape;
  Ranks teacher_ranks;
  std::size_t nnz = 0;          // distinct observed positions
  double noise_stddev = 0.0;    // additive Gaussian noise on the observations
  double teacher_mean = 0.5;    // teacher parameter distribution
  double teacher_stddev = 0.1;
  std::uint64_t seed = 1;
};

// Sparse tensor whose observed values come from a hidden Tucker model plus
// noise. Positions are distinct and uniform over the full index space.
CooTensor synth_planted(const PlantedSpec& spec);

struct RatingSpec {
  PlantedSpec base;
  double target_mean = 3.0;
  double target_stddev = 0.9;  // spread of the structured part
  double noise_stddev = 0.4;   // added after rescaling
  bool quantize_half_steps = true;
  double min_value = 0.5;
  double max_value = 5.0;
};

// Ratings-style surrogate: planted predictions affinely mapped to the target
// scale, noised, optionally snapped to half steps, clamped to the rating
// range.
CooTensor synth_ratings(const RatingSpec& spec);

}  // namespace sptucker
