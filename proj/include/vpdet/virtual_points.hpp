#pragma once

// Virtual LiDAR points from a completed depth map, and range-aware
// subsampling of those points.

#include <cstdint>
#include <span>
#include <vector>

#include "vpdet/calib.hpp"
#include "vpdet/point.hpp"

namespace vpdet {

struct RangeSampleConfig {
  int n_bins = 10;
  double retain_fraction = 0.2;
  double near_threshold = 60.0;
  double max_range = 100.0;
  std::uint64_t seed = 0;

  /// n_bins = 2, as used while training.
  static RangeSampleConfig training();
  /// n_bins = 10, as used at inference.
  static RangeSampleConfig inference();

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

/// One virtual point per valid pixel with depth in (0, max_range]. Pixel
/// (i, j) is the sample at u = i, v = j.
std::vector<Point8D> generate_virtual_points(const DepthMap& dense_depth, const RgbImage& image,
                                             const CalibrationSet& calib,
                                             double max_range = 100.0);

/// Equal-width radial bins over [0, max_range] by horizontal range (points
/// beyond max_range fall in the last bin). Bins whose upper edge is at or
/// below near_threshold keep floor(retain_fraction * n) points drawn without
/// replacement; every other bin is kept whole. Input order is preserved.
std::vector<Point8D> range_aware_sample(std::span<const Point8D> points,
                                        const RangeSampleConfig& config);

}  // namespace vpdet
