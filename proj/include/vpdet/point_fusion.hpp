#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vpdet/calib.hpp"
#include "vpdet/point.hpp"

namespace vpdet {

/// Raw sensor return as stored in KITTI velodyne files.
struct LidarPoint {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float intensity = 0.0f;
};

struct FusedCloud {
  std::vector<Point8D> points;
  std::size_t n_real = 0;
  std::size_t n_virtual = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// tau = 2, rgb zeroed, coordinates and intensity copied. Rejects non-finite
/// coordinates and intensities outside [0, 1].
std::vector<Point8D> encode_lidar(std::span<const LidarPoint> raw);

/// Colors each point projecting inside the image with its nearest pixel.
/// Other points keep rgb = 0. Only r, g, b are ever modified.
std::vector<Point8D> paint_points(std::span<const Point8D> real, const RgbImage& image,
                                  const CalibrationSet& calib);

/// Real points first, then virtual. Throws std::invalid_argument on a tag
/// that does not match its source.
FusedCloud early_fuse(std::span<const Point8D> real, std::span<const Point8D> virt);

/// Removes each point with horizontal range < radius independently with
/// probability drop_prob.
FusedCloud near_field_dropout(const FusedCloud& cloud, double radius, double drop_prob,
                              std::uint64_t seed);

/// KITTI velodyne binary: little-endian float32 (x, y, z, intensity), no
/// header. Throws ParseError when the length is not a multiple of 16 bytes.
std::vector<LidarPoint> read_velodyne(const std::string& path);
void write_velodyne(const std::string& path, std::span<const LidarPoint> points);

}  // namespace vpdet
