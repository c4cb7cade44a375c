#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "vpdet/common.hpp"

namespace vpdet {

inline constexpr int kVirtualTag = 1;
inline constexpr int kRealTag = 2;
inline constexpr int kPointFeatures = 8;

/// One fused point: [x, y, z, intensity, r, g, b, tau]. Real LiDAR points
/// carry tau = 2, virtual points tau = 1 and zero intensity.
struct Point8D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  int tau = kRealTag;

  Vec3 position() const { return Vec3(x, y, z); }
  double horizontal_range() const;
  std::array<double, kPointFeatures> features() const {
    return {x, y, z, intensity, r, g, b, static_cast<double>(tau)};
  }

  bool operator==(const Point8D&) const = default;
};

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;

  bool operator==(const Rgb&) const = default;
};

/// Row-major image with channels normalized to [0, 1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, Rgb fill = {});

  const Rgb& at(int u, int v) const { return pixels[static_cast<std::size_t>(v) * width + u]; }
  Rgb& at(int u, int v) { return pixels[static_cast<std::size_t>(v) * width + u]; }
};

}  // namespace vpdet
