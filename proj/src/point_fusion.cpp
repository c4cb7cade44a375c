#include "vpdet/point_fusion.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>

namespace vpdet {

std::vector<Point8D> encode_lidar(std::span<const LidarPoint> raw) {
  std::vector<Point8D> out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const LidarPoint& p = raw[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw std::invalid_argument("encode_lidar: non-finite coordinate at point " +
                                  std::to_string(i));
    if (!(p.intensity >= 0.0f && p.intensity <= 1.0f))
      throw std::invalid_argument("encode_lidar: intensity outside [0, 1] at point " +
                                  std::to_string(i));
    out.push_back(Point8D{p.x, p.y, p.z, p.intensity, 0.0, 0.0, 0.0, kRealTag});
  }
  return out;
}

std::vector<Point8D> paint_points(std::span<const Point8D> real, const RgbImage& image,
                                  const CalibrationSet& calib) {
  std::vector<Point8D> out(real.begin(), real.end());
  const ImageBounds bounds{image.width, image.height};
  for (Point8D& p : out) {
    const Projection proj = project_lidar_to_image(p.position(), calib, bounds);
    if (!proj.ok()) continue;
    const int u = static_cast<int>(std::lround(proj.pixel.u));
    const int v = static_cast<int>(std::lround(proj.pixel.v));
    const Rgb& c = image.at(u, v);
    p.r = c.r;
    p.g = c.g;
    p.b = c.b;
  }
  return out;
}

FusedCloud early_fuse(std::span<const Point8D> real, std::span<const Point8D> virt) {
  FusedCloud cloud;
  cloud.points.reserve(real.size() + virt.size());
  for (const Point8D& p : real) {
    if (p.tau != kRealTag) throw std::invalid_argument("early_fuse: real point not tagged 2");
    cloud.points.push_back(p);
  }
  for (const Point8D& p : virt) {
    if (p.tau != kVirtualTag) throw std::invalid_argument("early_fuse: virtual point not tagged 1");
    cloud.points.push_back(p);
  }
  cloud.n_real = real.size();
  cloud.n_virtual = virt.size();
  return cloud;
}

FusedCloud near_field_dropout(const FusedCloud& cloud, double radius, double drop_prob,
                              std::uint64_t seed) {
  if (!(drop_prob >= 0.0 && drop_prob <= 1.0))
    throw std::invalid_argument("near_field_dropout: probability must be in [0, 1]");
  FusedCloud out;
  out.points.reserve(cloud.size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const Point8D& p : cloud.points) {
    if (p.horizontal_range() < radius && unit(rng) < drop_prob) continue;
    out.points.push_back(p);
    (p.tau == kRealTag ? out.n_real : out.n_virtual) += 1;
  }
  return out;
}

std::vector<LidarPoint> read_velodyne(const std::string& path) {
  static_assert(std::endian::native == std::endian::little);
  static_assert(sizeof(LidarPoint) == 16);
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw ParseError(path, 0, "cannot open velodyne file");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(LidarPoint) != 0)
    throw ParseError(path, 0,
                     "velodyne file length " + std::to_string(bytes) +
                         " is not a multiple of 16 bytes");
  std::vector<LidarPoint> points(bytes / sizeof(LidarPoint));
  in.seekg(0);
  if (!in.read(reinterpret_cast<char*>(points.data()), static_cast<std::streamsize>(bytes)))
    throw ParseError(path, 0, "short read");
  return points;
}

void write_velodyne(const std::string& path, std::span<const LidarPoint> points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(points.data()),
            static_cast<std::streamsize>(points.size_bytes()));
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace vpdet
