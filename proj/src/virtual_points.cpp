#include "vpdet/virtual_points.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace vpdet {

double Point8D::horizontal_range() const { return std::hypot(x, y); }

RgbImage::RgbImage(int w, int h, Rgb fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("RgbImage: dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(w) * h, fill);
}

RangeSampleConfig RangeSampleConfig::training() {
  RangeSampleConfig c;
  c.n_bins = 2;
  return c;
}

RangeSampleConfig RangeSampleConfig::inference() {
  RangeSampleConfig c;
  c.n_bins = 10;
  return c;
}

void RangeSampleConfig::validate() const {
  if (n_bins < 1) throw std::invalid_argument("range sampling: n_bins must be >= 1");
  if (!(retain_fraction > 0.0 && retain_fraction <= 1.0))
    throw std::invalid_argument("range sampling: retain_fraction must be in (0, 1]");
  if (!(near_threshold > 0.0 && near_threshold <= max_range))
    throw std::invalid_argument("range sampling: need 0 < near_threshold <= max_range");
}

std::vector<Point8D> generate_virtual_points(const DepthMap& dense_depth, const RgbImage& image,
                                             const CalibrationSet& calib, double max_range) {
  if (dense_depth.width != image.width || dense_depth.height != image.height)
    throw std::invalid_argument("generate_virtual_points: depth and image sizes differ");
  std::vector<Point8D> out;
  for (int v = 0; v < dense_depth.height; ++v) {
    for (int u = 0; u < dense_depth.width; ++u) {
      if (!dense_depth.is_valid(u, v)) continue;
      const double d = dense_depth.at(u, v);
      if (!(d > 0.0) || d > max_range) continue;
      const Vec3 p_cam = back_project_pixel(u, v, d, calib);
      const Vec3 p = calib.cam_to_lidar(p_cam);
      const Rgb& c = image.at(u, v);
      out.push_back(Point8D{p.x(), p.y(), p.z(), 0.0, c.r, c.g, c.b, kVirtualTag});
    }
  }
  return out;
}

std::vector<Point8D> range_aware_sample(std::span<const Point8D> points,
                                        const RangeSampleConfig& config) {
  config.validate();
  const double bin_width = config.max_range / config.n_bins;
  std::vector<std::vector<std::size_t>> bins(config.n_bins);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double r = points[i].horizontal_range();
    const int b = std::min(static_cast<int>(std::floor(r / bin_width)), config.n_bins - 1);
    bins[std::max(b, 0)].push_back(i);
  }

  std::vector<unsigned char> keep(points.size(), 1);
  std::mt19937_64 rng(config.seed);
  for (int b = 0; b < config.n_bins; ++b) {
    const double upper = (b + 1) * bin_width;
    if (upper > config.near_threshold) continue;
    auto& idx = bins[b];
    const auto n_keep = static_cast<std::size_t>(std::floor(config.retain_fraction * idx.size()));
    // Partial Fisher-Yates: the first n_keep slots become the sample.
    for (std::size_t i = 0; i < n_keep; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    for (std::size_t i = n_keep; i < idx.size(); ++i) keep[idx[i]] = 0;
  }

  std::vector<Point8D> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    if (keep[i]) out.push_back(points[i]);
  return out;
}

}  // namespace vpdet
