#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vpdet/virtual_points.hpp"

using namespace vpdet;

namespace {

CalibrationSet camera(double f, double cu, double cv) {
  Mat4 t = Mat4::Identity();
  t.block<3, 3>(0, 0) << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  t.block<3, 1>(0, 3) = Vec3(0.05, -0.1, 0.2);
  return CalibrationSet::from_intrinsics({f, f, cu, cv}, t);
}

std::vector<Point8D> ring(int n, double range, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0, 2 * kPi);
  std::vector<Point8D> out;
  for (int i = 0; i < n; ++i) {
    const double a = U(rng);
    Point8D p;
    p.x = range * std::cos(a);
    p.y = range * std::sin(a);
    p.z = 0.01 * i;
    p.tau = kVirtualTag;
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST(VirtualPoints, AllInvalidDepthGivesNothing) {
  const DepthMap depth(8, 4);
  const RgbImage image(8, 4);
  EXPECT_TRUE(generate_virtual_points(depth, image, CalibrationSet::identity()).empty());
}

TEST(VirtualPoints, PrincipalPixelWithIdentityExtrinsics) {
  const auto calib = CalibrationSet::from_intrinsics({50, 50, 3, 2}, Mat4::Identity());
  DepthMap depth(8, 4);
  depth.set(3, 2, 7.0);
  RgbImage image(8, 4, Rgb{0.1, 0.2, 0.3});
  const auto pts = generate_virtual_points(depth, image, calib);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_TRUE(pts[0].position().isApprox(Vec3(0, 0, 7)));
  EXPECT_EQ(pts[0].tau, kVirtualTag);
  EXPECT_EQ(pts[0].intensity, 0.0);
  EXPECT_EQ(pts[0].r, 0.1);
  EXPECT_EQ(pts[0].b, 0.3);
}

TEST(VirtualPoints, SixteenPixelsMatchPerPixelComposition) {
  const auto calib = camera(40, 1.5, 1.5);
  DepthMap depth(4, 4);
  RgbImage image(4, 4);
  for (int v = 0; v < 4; ++v)
    for (int u = 0; u < 4; ++u) {
      depth.set(u, v, 2.0 + u + 0.5 * v);
      image.at(u, v) = Rgb{u / 4.0, v / 4.0, 0.5};
    }
  const auto pts = generate_virtual_points(depth, image, calib);
  ASSERT_EQ(pts.size(), 16u);
  // Oracle: explicit pinhole inverse, then the inverse rigid transform.
  const Mat4 inv = (calib.r0() * calib.t_lidar_to_cam()).inverse();
  std::size_t i = 0;
  for (int v = 0; v < 4; ++v)
    for (int u = 0; u < 4; ++u, ++i) {
      const double d = depth.at(u, v);
      const Eigen::Vector4d cam((u - 1.5) / 40 * d, (v - 1.5) / 40 * d, d, 1.0);
      const Eigen::Vector4d lidar = inv * cam;
      EXPECT_LT((pts[i].position() - lidar.head<3>()).norm(), 1e-9);
      EXPECT_EQ(pts[i].g, v / 4.0);
    }
}

TEST(VirtualPoints, SkipsDepthBeyondMaxRangeAndRejectsSizeMismatch) {
  DepthMap depth(2, 1);
  depth.set(0, 0, 50.0);
  depth.set(1, 0, 150.0);
  const RgbImage image(2, 1);
  const auto calib = CalibrationSet::from_intrinsics({10, 10, 0, 0}, Mat4::Identity());
  EXPECT_EQ(generate_virtual_points(depth, image, calib, 100.0).size(), 1u);
  EXPECT_THROW(generate_virtual_points(depth, RgbImage(3, 1), calib), std::invalid_argument);
}

TEST(RangeSampling, FullRetentionIsACopy) {
  std::mt19937_64 rng(1);
  const auto pts = ring(500, 15.0, rng);
  RangeSampleConfig cfg;
  cfg.retain_fraction = 1.0;
  EXPECT_EQ(range_aware_sample(pts, cfg), pts);
}

TEST(RangeSampling, DistantBinsKeptWhole) {
  std::mt19937_64 rng(2);
  const auto pts = ring(300, 70.0, rng);
  RangeSampleConfig cfg = RangeSampleConfig::training();
  cfg.max_range = 120.0;
  EXPECT_EQ(cfg.n_bins, 2);
  EXPECT_EQ(range_aware_sample(pts, cfg), pts);
}

TEST(RangeSampling, NearBinKeepsFloorOfFraction) {
  std::vector<Point8D> pts;
  for (int i = 0; i < 10000; ++i) {
    Point8D p;
    p.x = (i % 2) ? 10.0 : -10.0;
    p.z = i * 1e-4;
    p.tau = kVirtualTag;
    pts.push_back(p);
  }
  RangeSampleConfig cfg;
  cfg.retain_fraction = 0.2;
  EXPECT_EQ(range_aware_sample(pts, cfg).size(), 2000u);
  cfg.retain_fraction = 0.33;
  EXPECT_EQ(range_aware_sample(std::span(pts).first(7), cfg).size(), 2u);
}

TEST(RangeSampling, DeterministicAndBounded) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0, 1);
  std::vector<Point8D> pts;
  for (int i = 0; i < 2000; ++i) {
    const double r = 110 * U(rng), a = 2 * kPi * U(rng);
    Point8D p;
    p.x = r * std::cos(a);
    p.y = r * std::sin(a);
    p.tau = kVirtualTag;
    pts.push_back(p);
  }
  RangeSampleConfig cfg;
  cfg.seed = 9;
  const auto a = range_aware_sample(pts, cfg);
  EXPECT_EQ(a, range_aware_sample(pts, cfg));
  cfg.seed = 10;
  EXPECT_NE(a, range_aware_sample(pts, cfg));
  std::size_t far = 0;
  for (const auto& p : pts) far += p.horizontal_range() >= 60.0;
  EXPECT_GE(a.size(), far);
  EXPECT_LE(a.size(), pts.size());
  EXPECT_TRUE(range_aware_sample({}, cfg).empty());
}

TEST(RangeSampling, ConfigValidation) {
  RangeSampleConfig cfg;
  cfg.retain_fraction = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.near_threshold = 150.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.n_bins = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(RangeSampleConfig::inference().n_bins, 10);
}
