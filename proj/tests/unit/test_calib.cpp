#include <random>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vpdet/calib.hpp"

using namespace vpdet;

namespace {

Mat4 axis_permuting() {
  Mat4 t = Mat4::Identity();
  t.block<3, 3>(0, 0) << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  return t;
}

CalibrationSet kitti_like() {
  Mat34 p2;
  p2 << 700, 0, 600, 0, 0, 700, 180, 0, 0, 0, 1, 0;
  Mat4 r0 = Mat4::Identity();
  r0.block<3, 3>(0, 0) = Eigen::AngleAxisd(0.01, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  Mat4 t = axis_permuting();
  t.block<3, 1>(0, 3) = Vec3(0.1, -0.2, 0.3);
  return CalibrationSet(p2, r0, t);
}

}  // namespace

TEST(Projection, IdentityCalibrationDividesByDepth) {
  const auto pr = project_lidar_to_image(Vec3(2, 1, 5), CalibrationSet::identity());
  ASSERT_TRUE(pr.ok());
  EXPECT_DOUBLE_EQ(pr.pixel.u, 0.4);
  EXPECT_DOUBLE_EQ(pr.pixel.v, 0.2);
  EXPECT_DOUBLE_EQ(pr.pixel.depth, 5.0);
}

TEST(Projection, AxisPermutingExtrinsicsHitPrincipalPoint) {
  const auto calib = CalibrationSet::from_intrinsics({700, 700, 600, 180}, axis_permuting());
  const auto pr = project_lidar_to_image(Vec3(2, 0, 0), calib);
  ASSERT_TRUE(pr.ok());
  EXPECT_NEAR(pr.pixel.u, 600.0, 1e-12);
  EXPECT_NEAR(pr.pixel.v, 180.0, 1e-12);
  EXPECT_NEAR(pr.pixel.depth, 2.0, 1e-12);
}

TEST(Projection, BehindCameraIsSignalled) {
  EXPECT_EQ(project_lidar_to_image(Vec3(0, 0, -1), CalibrationSet::identity()).status,
            ProjectionStatus::kBehind);
  EXPECT_EQ(project_lidar_to_image(Vec3(0, 0, 0), CalibrationSet::identity()).status,
            ProjectionStatus::kBehind);
}

TEST(Projection, OutOfFrameNeedsBounds) {
  const auto calib = CalibrationSet::from_intrinsics({100, 100, 50, 50}, Mat4::Identity());
  const Vec3 p(10, 0, 1);  // u = 1050
  EXPECT_TRUE(project_lidar_to_image(p, calib).ok());
  EXPECT_EQ(project_lidar_to_image(p, calib, ImageBounds{100, 100}).status, ProjectionStatus::kOutOfFrame);
}

TEST(Projection, MatchesHomogeneousOracle) {
  const auto calib = kitti_like();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(-20, 20);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(5 + std::abs(U(rng)), U(rng), 0.1 * U(rng));
    const auto pr = project_lidar_to_image(p, calib);
    const auto want = oracle::project(p, calib.p2(), calib.r0(), calib.t_lidar_to_cam());
    ASSERT_TRUE(pr.ok());
    EXPECT_NEAR(pr.pixel.u, want[0], 1e-9);
    EXPECT_NEAR(pr.pixel.v, want[1], 1e-9);
    EXPECT_NEAR(pr.pixel.depth, want[2], 1e-12);
  }
}

TEST(Projection, ScaleConsistentAlongRay) {
  const auto calib = CalibrationSet::from_intrinsics({700, 650, 600, 180}, Mat4::Identity());
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(-5, 5);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(U(rng), U(rng), 1 + std::abs(U(rng)));
    const auto a = project_lidar_to_image(p, calib);
    const auto b = project_lidar_to_image(2 * p, calib);
    EXPECT_NEAR(a.pixel.u, b.pixel.u, 1e-9);
    EXPECT_NEAR(a.pixel.v, b.pixel.v, 1e-9);
  }
}

TEST(BackProject, PrincipalRayAndUnitIntrinsics) {
  const auto calib = CalibrationSet::from_intrinsics({700, 700, 600, 180}, Mat4::Identity());
  EXPECT_TRUE(back_project_pixel(600, 180, 7, calib).isApprox(Vec3(0, 0, 7)));
  const auto unit = CalibrationSet::from_intrinsics({1, 1, 0, 0}, Mat4::Identity());
  EXPECT_TRUE(back_project_pixel(3, 4, 2, unit).isApprox(Vec3(6, 8, 2)));
}

TEST(BackProject, RejectsNonPositiveDepth) {
  EXPECT_THROW(back_project_pixel(0, 0, 0.0, CalibrationSet::identity()), std::invalid_argument);
  EXPECT_THROW(back_project_pixel(0, 0, -1.0, CalibrationSet::identity()), std::invalid_argument);
}

TEST(CamToLidar, InvertsExtrinsics) {
  EXPECT_TRUE(cam_to_lidar(Vec3(1, 2, 3), CalibrationSet::identity()).isApprox(Vec3(1, 2, 3)));
  const auto calib = CalibrationSet::from_intrinsics({700, 700, 600, 180}, axis_permuting());
  EXPECT_LT((cam_to_lidar(Vec3(0, 0, 2), calib) - Vec3(2, 0, 0)).norm(), 1e-12);
}

TEST(CamToLidar, RoundTripProperty) {
  const auto calib = kitti_like();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-50, 50);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(U(rng), U(rng), U(rng));
    EXPECT_LT((calib.cam_to_lidar(calib.lidar_to_cam(p)) - p).norm(), 1e-9);
    const auto pr = project_lidar_to_image(p, calib);
    if (!pr.ok()) continue;
    const Vec3 back = cam_to_lidar(back_project_pixel(pr.pixel.u, pr.pixel.v, pr.pixel.depth, calib), calib);
    EXPECT_LT((back - p).norm(), 1e-9);
  }
}

TEST(Calibration, RejectsNonOrthonormalRotation) {
  Mat4 t = Mat4::Identity();
  t(0, 0) = 1.1;
  Mat34 p2 = Mat34::Zero();
  p2.block<3, 3>(0, 0) = Eigen::Matrix3d::Identity();
  EXPECT_THROW(CalibrationSet(p2, Mat4::Identity(), t), std::invalid_argument);
  Mat4 bottom = Mat4::Identity();
  bottom(3, 0) = 0.5;
  EXPECT_THROW(CalibrationSet(p2, Mat4::Identity(), bottom), std::invalid_argument);
}

TEST(Calibration, ParsesKittiTextAndReportsMissingKey) {
  const std::string text =
      "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
      "P2: 700 0 600 45 0 700 180 0.2 0 0 1 0.003\n"
      "R0_rect: 1 0 0 0 1 0 0 0 1\n"
      "Tr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 0\n";
  const auto calib = parse_kitti_calib(text, "calib.txt");
  EXPECT_DOUBLE_EQ(calib.intrinsics().fu, 700);
  EXPECT_DOUBLE_EQ(calib.intrinsics().cv, 180);
  EXPECT_DOUBLE_EQ(calib.p2()(0, 3), 45);
  try {
    parse_kitti_calib("P2: 700 0 600 0 0 700 180 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n", "c.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("Tr_velo_to_cam"), std::string::npos);
    EXPECT_EQ(e.file(), "c.txt");
  }
  EXPECT_THROW(parse_kitti_calib("P2: 1 2 3\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n",
                                 "c.txt"),
               ParseError);
}

TEST(SparseDepth, EmptyAndZBuffer) {
  const auto calib = CalibrationSet::from_intrinsics({10, 10, 5, 5}, Mat4::Identity());
  const auto empty = render_sparse_depth({}, calib, 10, 10);
  EXPECT_EQ(empty.valid_count(), 0u);
  const std::vector<Vec3> pts{Vec3(0, 0, 5), Vec3(0, 0, 3)};
  const auto d = render_sparse_depth(pts, calib, 10, 10);
  EXPECT_EQ(d.valid_count(), 1u);
  EXPECT_DOUBLE_EQ(d.at(5, 5), 3.0);
}

TEST(SparseDepth, ValidCountMatchesDistinctPixelsAndIsOrderFree) {
  const auto calib = CalibrationSet::from_intrinsics({20, 20, 16, 12}, Mat4::Identity());
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(-1, 1);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.push_back(Vec3(U(rng), 0.7 * U(rng), 2 + U(rng)));
  std::set<std::pair<int, int>> pixels;
  std::map<std::pair<int, int>, double> nearest;
  for (const auto& p : pts) {
    const auto pr = oracle::project(p, calib.p2(), calib.r0(), calib.t_lidar_to_cam());
    const int u = static_cast<int>(std::lround(pr[0])), v = static_cast<int>(std::lround(pr[1]));
    if (u < 0 || v < 0 || u >= 32 || v >= 24) continue;
    pixels.insert({u, v});
    auto it = nearest.find({u, v});
    if (it == nearest.end() || pr[2] < it->second) nearest[{u, v}] = pr[2];
  }
  const auto d = render_sparse_depth(pts, calib, 32, 24);
  EXPECT_EQ(d.valid_count(), pixels.size());
  for (const auto& [px, depth] : nearest) EXPECT_DOUBLE_EQ(d.at(px.first, px.second), depth);
  std::shuffle(pts.begin(), pts.end(), rng);
  const auto e = render_sparse_depth(pts, calib, 32, 24);
  EXPECT_EQ(d.values, e.values);
  EXPECT_EQ(d.valid, e.valid);
}
