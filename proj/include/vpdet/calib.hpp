#pragma once

// LiDAR <-> rectified camera <-> pixel transforms and sparse depth rendering.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vpdet/common.hpp"

namespace vpdet {

using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat4 = Eigen::Matrix4d;
using Mat3 = Eigen::Matrix3d;

struct Intrinsics {
  double fu = 0.0;
  double fv = 0.0;
  double cu = 0.0;
  double cv = 0.0;
};

/// P2, R0 (homogeneous 4x4) and the rigid LiDAR->camera transform.
///
/// Construction validates that both rotation blocks are orthonormal within
/// 1e-6, that the focal lengths are positive and that the rigid transform has
/// an exact (0,0,0,1) bottom row.
class CalibrationSet {
 public:
  CalibrationSet(const Mat34& p2, const Mat4& r0, const Mat4& t_lidar_to_cam);

  static CalibrationSet identity();
  /// P2 = [K | 0] with the given intrinsics, R0 = I and the given extrinsics.
  static CalibrationSet from_intrinsics(const Intrinsics& k, const Mat4& t_lidar_to_cam);

  const Mat34& p2() const { return p2_; }
  const Mat4& r0() const { return r0_; }
  const Mat4& t_lidar_to_cam() const { return t_lidar_to_cam_; }
  const Intrinsics& intrinsics() const { return intrinsics_; }

  /// Rectified camera-frame point, R0 * T * p.
  Vec3 lidar_to_cam(const Vec3& p_lidar) const;
  /// Inverse of lidar_to_cam, T^-1 * R0^-1 * p.
  Vec3 cam_to_lidar(const Vec3& p_cam) const;

 private:
  Mat34 p2_;
  Mat4 r0_;
  Mat4 t_lidar_to_cam_;
  Mat4 forward_;  // R0 * T
  Mat4 inverse_;  // T^-1 * R0^-1
  Intrinsics intrinsics_;
};

/// Parses a KITTI calibration file (P2, R0_rect, Tr_velo_to_cam lines).
CalibrationSet read_kitti_calib(const std::string& path);
CalibrationSet parse_kitti_calib(const std::string& text, const std::string& source);
void write_kitti_calib(const std::string& path, const CalibrationSet& calib);

struct PixelDepth {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

enum class ProjectionStatus { kOk, kBehind, kOutOfFrame };

struct Projection {
  ProjectionStatus status = ProjectionStatus::kOk;
  PixelDepth pixel;

  bool ok() const { return status == ProjectionStatus::kOk; }
};

/// Image bounds for the out-of-frame test: 0 <= u <= width-1, 0 <= v <= height-1.
struct ImageBounds {
  int width = 0;
  int height = 0;
};

Projection project_lidar_to_image(const Vec3& p_lidar, const CalibrationSet& calib,
                                  std::optional<ImageBounds> bounds = std::nullopt);

/// Pinhole inverse model; returns the camera-frame point. Throws
/// std::invalid_argument for depth <= 0.
Vec3 back_project_pixel(double u, double v, double depth, const CalibrationSet& calib);

Vec3 cam_to_lidar(const Vec3& p_cam, const CalibrationSet& calib);

struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major, meters
  std::vector<unsigned char> valid;

  DepthMap() = default;
  DepthMap(int w, int h);

  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  bool is_valid(int u, int v) const { return valid[index(u, v)] != 0; }
  double at(int u, int v) const { return values[index(u, v)]; }
  void set(int u, int v, double depth);
  std::size_t valid_count() const;
};

/// Projects points to their nearest pixel; the minimum depth wins on
/// collisions. Behind-camera and out-of-frame points are skipped.
DepthMap render_sparse_depth(std::span<const Vec3> points, const CalibrationSet& calib, int width,
                             int height);

}  // namespace vpdet
