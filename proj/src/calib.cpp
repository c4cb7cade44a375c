#include "vpdet/calib.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/LU>

namespace vpdet {

namespace {

constexpr double kOrthoTol = 1e-6;

void check_rotation(const Mat3& r, const char* what) {
  const double err = (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(err <= kOrthoTol))
    throw std::invalid_argument(std::string(what) + " rotation block is not orthonormal");
}

}  // namespace

CalibrationSet::CalibrationSet(const Mat34& p2, const Mat4& r0, const Mat4& t_lidar_to_cam)
    : p2_(p2), r0_(r0), t_lidar_to_cam_(t_lidar_to_cam) {
  if (!p2.allFinite() || !r0.allFinite() || !t_lidar_to_cam.allFinite())
    throw std::invalid_argument("calibration contains non-finite values");
  check_rotation(r0.topLeftCorner<3, 3>(), "R0");
  check_rotation(t_lidar_to_cam.topLeftCorner<3, 3>(), "Tr_velo_to_cam");
  if (t_lidar_to_cam(3, 0) != 0.0 || t_lidar_to_cam(3, 1) != 0.0 || t_lidar_to_cam(3, 2) != 0.0 ||
      t_lidar_to_cam(3, 3) != 1.0)
    throw std::invalid_argument("Tr_velo_to_cam bottom row must be (0,0,0,1)");
  intrinsics_ = Intrinsics{p2(0, 0), p2(1, 1), p2(0, 2), p2(1, 2)};
  if (!(intrinsics_.fu > 0.0) || !(intrinsics_.fv > 0.0))
    throw std::invalid_argument("focal lengths must be positive");
  forward_ = r0_ * t_lidar_to_cam_;
  inverse_ = forward_.inverse();
}

CalibrationSet CalibrationSet::identity() {
  Mat34 p2 = Mat34::Zero();
  p2.leftCols<3>() = Mat3::Identity();
  return CalibrationSet(p2, Mat4::Identity(), Mat4::Identity());
}

CalibrationSet CalibrationSet::from_intrinsics(const Intrinsics& k, const Mat4& t_lidar_to_cam) {
  Mat34 p2 = Mat34::Zero();
  p2(0, 0) = k.fu;
  p2(1, 1) = k.fv;
  p2(0, 2) = k.cu;
  p2(1, 2) = k.cv;
  p2(2, 2) = 1.0;
  return CalibrationSet(p2, Mat4::Identity(), t_lidar_to_cam);
}

Vec3 CalibrationSet::lidar_to_cam(const Vec3& p) const {
  return forward_.topLeftCorner<3, 3>() * p + forward_.topRightCorner<3, 1>();
}

Vec3 CalibrationSet::cam_to_lidar(const Vec3& p) const {
  return inverse_.topLeftCorner<3, 3>() * p + inverse_.topRightCorner<3, 1>();
}

CalibrationSet parse_kitti_calib(const std::string& text, const std::string& source) {
  std::map<std::string, std::vector<double>> entries;
  std::map<std::string, int> line_of;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t\r") + 1);
    std::istringstream values(line.substr(colon + 1));
    std::vector<double> v;
    std::string tok;
    while (values >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(source, line_no, "invalid number '" + tok + "' in " + key);
      }
    }
    entries[key] = std::move(v);
    line_of[key] = line_no;
  }

  auto require = [&](const std::string& key, std::size_t n) -> const std::vector<double>& {
    auto it = entries.find(key);
    if (it == entries.end()) throw ParseError(source, 0, "missing calibration key '" + key + "'");
    if (it->second.size() != n)
      throw ParseError(source, line_of[key],
                       "key '" + key + "' expects " + std::to_string(n) + " values, got " +
                           std::to_string(it->second.size()));
    return it->second;
  };

  const auto& p2v = require("P2", 12);
  const auto& r0v = require("R0_rect", 9);
  const auto& trv = require("Tr_velo_to_cam", 12);

  Mat34 p2;
  Mat4 r0 = Mat4::Identity();
  Mat4 tr = Mat4::Identity();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      p2(r, c) = p2v[r * 4 + c];
      tr(r, c) = trv[r * 4 + c];
    }
    for (int c = 0; c < 3; ++c) r0(r, c) = r0v[r * 3 + c];
  }
  try {
    return CalibrationSet(p2, r0, tr);
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, 0, e.what());
  }
}

CalibrationSet read_kitti_calib(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open calibration file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_kitti_calib(ss.str(), path);
}

void write_kitti_calib(const std::string& path, const CalibrationSet& calib) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.precision(12);
  auto row = [&](const char* key, auto&& m, int rows, int cols) {
    out << key << ':';
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out << ' ' << m(r, c);
    out << '\n';
  };
  for (const char* key : {"P0", "P1"}) row(key, calib.p2(), 3, 4);
  row("P2", calib.p2(), 3, 4);
  row("P3", calib.p2(), 3, 4);
  row("R0_rect", calib.r0(), 3, 3);
  row("Tr_velo_to_cam", calib.t_lidar_to_cam(), 3, 4);
  row("Tr_imu_to_velo", Mat4::Identity(), 3, 4);
}

Projection project_lidar_to_image(const Vec3& p_lidar, const CalibrationSet& calib,
                                  std::optional<ImageBounds> bounds) {
  const Vec3 p_cam = calib.lidar_to_cam(p_lidar);
  Projection result;
  if (!(p_cam.z() > 0.0)) {
    result.status = ProjectionStatus::kBehind;
    return result;
  }
  const Eigen::Vector3d h = calib.p2() * p_cam.homogeneous();
  if (!(h.z() > 0.0)) {
    result.status = ProjectionStatus::kBehind;
    return result;
  }
  result.pixel = PixelDepth{h.x() / h.z(), h.y() / h.z(), p_cam.z()};
  if (bounds) {
    const auto& px = result.pixel;
    if (px.u < 0.0 || px.v < 0.0 || px.u > bounds->width - 1.0 || px.v > bounds->height - 1.0)
      result.status = ProjectionStatus::kOutOfFrame;
  }
  return result;
}

Vec3 back_project_pixel(double u, double v, double depth, const CalibrationSet& calib) {
  if (!(depth > 0.0)) throw std::invalid_argument("back_project_pixel: depth must be positive");
  const auto& k = calib.intrinsics();
  return Vec3(depth * (u - k.cu) / k.fu, depth * (v - k.cv) / k.fv, depth);
}

Vec3 cam_to_lidar(const Vec3& p_cam, const CalibrationSet& calib) {
  return calib.cam_to_lidar(p_cam);
}

DepthMap::DepthMap(int w, int h) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("DepthMap: dimensions must be positive");
  values.assign(static_cast<std::size_t>(w) * h, 0.0);
  valid.assign(static_cast<std::size_t>(w) * h, 0);
}

void DepthMap::set(int u, int v, double depth) {
  values[index(u, v)] = depth;
  valid[index(u, v)] = 1;
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

DepthMap render_sparse_depth(std::span<const Vec3> points, const CalibrationSet& calib, int width,
                             int height) {
  DepthMap map(width, height);
  for (const Vec3& p : points) {
    const Projection proj = project_lidar_to_image(p, calib);
    if (!proj.ok()) continue;
    const double ur = std::round(proj.pixel.u);
    const double vr = std::round(proj.pixel.v);
    if (ur < 0.0 || vr < 0.0 || ur >= width || vr >= height) continue;
    const int u = static_cast<int>(ur);
    const int v = static_cast<int>(vr);
    if (!map.is_valid(u, v) || proj.pixel.depth < map.at(u, v)) map.set(u, v, proj.pixel.depth);
  }
  return map;
}

}  // namespace vpdet
