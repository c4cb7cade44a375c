#pragma once

// KITTI-layout frame ingestion: labels, PNG images, dense depth and the
// difficulty / min-points filters.

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vpdet/calib.hpp"
#include "vpdet/detection_head.hpp"
#include "vpdet/point.hpp"
#include "vpdet/point_fusion.hpp"

namespace vpdet {

/// One line of a KITTI label file. Location is the bottom center in the
/// rectified camera frame; `score` is present on detection files only.
struct KittiLabel {
  std::string type;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  std::array<double, 4> bbox{};  // left, top, right, bottom
  double h = 0.0, w = 0.0, l = 0.0;
  Vec3 location = Vec3::Zero();
  double ry = 0.0;
  std::optional<double> score;

  double bbox_height() const { return bbox[3] - bbox[1]; }
};

std::vector<KittiLabel> parse_kitti_labels(const std::string& text, const std::string& source);
std::vector<KittiLabel> read_kitti_labels(const std::string& path);
std::string format_kitti_label(const KittiLabel& label);
void write_kitti_labels(const std::string& path, const std::vector<KittiLabel>& labels);

/// LiDAR-frame box of a label: center = T^-1 R0^-1 (location - (0, h/2, 0)),
/// theta = wrap(-ry - pi).
Box7 label_to_lidar_box(const KittiLabel& label, const CalibrationSet& calib);

/// Inverse of label_to_lidar_box. The 2D box is the projected corner hull
/// clipped to `bounds`; truncation and occlusion are zero.
KittiLabel lidar_box_to_label(const Box7& box, const std::string& type, const CalibrationSet& calib,
                              const ImageBounds& bounds);

/// Box in the camera-derived evaluation frame (x_c, z_c, -y_c + h/2) with
/// theta = wrap(-ry - pi/2). Needs no calibration.
Box7 label_to_eval_box(const KittiLabel& label);

enum class Difficulty { kEasy = 0, kModerate = 1, kHard = 2 };

struct DifficultyCut {
  double min_height;
  int max_occlusion;
  double max_truncation;
};

const DifficultyCut& difficulty_cut(Difficulty d);
bool passes_difficulty(const KittiLabel& label, Difficulty d);
/// Easiest bucket the label qualifies for, or nullopt.
std::optional<Difficulty> label_difficulty(const KittiLabel& label);

struct ObjectLabel {
  ObjectClass cls = ObjectClass::kCar;
  Box7 box;  // LiDAR frame
  double truncation = 0.0;
  int occlusion = 0;
  std::array<double, 4> bbox{};
  std::optional<Difficulty> difficulty;
};

struct FrameBundle {
  std::string id;
  std::vector<LidarPoint> cloud;
  RgbImage image;
  DepthMap dense_depth;
  CalibrationSet calib = CalibrationSet::identity();
  std::vector<ObjectLabel> labels;
  /// Accumulated augmentation of LiDAR-frame geometry. Labels already carry
  /// it; `cloud` keeps sensor coordinates so that painting stays exact, and
  /// real and virtual points are mapped through it when they are encoded.
  Mat3 lidar_transform = Mat3::Identity();

  ImageBounds image_bounds() const { return {image.width, image.height}; }
};

struct FramePaths {
  std::string root;
  std::string id;

  std::string velodyne() const;
  std::string image() const;
  std::string calib() const;
  std::string label() const;
  std::string depth_bin() const;
  std::string depth_png() const;
};

struct LoadOptions {
  /// Keep only labels in these buckets; empty keeps every label.
  std::set<Difficulty> difficulties;
  /// Drop labels with fewer LiDAR points inside the box than the class minimum.
  std::map<ObjectClass, int> min_points;
  bool require_labels = false;
};

/// Lists frame ids (velodyne file stems) under root, sorted.
std::vector<std::string> list_frames(const std::string& root);

FrameBundle load_frame(const FramePaths& paths, const LoadOptions& options = {});
void write_frame(const FrameBundle& frame, const std::string& root);

/// LiDAR points inside the box (inclusive bounds).
int count_points_in_box(const std::vector<LidarPoint>& cloud, const Box7& box);
bool point_in_box(const Vec3& p, const Box7& box);

RgbImage read_png_rgb(const std::string& path);
void write_png_rgb(const std::string& path, const RgbImage& image);

/// 16-bit PNG, depth = value / 256, zero marks an invalid pixel.
DepthMap read_depth_png(const std::string& path);
void write_depth_png(const std::string& path, const DepthMap& depth);
/// int32 width, int32 height, then float32 depths row-major; <= 0 is invalid.
DepthMap read_depth_bin(const std::string& path);
void write_depth_bin(const std::string& path, const DepthMap& depth);

/// Binary PGM (P5, maxval 255), byte = floor(v * 255 + 0.5) of v clamped to [0, 1].
void write_pgm(const std::string& path, int width, int height, const std::vector<double>& values);

}  // namespace vpdet
