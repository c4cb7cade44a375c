#pragma once

// Flat key=value pipeline configuration. See README for the key reference.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "vpdet/detection_head.hpp"
#include "vpdet/kitti_io.hpp"
#include "vpdet/query_init.hpp"
#include "vpdet/transformer_head.hpp"
#include "vpdet/virtual_points.hpp"

namespace vpdet {

enum class FusionMode { kEarly, kLate, kGated };

const char* fusion_name(FusionMode m);
/// Accepts early, late (or late_1x1) and gated.
std::optional<FusionMode> parse_fusion(const std::string& s);

struct PointCloudRange {
  double x_min = 0.0, y_min = -40.0, z_min = -3.0;
  double x_max = 70.4, y_max = 40.0, z_max = 1.0;

  bool contains(const Vec3& p) const;
};

struct AugmentConfig {
  bool flip = true;
  bool rotation = true;
  bool scale = true;
  double max_rotation = kPi / 4.0;  // radians
  double max_scale = 0.1;           // relative
};

struct PipelineConfig {
  FusionMode fusion = FusionMode::kEarly;
  double voxel_size = 0.05;
  PointCloudRange range;
  double depth_max_range = 100.0;

  RangeSampleConfig sampling = RangeSampleConfig::inference();
  double dropout_radius = 40.0;
  double dropout_prob = 0.0;

  int nms_min_dist = 2;
  double nms_score_thresh = 0.1;
  FpsConfig fps;
  double z_anchor = -1.0;

  AttentionConfig attention;
  int range_azimuth_bins = 512;
  int range_inclination_bins = 64;

  double det_score_thresh = 0.3;
  double det_nms_iou = 0.1;

  AugmentConfig augment;
  LoadOptions load;

  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  LossWeights loss;

  std::uint64_t seed = 0;
  std::optional<std::uint64_t> voxel_seed, sample_seed, fps_seed, augment_seed;

  /// Explicit per-stage seed, or one derived from `seed`.
  std::uint64_t stage_seed(const std::optional<std::uint64_t>& explicit_seed, std::uint64_t salt) const;
  std::uint64_t voxel_seed_value() const { return stage_seed(voxel_seed, 1); }
  std::uint64_t sample_seed_value() const { return stage_seed(sample_seed, 2); }
  std::uint64_t fps_seed_value() const { return stage_seed(fps_seed, 3); }
  std::uint64_t augment_seed_value() const { return stage_seed(augment_seed, 4); }

  /// Heatmap placement implied by the range and voxel size.
  BevShape bev_shape() const;

  /// Throws std::invalid_argument naming the offending setting.
  void validate() const;
};

/// Unknown keys, malformed values and failed validation raise ParseError
/// with the source and line.
PipelineConfig parse_config(const std::string& text, const std::string& source,
                            PipelineConfig base = {});
PipelineConfig load_config(const std::string& path);
/// Applies one key=value setting.
void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value);

}  // namespace vpdet
