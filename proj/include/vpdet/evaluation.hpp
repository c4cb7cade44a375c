#pragma once

// Rotated-box overlap and KITTI-style AP / AOS.

#include <array>
#include <vector>

#include "vpdet/detection_head.hpp"
#include "vpdet/kitti_io.hpp"

namespace vpdet {

/// Footprint polygon (counter-clockwise) of a box seen from above.
std::array<Vec3, 4> bev_footprint(const Box7& b);
double bev_intersection_area(const Box7& a, const Box7& b);
double bev_iou(const Box7& a, const Box7& b);
double iou_3d(const Box7& a, const Box7& b);
/// Axis-aligned image boxes (left, top, right, bottom).
double iou_2d(const std::array<double, 4>& a, const std::array<double, 4>& b);

enum class Metric { k2d, kBev, k3d };

struct EvalResult {
  // Percentages per difficulty {Easy, Moderate, Hard}.
  std::array<double, 3> ap_3d{};
  std::array<double, 3> ap_bev{};
  std::array<double, 3> ap_2d{};
  std::array<double, 3> aos{};
};

/// A detection's outcome after matching, in global score order.
struct RankedMatch {
  double score = 0.0;
  bool true_positive = false;
  double similarity = 0.0;  // (1 + cos(d_alpha)) / 2 for true positives
};

struct ApResult {
  double ap = 0.0;
  double aos = 0.0;
};

/// 40-point interpolated AP over matches sorted by descending score. Zero
/// when n_gt is zero.
ApResult average_precision(const std::vector<RankedMatch>& ranked, int n_gt);

/// Greedy matching in descending score over all frames; each detection takes
/// the unmatched GT with the highest overlap >= iou_thresh. GTs of a
/// neighboring class or outside the difficulty bucket absorb detections
/// without counting; detections below the bucket's minimum 2D height are
/// dropped.
ApResult evaluate_metric(const std::vector<std::vector<KittiLabel>>& dets,
                         const std::vector<std::vector<KittiLabel>>& gts, ObjectClass cls,
                         Difficulty difficulty, Metric metric, double iou_thresh);

EvalResult evaluate(const std::vector<std::vector<KittiLabel>>& dets,
                    const std::vector<std::vector<KittiLabel>>& gts, ObjectClass cls,
                    double iou_thresh);

}  // namespace vpdet
