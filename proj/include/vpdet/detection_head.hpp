#pragma once

// Box parameterization, prediction heads and the training losses.

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vpdet/common.hpp"
#include "vpdet/nn.hpp"

namespace vpdet {

struct Box7 {
  double x = 0.0, y = 0.0, z = 0.0;
  double w = 1.0, l = 1.0, h = 1.0;
  double theta = 0.0;

  Vec3 center() const { return Vec3(x, y, z); }
  std::array<double, 7> to_array() const { return {x, y, z, w, l, h, theta}; }
  static Box7 from_array(const std::array<double, 7>& a);
  /// Throws std::invalid_argument on non-positive or non-finite extents.
  void validate() const;
};

struct BoxEncoding {
  std::array<double, 3> center{};
  std::array<double, 3> log_dims{};
  std::array<double, 2> yaw{0.0, 1.0};  // (sin, cos)

  std::array<double, 8> to_array() const;
  static BoxEncoding from_array(std::span<const double> a);
};

BoxEncoding encode_box(const Box7& b);
/// theta = atan2(sin, cos) after renormalizing the yaw pair; throws
/// std::invalid_argument when both yaw components are zero.
Box7 decode_box(const BoxEncoding& e);

/// Corner i has signs sx = bit 2, sy = bit 1, sz = bit 0 (set = +):
/// center + (R(theta) (sx w/2, sy l/2), sz h/2).
std::array<Vec3, 8> box_corners(const Box7& b);

struct LossWeights {
  double vote = 1.0;
  double obj = 1.0;
  double cls = 1.0;
  double reg = 1.0;
  double corner = 3.0;

  void validate() const;
};

struct LossComponents {
  double vote = 0.0;
  double obj = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double corner = 0.0;
};

/// `empty` marks a loss over zero elements, whose value is 0.
struct LossValue {
  double value = 0.0;
  bool empty = false;
};

double smooth_l1(double x, double beta = 1.0);
double smooth_l1_grad(double x, double beta = 1.0);

/// Mean smooth-L1 over all offset coordinates. `grad` receives dL/dpred.
LossValue vote_loss(std::span<const Vec3> pred, std::span<const Vec3> target,
                    std::vector<Vec3>* grad = nullptr);

/// Mean of -alpha_t (1 - p_t)^gamma log p_t, alpha_t = alpha for positives
/// and 1 - alpha for negatives. `grad` receives dL/dlogit.
LossValue focal_objectness(std::span<const double> logits, std::span<const int> targets,
                           double alpha = 0.25, double gamma = 2.0,
                           std::vector<double>* grad = nullptr);

/// Negative log-softmax at the target class.
double classification_loss(std::span<const double> logits, int target,
                           std::vector<double>* grad = nullptr);
/// Mean over rows.
LossValue classification_loss(const std::vector<std::vector<double>>& logits,
                              std::span<const int> targets,
                              std::vector<std::vector<double>>* grad = nullptr);

/// Mean smooth-L1 over the 8 encoded components.
double regression_loss(const BoxEncoding& pred, const BoxEncoding& target,
                       std::array<double, 8>* grad = nullptr);

/// Mean absolute corner difference, minimized over pred yaw and pred yaw + pi.
/// `grad` receives dL/d(x, y, z, w, l, h, theta) of the prediction.
double corner_loss(const Box7& pred, const Box7& gt, std::array<double, 7>* grad = nullptr);

/// Weighted sum in the order vote, obj, cls, reg, corner. Throws
/// std::invalid_argument naming the first non-finite component.
double total_loss(const LossComponents& c, const LossWeights& w);

enum class ObjectClass { kCar = 0, kPedestrian = 1, kCyclist = 2 };
inline constexpr int kNumClasses = 3;
const char* class_name(ObjectClass c);
/// Accepts the KITTI type strings; returns false for any other type.
bool parse_class(const std::string& name, ObjectClass& out);

struct DetectionHeads {
  Linear cls;  // d -> 3
  Linear obj;  // d -> 1
  Linear reg;  // d -> 8 encoded box relative to the proto-center

  static DetectionHeads zeros(int d);
  static DetectionHeads random(int d, std::uint64_t seed);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    cls.visit(prefix + ".cls", f);
    obj.visit(prefix + ".obj", f);
    reg.visit(prefix + ".reg", f);
  }
};

struct HeadPrediction {
  std::array<double, kNumClasses> class_logits{};
  double objectness_logit = 0.0;
  BoxEncoding encoding;
};

HeadPrediction apply_heads(const DetectionHeads& heads, std::span<const double> feature);

/// Box whose center is `proto_center` plus the regressed offset.
Box7 decode_prediction(const HeadPrediction& p, const Vec3& proto_center);

}  // namespace vpdet
