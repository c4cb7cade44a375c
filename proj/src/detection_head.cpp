#include "vpdet/detection_head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vpdet {

Box7 Box7::from_array(const std::array<double, 7>& a) {
  return Box7{a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
}

void Box7::validate() const {
  for (double v : to_array())
    if (!std::isfinite(v)) throw std::invalid_argument("box: non-finite parameter");
  if (!(w > 0.0 && l > 0.0 && h > 0.0)) throw std::invalid_argument("box: extents must be positive");
}

std::array<double, 8> BoxEncoding::to_array() const {
  return {center[0], center[1], center[2], log_dims[0], log_dims[1], log_dims[2], yaw[0], yaw[1]};
}

BoxEncoding BoxEncoding::from_array(std::span<const double> a) {
  if (a.size() != 8) throw std::invalid_argument("box encoding: expected 8 values");
  return BoxEncoding{{a[0], a[1], a[2]}, {a[3], a[4], a[5]}, {a[6], a[7]}};
}

BoxEncoding encode_box(const Box7& b) {
  b.validate();
  return BoxEncoding{{b.x, b.y, b.z},
                     {std::log(b.w), std::log(b.l), std::log(b.h)},
                     {std::sin(b.theta), std::cos(b.theta)}};
}

Box7 decode_box(const BoxEncoding& e) {
  const double norm = std::hypot(e.yaw[0], e.yaw[1]);
  if (norm == 0.0) throw std::invalid_argument("decode_box: yaw pair is (0, 0)");
  Box7 b{e.center[0],
         e.center[1],
         e.center[2],
         std::exp(e.log_dims[0]),
         std::exp(e.log_dims[1]),
         std::exp(e.log_dims[2]),
         wrap_angle(std::atan2(e.yaw[0] / norm, e.yaw[1] / norm))};
  return b;
}

namespace {

struct CornerSigns {
  double sx, sy, sz;
};

CornerSigns signs(int i) {
  return {(i & 4) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 1) ? 1.0 : -1.0};
}

std::array<Vec3, 8> corners_with_yaw(const Box7& b, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) {
    const auto [sx, sy, sz] = signs(i);
    const double ox = sx * b.w / 2.0;
    const double oy = sy * b.l / 2.0;
    out[i] = Vec3(b.x + c * ox - s * oy, b.y + s * ox + c * oy, b.z + sz * b.h / 2.0);
  }
  return out;
}

}  // namespace

std::array<Vec3, 8> box_corners(const Box7& b) { return corners_with_yaw(b, b.theta); }

void LossWeights::validate() const {
  for (double v : {vote, obj, cls, reg, corner})
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be nonnegative");
}

double smooth_l1(double x, double beta) {
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  if (std::abs(x) < beta) return x / beta;
  return x > 0.0 ? 1.0 : -1.0;
}

LossValue vote_loss(std::span<const Vec3> pred, std::span<const Vec3> target,
                    std::vector<Vec3>* grad) {
  if (pred.size() != target.size()) throw std::invalid_argument("vote_loss: count mismatch");
  if (grad) grad->assign(pred.size(), Vec3::Zero());
  if (pred.empty()) return {0.0, true};
  const double n = 3.0 * static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const double e = pred[i][a] - target[i][a];
      sum += smooth_l1(e);
      if (grad) (*grad)[i][a] = smooth_l1_grad(e) / n;
    }
  }
  return {sum / n, false};
}

namespace {

// log(sigmoid(x)) without overflow.
double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace

LossValue focal_objectness(std::span<const double> logits, std::span<const int> targets,
                           double alpha, double gamma, std::vector<double>* grad) {
  if (logits.size() != targets.size()) throw std::invalid_argument("focal: length mismatch");
  for (int t : targets)
    if (t != 0 && t != 1) throw std::invalid_argument("focal: targets must be 0 or 1");
  if (grad) grad->assign(logits.size(), 0.0);
  if (logits.empty()) return {0.0, true};
  const double n = static_cast<double>(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    // Negatives are positives of the flipped logit.
    const double sign = targets[i] == 1 ? 1.0 : -1.0;
    const double a = targets[i] == 1 ? alpha : 1.0 - alpha;
    const double z = sign * logits[i];
    const double pt = sigmoid(z);
    const double log_pt = log_sigmoid(z);
    const double q = 1.0 - pt;
    sum += -a * std::pow(q, gamma) * log_pt;
    if (grad) {
      const double dz = a * std::pow(q, gamma) * (gamma * pt * log_pt - q);
      (*grad)[i] = sign * dz / n;
    }
  }
  return {sum / n, false};
}

double classification_loss(std::span<const double> logits, int target, std::vector<double>* grad) {
  if (target < 0 || target >= static_cast<int>(logits.size()))
    throw std::invalid_argument("classification_loss: target out of range");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - peak);
  const double lse = peak + std::log(total);
  if (grad) {
    grad->assign(logits.size(), 0.0);
    for (std::size_t c = 0; c < logits.size(); ++c) (*grad)[c] = std::exp(logits[c] - lse);
    (*grad)[target] -= 1.0;
  }
  return lse - logits[target];
}

LossValue classification_loss(const std::vector<std::vector<double>>& logits,
                              std::span<const int> targets,
                              std::vector<std::vector<double>>* grad) {
  if (logits.size() != targets.size()) throw std::invalid_argument("classification_loss: length mismatch");
  if (grad) grad->assign(logits.size(), {});
  if (logits.empty()) return {0.0, true};
  const double n = static_cast<double>(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    std::vector<double> g;
    sum += classification_loss(logits[i], targets[i], grad ? &g : nullptr);
    if (grad) {
      for (double& v : g) v /= n;
      (*grad)[i] = std::move(g);
    }
  }
  return {sum / n, false};
}

double regression_loss(const BoxEncoding& pred, const BoxEncoding& target, std::array<double, 8>* grad) {
  const auto p = pred.to_array();
  const auto t = target.to_array();
  double sum = 0.0;
  for (int i = 0; i < 8; ++i) {
    sum += smooth_l1(p[i] - t[i]);
    if (grad) (*grad)[i] = smooth_l1_grad(p[i] - t[i]) / 8.0;
  }
  return sum / 8.0;
}

namespace {

double corner_l1(const Box7& pred, double yaw, const std::array<Vec3, 8>& gt,
                 std::array<double, 7>* grad) {
  const auto pc = corners_with_yaw(pred, yaw);
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  double sum = 0.0;
  if (grad) grad->fill(0.0);
  for (int i = 0; i < 8; ++i) {
    const auto [sx, sy, sz] = signs(i);
    Vec3 sg;
    for (int a = 0; a < 3; ++a) {
      const double e = pc[i][a] - gt[i][a];
      sum += std::abs(e);
      sg[a] = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
    }
    if (!grad) continue;
    const double ox = sx * pred.w / 2.0;
    const double oy = sy * pred.l / 2.0;
    auto& g = *grad;
    g[0] += sg[0];
    g[1] += sg[1];
    g[2] += sg[2];
    g[3] += sg[0] * c * sx / 2.0 + sg[1] * s * sx / 2.0;
    g[4] += -sg[0] * s * sy / 2.0 + sg[1] * c * sy / 2.0;
    g[5] += sg[2] * sz / 2.0;
    g[6] += sg[0] * (-s * ox - c * oy) + sg[1] * (c * ox - s * oy);
  }
  if (grad)
    for (double& v : *grad) v /= 24.0;
  return sum / 24.0;
}

}  // namespace

double corner_loss(const Box7& pred, const Box7& gt, std::array<double, 7>* grad) {
  pred.validate();
  gt.validate();
  const auto gc = box_corners(gt);
  std::array<double, 7> g_direct{};
  std::array<double, 7> g_flip{};
  const double direct = corner_l1(pred, pred.theta, gc, grad ? &g_direct : nullptr);
  const double flipped = corner_l1(pred, pred.theta + kPi, gc, grad ? &g_flip : nullptr);
  if (flipped < direct) {
    if (grad) *grad = g_flip;
    return flipped;
  }
  if (grad) *grad = g_direct;
  return direct;
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  w.validate();
  const std::pair<const char*, double> parts[] = {
      {"vote", c.vote}, {"obj", c.obj}, {"cls", c.cls}, {"reg", c.reg}, {"corner", c.corner}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string("total_loss: non-finite ") + name + " loss");
  double sum = 0.0;
  sum += w.vote * c.vote;
  sum += w.obj * c.obj;
  sum += w.cls * c.cls;
  sum += w.reg * c.reg;
  sum += w.corner * c.corner;
  return sum;
}

const char* class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::kCar: return "Car";
    case ObjectClass::kPedestrian: return "Pedestrian";
    case ObjectClass::kCyclist: return "Cyclist";
  }
  return "DontCare";
}

bool parse_class(const std::string& name, ObjectClass& out) {
  if (name == "Car") out = ObjectClass::kCar;
  else if (name == "Pedestrian") out = ObjectClass::kPedestrian;
  else if (name == "Cyclist") out = ObjectClass::kCyclist;
  else return false;
  return true;
}

DetectionHeads DetectionHeads::zeros(int d) {
  return DetectionHeads{Linear::zeros(d, kNumClasses), Linear::zeros(d, 1), Linear::zeros(d, 8)};
}

DetectionHeads DetectionHeads::random(int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DetectionHeads h;
  h.cls = Linear::random(d, kNumClasses, rng);
  h.obj = Linear::random(d, 1, rng);
  h.reg = Linear::random(d, 8, rng);
  return h;
}

HeadPrediction apply_heads(const DetectionHeads& heads, std::span<const double> feature) {
  HeadPrediction p;
  const auto cls = heads.cls(feature);
  std::copy(cls.begin(), cls.end(), p.class_logits.begin());
  p.objectness_logit = heads.obj(feature)[0];
  p.encoding = BoxEncoding::from_array(heads.reg(feature));
  return p;
}

Box7 decode_prediction(const HeadPrediction& p, const Vec3& proto_center) {
  BoxEncoding e = p.encoding;
  for (int a = 0; a < 3; ++a) e.center[a] += proto_center[a];
  return decode_box(e);
}

}  // namespace vpdet
