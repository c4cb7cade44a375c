#include "vpdet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vpdet {

std::array<Vec3, 4> bev_footprint(const Box7& b) {
  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  const double hw = b.w / 2.0;
  const double hl = b.l / 2.0;
  const double local[4][2] = {{-hw, -hl}, {hw, -hl}, {hw, hl}, {-hw, hl}};
  std::array<Vec3, 4> out;
  for (int i = 0; i < 4; ++i)
    out[i] = Vec3(b.x + c * local[i][0] - s * local[i][1], b.y + s * local[i][0] + c * local[i][1], 0.0);
  return out;
}

namespace {

using Poly = std::vector<Eigen::Vector2d>;

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

double polygon_area(const Poly& p) {
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) a += cross(p[i], p[(i + 1) % p.size()]);
  return 0.5 * a;
}

// Sutherland-Hodgman clip of `subject` by the convex CCW polygon `clip`.
Poly clip_polygon(Poly subject, const Poly& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Eigen::Vector2d a = clip[e];
    const Eigen::Vector2d b = clip[(e + 1) % clip.size()];
    auto side = [&](const Eigen::Vector2d& p) { return cross(b - a, p - a); };
    Poly out;
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Eigen::Vector2d& cur = subject[i];
      const Eigen::Vector2d& nxt = subject[(i + 1) % subject.size()];
      const double sc = side(cur);
      const double sn = side(nxt);
      if (sc >= 0.0) out.push_back(cur);
      if ((sc >= 0.0) != (sn >= 0.0)) {
        const double t = sc / (sc - sn);
        out.push_back(cur + t * (nxt - cur));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

Poly to_poly(const Box7& b) {
  Poly p;
  for (const Vec3& v : bev_footprint(b)) p.emplace_back(v.x(), v.y());
  return p;
}

}  // namespace

double bev_intersection_area(const Box7& a, const Box7& b) {
  const Poly inter = clip_polygon(to_poly(a), to_poly(b));
  if (inter.size() < 3) return 0.0;
  return std::max(0.0, polygon_area(inter));
}

double bev_iou(const Box7& a, const Box7& b) {
  const double inter = bev_intersection_area(a, b);
  const double uni = a.w * a.l + b.w * b.l - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou_3d(const Box7& a, const Box7& b) {
  const double z_overlap = std::max(
      0.0, std::min(a.z + a.h / 2.0, b.z + b.h / 2.0) - std::max(a.z - a.h / 2.0, b.z - b.h / 2.0));
  const double inter = bev_intersection_area(a, b) * z_overlap;
  const double uni = a.w * a.l * a.h + b.w * b.l * b.h - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou_2d(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  const double iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = iw * ih;
  const double uni = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

ApResult average_precision(const std::vector<RankedMatch>& ranked, int n_gt) {
  ApResult r;
  if (n_gt <= 0) return r;
  std::vector<double> recall, precision, orient;
  int tp = 0;
  double sim = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].true_positive) {
      ++tp;
      sim += ranked[i].similarity;
    }
    const double n = static_cast<double>(i + 1);
    recall.push_back(static_cast<double>(tp) / n_gt);
    precision.push_back(tp / n);
    orient.push_back(sim / n);
  }
  // Suffix maxima give the interpolated curves.
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
    orient[i - 1] = std::max(orient[i - 1], orient[i]);
  }
  constexpr int kPoints = 40;
  std::size_t j = 0;
  for (int k = 1; k <= kPoints; ++k) {
    const double target = static_cast<double>(k) / kPoints;
    while (j < recall.size() && recall[j] < target - 1e-12) ++j;
    if (j == recall.size()) break;
    r.ap += precision[j];
    r.aos += orient[j];
  }
  r.ap *= 100.0 / kPoints;
  r.aos *= 100.0 / kPoints;
  return r;
}

namespace {

bool is_neighbor_class(const std::string& type, ObjectClass cls) {
  return (cls == ObjectClass::kCar && type == "Van") ||
         (cls == ObjectClass::kPedestrian && type == "Person_sitting");
}

double overlap(const KittiLabel& a, const KittiLabel& b, Metric metric) {
  switch (metric) {
    case Metric::k2d: return iou_2d(a.bbox, b.bbox);
    case Metric::kBev: return bev_iou(label_to_eval_box(a), label_to_eval_box(b));
    case Metric::k3d: return iou_3d(label_to_eval_box(a), label_to_eval_box(b));
  }
  return 0.0;
}

}  // namespace

ApResult evaluate_metric(const std::vector<std::vector<KittiLabel>>& dets,
                         const std::vector<std::vector<KittiLabel>>& gts, ObjectClass cls,
                         Difficulty difficulty, Metric metric, double iou_thresh) {
  if (dets.size() != gts.size()) throw std::invalid_argument("evaluate: frame counts differ");
  const std::string name = class_name(cls);
  const double min_height = difficulty_cut(difficulty).min_height;

  // GT state per frame: 1 = counted, 0 = absorbs without counting.
  std::vector<std::vector<int>> gt_kind(gts.size());
  std::vector<std::vector<int>> gt_index(gts.size());
  int n_gt = 0;
  for (std::size_t f = 0; f < gts.size(); ++f) {
    for (std::size_t g = 0; g < gts[f].size(); ++g) {
      const KittiLabel& lab = gts[f][g];
      if (lab.type == name) {
        const bool counted = passes_difficulty(lab, difficulty);
        gt_kind[f].push_back(counted ? 1 : 0);
        n_gt += counted ? 1 : 0;
      } else if (is_neighbor_class(lab.type, cls)) {
        gt_kind[f].push_back(0);
      } else {
        continue;
      }
      gt_index[f].push_back(static_cast<int>(g));
    }
  }

  struct Candidate {
    double score;
    std::size_t frame;
    std::size_t det;
  };
  std::vector<Candidate> order;
  for (std::size_t f = 0; f < dets.size(); ++f)
    for (std::size_t d = 0; d < dets[f].size(); ++d) {
      const KittiLabel& det = dets[f][d];
      if (det.type != name || det.bbox_height() < min_height) continue;
      order.push_back({det.score.value_or(0.0), f, d});
    }
  std::stable_sort(order.begin(), order.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

  std::vector<std::vector<unsigned char>> taken(gts.size());
  for (std::size_t f = 0; f < gts.size(); ++f) taken[f].assign(gt_index[f].size(), 0);

  std::vector<RankedMatch> ranked;
  for (const Candidate& c : order) {
    const KittiLabel& det = dets[c.frame][c.det];
    int best = -1;
    double best_iou = -1.0;
    // Counted GTs take precedence over absorbing ones.
    for (int pass = 1; pass >= 0 && best < 0; --pass) {
      for (std::size_t g = 0; g < gt_index[c.frame].size(); ++g) {
        if (taken[c.frame][g] || gt_kind[c.frame][g] != pass) continue;
        const double iou = overlap(det, gts[c.frame][gt_index[c.frame][g]], metric);
        if (iou >= iou_thresh - 1e-9 && iou > best_iou) {
          best_iou = iou;
          best = static_cast<int>(g);
        }
      }
    }
    if (best < 0) {
      ranked.push_back({c.score, false, 0.0});
      continue;
    }
    taken[c.frame][best] = 1;
    if (gt_kind[c.frame][best] == 0) continue;
    const KittiLabel& gt = gts[c.frame][gt_index[c.frame][best]];
    ranked.push_back({c.score, true, (1.0 + std::cos(det.alpha - gt.alpha)) / 2.0});
  }
  return average_precision(ranked, n_gt);
}

EvalResult evaluate(const std::vector<std::vector<KittiLabel>>& dets,
                    const std::vector<std::vector<KittiLabel>>& gts, ObjectClass cls,
                    double iou_thresh) {
  EvalResult r;
  for (int d = 0; d < 3; ++d) {
    const auto diff = static_cast<Difficulty>(d);
    r.ap_3d[d] = evaluate_metric(dets, gts, cls, diff, Metric::k3d, iou_thresh).ap;
    r.ap_bev[d] = evaluate_metric(dets, gts, cls, diff, Metric::kBev, iou_thresh).ap;
    const ApResult two_d = evaluate_metric(dets, gts, cls, diff, Metric::k2d, iou_thresh);
    r.ap_2d[d] = two_d.ap;
    r.aos[d] = two_d.aos;
  }
  return r;
}

}  // namespace vpdet
