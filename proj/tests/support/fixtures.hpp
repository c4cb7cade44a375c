#pragma once

// Scenes and label sets shared by the unit tests and the acceptance runner.

#include <string>
#include <vector>

#include "vpdet/config.hpp"
#include "vpdet/kitti_io.hpp"
#include "vpdet/synth.hpp"

namespace fixture {

inline const vpdet::Vec3 kBoxCenter(10.2, 0.2, -1.13);
inline const vpdet::Vec3 kBoxDims(1.2, 1.2, 1.2);

/// One 1.2 m cube resting on the ground 10 m ahead.
inline vpdet::SynthSpec single_box_spec() {
  vpdet::SynthSpec s;
  s.id = "000000";
  s.seed = 7;
  s.density_near = 20.0;
  s.density_far = 2.0;
  s.x_max = 30.0;
  s.y_half = 12.0;
  vpdet::SynthObject obj;
  obj.cls = vpdet::ObjectClass::kCar;
  obj.box = vpdet::Box7{kBoxCenter.x(), kBoxCenter.y(), kBoxCenter.z(),
                        kBoxDims.x(),   kBoxDims.y(),   kBoxDims.z(), 0.0};
  s.objects.push_back(obj);
  return s;
}

/// Small range so a full detect run stays well under a second.
inline vpdet::PipelineConfig small_config(vpdet::FusionMode mode = vpdet::FusionMode::kEarly) {
  vpdet::PipelineConfig cfg;
  cfg.fusion = mode;
  cfg.range.x_min = 0.0;
  cfg.range.x_max = 30.0;
  cfg.range.y_min = -8.0;
  cfg.range.y_max = 8.0;
  cfg.range.z_min = -3.0;
  cfg.range.z_max = 1.0;
  return cfg;
}

inline const char* kSmallConfigText =
    "x_min = 0\n"
    "x_max = 30\n"
    "y_min = -8\n"
    "y_max = 8\n"
    "z_min = -3\n"
    "z_max = 1\n";

inline const char* kSingleBoxSpecText =
    "id = 000000\n"
    "seed = 7\n"
    "density_near = 20\n"
    "density_far = 2\n"
    "x_max = 30\n"
    "y_half = 12\n"
    "object = Car 10.2 0.2 -1.13 1.2 1.2 1.2 0\n";

/// Easy-bucket Car label: 80 px tall box, no occlusion or truncation.
inline vpdet::KittiLabel car(double x, double z, double left, double ry = 0.0) {
  vpdet::KittiLabel l;
  l.type = "Car";
  l.alpha = 0.0;
  l.bbox = {left, 100.0, left + 60.0, 180.0};
  l.h = 1.5;
  l.w = 1.6;
  l.l = 3.9;
  l.location = vpdet::Vec3(x, 1.6, z);
  l.ry = ry;
  return l;
}

inline vpdet::KittiLabel scored(vpdet::KittiLabel l, double score) {
  l.score = score;
  return l;
}

struct Benchmark {
  std::vector<std::vector<vpdet::KittiLabel>> dets;
  std::vector<std::vector<vpdet::KittiLabel>> gts;
};

/// Three frames, four cars. In score order the detections are TP, FP, TP,
/// TP and one car is never detected. The third detection's alpha is off by
/// 90 degrees.
///
///   rank  score  outcome  recall  precision  orientation precision
///   1     0.9    TP       1/4     1          1
///   2     0.8    FP       1/4     1/2        1/2
///   3     0.7    TP       2/4     2/3        1.5/3
///   4     0.6    TP       3/4     3/4        2.5/4
///
/// Forty recall points: ten at r <= 1/4 take max precision 1, twenty in
/// (1/4, 3/4] take 3/4, the last ten take 0, so AP = (10 + 15) / 40 = 62.5%.
/// AOS likewise interpolates to 1 and 0.625: (10 + 12.5) / 40 = 56.25%.
inline Benchmark micro_benchmark() {
  Benchmark b;
  b.gts = {{car(0, 10, 100)}, {car(3, 20, 300)}, {car(-2, 15, 500), car(5, 40, 700)}};
  vpdet::KittiLabel off = scored(car(-2, 15, 500), 0.7);
  off.alpha = vpdet::kPi / 2;
  b.dets = {{scored(car(0, 10, 100), 0.9)},
            {scored(car(-8, 30, 900), 0.8), scored(car(3, 20, 300), 0.6)},
            {off}};
  return b;
}

inline constexpr double kMicroBenchmarkAp = 62.5;
inline constexpr double kMicroBenchmarkAos = 56.25;

}  // namespace fixture
