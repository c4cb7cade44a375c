#pragma once

// Deterministic synthetic frames: boxes on a ground plane seen by a LiDAR at
// the origin and a small pinhole camera sharing its center.

#include <cstdint>
#include <string>
#include <vector>

#include "vpdet/kitti_io.hpp"

namespace vpdet {

struct SynthObject {
  ObjectClass cls = ObjectClass::kCar;
  Box7 box;  // LiDAR frame, center
};

struct SynthSpec {
  std::string id = "000000";
  std::vector<SynthObject> objects;
  double density_near = 20.0;  // points per square meter at range 0
  double density_far = 2.0;    // at max_range
  double noise = 0.0;          // gaussian sigma on every coordinate, meters
  double max_range = 100.0;
  double x_max = 40.0;
  double y_half = 16.0;
  double ground_z = -1.73;
  std::uint64_t seed = 0;

  void validate() const;
  double density_at(double range) const;
};

/// Key=value text: id, seed, density_near, density_far, noise, max_range,
/// x_max, y_half, ground_z and repeated `object = Class x y z w l h theta`.
SynthSpec parse_synth_spec(const std::string& text, const std::string& source);
SynthSpec read_synth_spec(const std::string& path);

/// f = 100 px, principal point (80, 24), 160 x 48 image, camera looking
/// along +x of the LiDAR frame.
CalibrationSet synth_calibration();
inline constexpr int kSynthWidth = 160;
inline constexpr int kSynthHeight = 48;

/// Ground points on 1 m cells with range-decaying density (cells under a box
/// are skipped) plus points on every face of each box except the bottom. The
/// dense depth is the exact ray-cast of the same geometry, valid up to
/// max_range; the image is red on boxes and gray on the ground.
FrameBundle synth_scene(const SynthSpec& spec);

}  // namespace vpdet
