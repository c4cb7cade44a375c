#include "vpdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace vpdet {

void SynthSpec::validate() const {
  if (!(density_near >= 0.0) || !(density_far >= 0.0))
    throw std::invalid_argument("synth: densities must be nonnegative");
  if (!(noise >= 0.0)) throw std::invalid_argument("synth: noise must be nonnegative");
  if (!(max_range > 0.0) || !(x_max > 0.0) || !(y_half > 0.0))
    throw std::invalid_argument("synth: extents must be positive");
  for (const auto& o : objects) o.box.validate();
}

double SynthSpec::density_at(double range) const {
  const double t = std::clamp(range / max_range, 0.0, 1.0);
  return density_near + (density_far - density_near) * t;
}

SynthSpec parse_synth_spec(const std::string& text, const std::string& source) {
  SynthSpec spec;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, line_no, "expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::istringstream vs(value);
    auto number = [&]() {
      double v;
      if (!(vs >> v) || !std::isfinite(v)) throw ParseError(source, line_no, "bad number for '" + key + "'");
      return v;
    };
    if (key == "id") {
      spec.id = value;
    } else if (key == "seed") {
      std::uint64_t s;
      if (!(vs >> s)) throw ParseError(source, line_no, "bad seed");
      spec.seed = s;
    } else if (key == "density_near") {
      spec.density_near = number();
    } else if (key == "density_far") {
      spec.density_far = number();
    } else if (key == "noise") {
      spec.noise = number();
    } else if (key == "max_range") {
      spec.max_range = number();
    } else if (key == "x_max") {
      spec.x_max = number();
    } else if (key == "y_half") {
      spec.y_half = number();
    } else if (key == "ground_z") {
      spec.ground_z = number();
    } else if (key == "object") {
      std::string cls_name;
      vs >> cls_name;
      SynthObject o;
      if (!parse_class(cls_name, o.cls)) throw ParseError(source, line_no, "unknown class '" + cls_name + "'");
      std::array<double, 7> a;
      for (double& v : a) v = number();
      o.box = Box7::from_array(a);
      o.box.theta = wrap_angle(o.box.theta);
      spec.objects.push_back(o);
    } else {
      throw ParseError(source, line_no, "unknown key '" + key + "'");
    }
    std::string rest;
    if (key != "id" && (vs >> rest)) throw ParseError(source, line_no, "trailing input for '" + key + "'");
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, 0, e.what());
  }
  return spec;
}

SynthSpec read_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_synth_spec(ss.str(), path);
}

CalibrationSet synth_calibration() {
  Mat4 t = Mat4::Zero();
  t(0, 1) = -1.0;
  t(1, 2) = -1.0;
  t(2, 0) = 1.0;
  t(3, 3) = 1.0;
  return CalibrationSet::from_intrinsics(Intrinsics{100.0, 100.0, 80.0, 24.0}, t);
}

namespace {

// Entry distance of the ray o + t d into the box, or +inf.
double ray_box(const Vec3& o, const Vec3& d, const Box7& b) {
  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  const Vec3 rel = o - b.center();
  const Vec3 lo(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(), rel.z());
  const Vec3 ld(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
  const Vec3 half(b.w / 2.0, b.l / 2.0, b.h / 2.0);
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (ld[a] == 0.0) {
      if (std::abs(lo[a]) > half[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double ta = (-half[a] - lo[a]) / ld[a];
    double tb = (half[a] - lo[a]) / ld[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= 0.0) return std::numeric_limits<double>::infinity();
  return t0;
}

}  // namespace

FrameBundle synth_scene(const SynthSpec& spec) {
  spec.validate();
  FrameBundle f;
  f.id = spec.id;
  f.calib = synth_calibration();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto jitter = [&](double v) { return spec.noise > 0.0 ? v + spec.noise * gauss(rng) : v; };
  auto emit = [&](double x, double y, double z, double intensity) {
    f.cloud.push_back(LidarPoint{static_cast<float>(jitter(x)), static_cast<float>(jitter(y)),
                                 static_cast<float>(jitter(z)), static_cast<float>(intensity)});
  };

  for (double cx = 0.0; cx < spec.x_max; cx += 1.0) {
    for (double cy = -spec.y_half; cy < spec.y_half; cy += 1.0) {
      const double expected = spec.density_at(std::hypot(cx + 0.5, cy + 0.5));
      const int n = static_cast<int>(std::floor(expected + unit(rng)));
      for (int i = 0; i < n; ++i) {
        const double x = cx + unit(rng);
        const double y = cy + unit(rng);
        bool covered = false;
        for (const auto& o : spec.objects)
          covered = covered || point_in_box(Vec3(x, y, o.box.z), o.box);
        if (!covered) emit(x, y, spec.ground_z, 0.3);
      }
    }
  }

  for (const auto& o : spec.objects) {
    const Box7& b = o.box;
    const double density = spec.density_at(std::hypot(b.x, b.y));
    const double c = std::cos(b.theta);
    const double s = std::sin(b.theta);
    // Faces as (fixed axis, sign); the bottom face is never sampled.
    const int faces[5][2] = {{0, -1}, {0, 1}, {1, -1}, {1, 1}, {2, 1}};
    const double half[3] = {b.w / 2.0, b.l / 2.0, b.h / 2.0};
    for (const auto& face : faces) {
      const int axis = face[0];
      const int u_axis = (axis + 1) % 3;
      const int v_axis = (axis + 2) % 3;
      const double area = 4.0 * half[u_axis] * half[v_axis];
      const int n = static_cast<int>(std::floor(density * area + unit(rng)));
      for (int i = 0; i < n; ++i) {
        double local[3];
        local[axis] = face[1] * half[axis];
        local[u_axis] = (2.0 * unit(rng) - 1.0) * half[u_axis];
        local[v_axis] = (2.0 * unit(rng) - 1.0) * half[v_axis];
        emit(b.x + c * local[0] - s * local[1], b.y + s * local[0] + c * local[1], b.z + local[2], 0.8);
      }
    }
  }

  f.image = RgbImage(kSynthWidth, kSynthHeight, Rgb{0.5, 0.7, 0.9});
  f.dense_depth = DepthMap(kSynthWidth, kSynthHeight);
  const Intrinsics& k = f.calib.intrinsics();
  const Vec3 origin = f.calib.cam_to_lidar(Vec3::Zero());
  for (int v = 0; v < kSynthHeight; ++v) {
    for (int u = 0; u < kSynthWidth; ++u) {
      const Vec3 dir = f.calib.cam_to_lidar(Vec3((u - k.cu) / k.fu, (v - k.cv) / k.fv, 1.0)) - origin;
      double best = std::numeric_limits<double>::infinity();
      bool on_box = false;
      if (dir.z() < 0.0) best = (spec.ground_z - origin.z()) / dir.z();
      for (const auto& o : spec.objects) {
        const double t = ray_box(origin, dir, o.box);
        if (t < best) {
          best = t;
          on_box = true;
        }
      }
      if (!(best > 0.0) || best > spec.max_range) continue;
      f.dense_depth.set(u, v, best);
      f.image.at(u, v) = on_box ? Rgb{0.9, 0.1, 0.1} : Rgb{0.5, 0.5, 0.5};
    }
  }

  for (const auto& o : spec.objects) {
    ObjectLabel lab;
    lab.cls = o.cls;
    lab.box = o.box;
    const KittiLabel kl = lidar_box_to_label(o.box, class_name(o.cls), f.calib, f.image_bounds());
    lab.bbox = kl.bbox;
    lab.difficulty = label_difficulty(kl);
    f.labels.push_back(lab);
  }
  return f;
}

}  // namespace vpdet
