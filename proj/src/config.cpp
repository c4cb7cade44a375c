#include "vpdet/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vpdet {

const char* fusion_name(FusionMode m) {
  switch (m) {
    case FusionMode::kEarly: return "early";
    case FusionMode::kLate: return "late";
    case FusionMode::kGated: return "gated";
  }
  return "early";
}

std::optional<FusionMode> parse_fusion(const std::string& s) {
  if (s == "early") return FusionMode::kEarly;
  if (s == "late" || s == "late_1x1") return FusionMode::kLate;
  if (s == "gated") return FusionMode::kGated;
  return std::nullopt;
}

bool PointCloudRange::contains(const Vec3& p) const {
  return p.x() >= x_min && p.x() < x_max && p.y() >= y_min && p.y() < y_max && p.z() >= z_min &&
         p.z() < z_max;
}

std::uint64_t PipelineConfig::stage_seed(const std::optional<std::uint64_t>& explicit_seed,
                                         std::uint64_t salt) const {
  return explicit_seed ? *explicit_seed : mix64(seed ^ (salt * 0x9E3779B97F4A7C15ull));
}

BevShape PipelineConfig::bev_shape() const {
  BevShape s;
  s.origin_x = range.x_min;
  s.origin_y = range.y_min;
  s.cell_size = voxel_size * kHeatStride;
  s.width = static_cast<int>(std::ceil((range.x_max - range.x_min) / s.cell_size - 1e-9));
  s.height = static_cast<int>(std::ceil((range.y_max - range.y_min) / s.cell_size - 1e-9));
  return s;
}

void PipelineConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(voxel_size > 0.0, "voxel_size must be positive");
  require(range.x_max > range.x_min && range.y_max > range.y_min && range.z_max > range.z_min,
          "point cloud range must have max > min on every axis");
  require(depth_max_range > 0.0, "depth_max_range must be positive");
  sampling.validate();
  require(dropout_radius >= 0.0, "dropout_radius must be nonnegative");
  require(dropout_prob >= 0.0 && dropout_prob <= 1.0, "dropout_prob must be in [0, 1]");
  require(nms_min_dist >= 1, "nms_min_dist must be >= 1");
  require(nms_score_thresh >= 0.0 && nms_score_thresh <= 1.0, "nms_score_thresh must be in [0, 1]");
  fps.validate();
  require(std::isfinite(z_anchor), "z_anchor must be finite");
  attention.validate();
  require(range_azimuth_bins >= 1 && range_inclination_bins >= 1, "range bins must be >= 1");
  require(det_score_thresh >= 0.0 && det_score_thresh <= 1.0, "det_score_thresh must be in [0, 1]");
  require(det_nms_iou >= 0.0 && det_nms_iou <= 1.0, "det_nms_iou must be in [0, 1]");
  require(augment.max_rotation >= 0.0 && augment.max_rotation <= kPi, "aug_rotation_deg must be in [0, 180]");
  require(augment.max_scale >= 0.0 && augment.max_scale < 1.0, "aug_scale must be in [0, 1)");
  require(focal_alpha >= 0.0 && focal_alpha <= 1.0, "focal_alpha must be in [0, 1]");
  require(focal_gamma >= 0.0, "focal_gamma must be nonnegative");
  loss.validate();
  for (const auto& [cls, n] : load.min_points) require(n >= 0, "min_points must be nonnegative");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument("bad number for '" + key + "'");
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size()) throw std::invalid_argument("bad integer for '" + key + "'");
  return x;
}

std::uint64_t to_seed(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-') throw std::invalid_argument("bad seed for '" + key + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("bad boolean for '" + key + "'");
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, sep);) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Difficulty to_difficulty(const std::string& s) {
  if (s == "0" || s == "easy" || s == "Easy") return Difficulty::kEasy;
  if (s == "1" || s == "moderate" || s == "Moderate") return Difficulty::kModerate;
  if (s == "2" || s == "hard" || s == "Hard") return Difficulty::kHard;
  throw std::invalid_argument("unknown difficulty '" + s + "'");
}

}  // namespace

void apply_setting(PipelineConfig& c, const std::string& key, const std::string& v) {
  auto d = [&]() { return to_double(key, v); };
  auto i = [&]() { return static_cast<int>(to_int(key, v)); };
  if (key == "fusion") {
    auto m = parse_fusion(v);
    if (!m) throw std::invalid_argument("fusion must be early, late or gated");
    c.fusion = *m;
  } else if (key == "voxel_size") c.voxel_size = d();
  else if (key == "x_min") c.range.x_min = d();
  else if (key == "x_max") c.range.x_max = d();
  else if (key == "y_min") c.range.y_min = d();
  else if (key == "y_max") c.range.y_max = d();
  else if (key == "z_min") c.range.z_min = d();
  else if (key == "z_max") c.range.z_max = d();
  else if (key == "depth_max_range") c.depth_max_range = d();
  else if (key == "range_bins") c.sampling.n_bins = i();
  else if (key == "retain_fraction") c.sampling.retain_fraction = d();
  else if (key == "near_threshold") c.sampling.near_threshold = d();
  else if (key == "sample_max_range") c.sampling.max_range = d();
  else if (key == "dropout_radius") c.dropout_radius = d();
  else if (key == "dropout_prob") c.dropout_prob = d();
  else if (key == "nms_min_dist") c.nms_min_dist = i();
  else if (key == "nms_score_thresh") c.nms_score_thresh = d();
  else if (key == "fps_k") c.fps.k = i();
  else if (key == "fps_gamma") c.fps.gamma = d();
  else if (key == "fps_epsilon") c.fps.epsilon = d();
  else if (key == "fps_tail_fraction") c.fps.tail_fraction = d();
  else if (key == "fps_mode") {
    if (v == "as_written") c.fps.mode = FpsMode::kAsWritten;
    else if (v == "prose") c.fps.mode = FpsMode::kProseConsistent;
    else throw std::invalid_argument("fps_mode must be as_written or prose");
  } else if (key == "z_anchor") c.z_anchor = d();
  else if (key == "attn_heads") c.attention.heads = i();
  else if (key == "attn_d") c.attention.d = i();
  else if (key == "attn_layers") c.attention.layers = i();
  else if (key == "bias_bins") c.attention.bias_bins = i();
  else if (key == "bias_range") c.attention.bias_range = d();
  else if (key == "k_voxel") c.attention.k_voxel = i();
  else if (key == "k_point") c.attention.k_point = i();
  else if (key == "range_azimuth_bins") c.range_azimuth_bins = i();
  else if (key == "range_inclination_bins") c.range_inclination_bins = i();
  else if (key == "det_score_thresh") c.det_score_thresh = d();
  else if (key == "det_nms_iou") c.det_nms_iou = d();
  else if (key == "aug_flip") c.augment.flip = to_bool(key, v);
  else if (key == "aug_rotation") c.augment.rotation = to_bool(key, v);
  else if (key == "aug_scale") c.augment.scale = to_bool(key, v);
  else if (key == "aug_rotation_deg") c.augment.max_rotation = d() * kPi / 180.0;
  else if (key == "aug_scale_range") c.augment.max_scale = d();
  else if (key == "difficulties") {
    c.load.difficulties.clear();
    for (const auto& s : split(v, ',')) c.load.difficulties.insert(to_difficulty(s));
  } else if (key == "min_points") {
    c.load.min_points.clear();
    for (const auto& item : split(v, ',')) {
      const auto colon = item.find(':');
      ObjectClass cls;
      if (colon == std::string::npos || !parse_class(trim(item.substr(0, colon)), cls))
        throw std::invalid_argument("min_points entries must look like Car:5");
      c.load.min_points[cls] = static_cast<int>(to_int(key, trim(item.substr(colon + 1))));
    }
  } else if (key == "focal_alpha") c.focal_alpha = d();
  else if (key == "focal_gamma") c.focal_gamma = d();
  else if (key == "lambda_vote") c.loss.vote = d();
  else if (key == "lambda_obj") c.loss.obj = d();
  else if (key == "lambda_cls") c.loss.cls = d();
  else if (key == "lambda_reg") c.loss.reg = d();
  else if (key == "lambda_corner") c.loss.corner = d();
  else if (key == "seed") c.seed = to_seed(key, v);
  else if (key == "voxel_seed") c.voxel_seed = to_seed(key, v);
  else if (key == "sample_seed") c.sample_seed = to_seed(key, v);
  else if (key == "fps_seed") c.fps_seed = to_seed(key, v);
  else if (key == "augment_seed") c.augment_seed = to_seed(key, v);
  else throw std::invalid_argument("unknown key '" + key + "'");
}

PipelineConfig parse_config(const std::string& text, const std::string& source, PipelineConfig cfg) {
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, line_no, "expected key = value");
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(source, 0, e.what());
  }
  return cfg;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace vpdet
