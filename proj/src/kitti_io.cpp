#include "vpdet/kitti_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace vpdet {

namespace fs = std::filesystem;

std::vector<KittiLabel> parse_kitti_labels(const std::string& text, const std::string& source) {
  std::vector<KittiLabel> out;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.size() != 15 && tok.size() != 16)
      throw ParseError(source, line_no, "expected 15 or 16 fields, got " + std::to_string(tok.size()));
    std::vector<double> v;
    try {
      for (std::size_t i = 1; i < tok.size(); ++i) {
        std::size_t used = 0;
        v.push_back(std::stod(tok[i], &used));
        if (used != tok[i].size()) throw std::invalid_argument(tok[i]);
      }
    } catch (const std::exception&) {
      throw ParseError(source, line_no, "non-numeric field");
    }
    for (double x : v)
      if (!std::isfinite(x)) throw ParseError(source, line_no, "non-finite field");
    KittiLabel lab;
    lab.type = tok[0];
    lab.truncation = v[0];
    lab.occlusion = static_cast<int>(v[1]);
    lab.alpha = v[2];
    lab.bbox = {v[3], v[4], v[5], v[6]};
    lab.h = v[7];
    lab.w = v[8];
    lab.l = v[9];
    lab.location = Vec3(v[10], v[11], v[12]);
    lab.ry = v[13];
    if (v.size() == 15) lab.score = v[14];
    out.push_back(lab);
  }
  return out;
}

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v, int precision) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << v;
  return ss.str();
}

}  // namespace

std::vector<KittiLabel> read_kitti_labels(const std::string& path) {
  return parse_kitti_labels(read_text(path), path);
}

std::string format_kitti_label(const KittiLabel& l) {
  std::string s = l.type + " " + fmt(l.truncation, 2) + " " + std::to_string(l.occlusion) + " " +
                  fmt(l.alpha, 6);
  for (double b : l.bbox) s += " " + fmt(b, 2);
  for (double v : {l.h, l.w, l.l, l.location.x(), l.location.y(), l.location.z(), l.ry})
    s += " " + fmt(v, 6);
  if (l.score) s += " " + fmt(*l.score, 6);
  return s;
}

void write_kitti_labels(const std::string& path, const std::vector<KittiLabel>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  for (const auto& l : labels) out << format_kitti_label(l) << "\n";
  if (!out) throw Error("write failed: " + path);
}

Box7 label_to_lidar_box(const KittiLabel& label, const CalibrationSet& calib) {
  const Vec3 center_cam = label.location - Vec3(0.0, label.h / 2.0, 0.0);
  const Vec3 c = calib.cam_to_lidar(center_cam);
  return Box7{c.x(), c.y(), c.z(), label.w, label.l, label.h, wrap_angle(-label.ry - kPi)};
}

KittiLabel lidar_box_to_label(const Box7& box, const std::string& type, const CalibrationSet& calib,
                              const ImageBounds& bounds) {
  KittiLabel lab;
  lab.type = type;
  lab.h = box.h;
  lab.w = box.w;
  lab.l = box.l;
  lab.location = calib.lidar_to_cam(box.center()) + Vec3(0.0, box.h / 2.0, 0.0);
  lab.ry = wrap_angle(-box.theta - kPi);
  lab.alpha = wrap_angle(lab.ry - std::atan2(lab.location.x(), lab.location.z()));
  double left = 1e18, top = 1e18, right = -1e18, bottom = -1e18;
  bool any = false;
  for (const Vec3& c : box_corners(box)) {
    const Vec3 pc = calib.lidar_to_cam(c);
    if (pc.z() <= 0.0) continue;
    const Projection p = project_lidar_to_image(c, calib);
    if (p.status == ProjectionStatus::kBehind) continue;
    any = true;
    left = std::min(left, p.pixel.u);
    right = std::max(right, p.pixel.u);
    top = std::min(top, p.pixel.v);
    bottom = std::max(bottom, p.pixel.v);
  }
  if (any && bounds.width > 0 && bounds.height > 0) {
    left = std::clamp(left, 0.0, bounds.width - 1.0);
    right = std::clamp(right, 0.0, bounds.width - 1.0);
    top = std::clamp(top, 0.0, bounds.height - 1.0);
    bottom = std::clamp(bottom, 0.0, bounds.height - 1.0);
  }
  lab.bbox = any ? std::array<double, 4>{left, top, right, bottom} : std::array<double, 4>{};
  return lab;
}

Box7 label_to_eval_box(const KittiLabel& label) {
  return Box7{label.location.x(), label.location.z(), -label.location.y() + label.h / 2.0,
              label.w, label.l, label.h, wrap_angle(-label.ry - kPi / 2.0)};
}

const DifficultyCut& difficulty_cut(Difficulty d) {
  static const DifficultyCut cuts[3] = {{40.0, 0, 0.15}, {25.0, 1, 0.30}, {25.0, 2, 0.50}};
  return cuts[static_cast<int>(d)];
}

bool passes_difficulty(const KittiLabel& label, Difficulty d) {
  const DifficultyCut& cut = difficulty_cut(d);
  return label.bbox_height() >= cut.min_height && label.occlusion <= cut.max_occlusion &&
         label.truncation <= cut.max_truncation;
}

std::optional<Difficulty> label_difficulty(const KittiLabel& label) {
  for (Difficulty d : {Difficulty::kEasy, Difficulty::kModerate, Difficulty::kHard})
    if (passes_difficulty(label, d)) return d;
  return std::nullopt;
}

std::string FramePaths::velodyne() const { return root + "/velodyne/" + id + ".bin"; }
std::string FramePaths::image() const { return root + "/image_2/" + id + ".png"; }
std::string FramePaths::calib() const { return root + "/calib/" + id + ".txt"; }
std::string FramePaths::label() const { return root + "/label_2/" + id + ".txt"; }
std::string FramePaths::depth_bin() const { return root + "/depth_dense/" + id + ".bin"; }
std::string FramePaths::depth_png() const { return root + "/depth_dense/" + id + ".png"; }

std::vector<std::string> list_frames(const std::string& root) {
  std::vector<std::string> ids;
  const fs::path dir = fs::path(root) / "velodyne";
  if (!fs::is_directory(dir)) throw ParseError(dir.string(), 0, "missing velodyne directory");
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".bin") ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool point_in_box(const Vec3& p, const Box7& box) {
  const double c = std::cos(box.theta);
  const double s = std::sin(box.theta);
  const double dx = p.x() - box.x;
  const double dy = p.y() - box.y;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= box.w / 2.0 && std::abs(ly) <= box.l / 2.0 &&
         std::abs(p.z() - box.z) <= box.h / 2.0;
}

int count_points_in_box(const std::vector<LidarPoint>& cloud, const Box7& box) {
  int n = 0;
  for (const auto& p : cloud)
    if (point_in_box(Vec3(p.x, p.y, p.z), box)) ++n;
  return n;
}

FrameBundle load_frame(const FramePaths& paths, const LoadOptions& options) {
  FrameBundle f;
  f.id = paths.id;
  f.calib = read_kitti_calib(paths.calib());
  f.cloud = read_velodyne(paths.velodyne());
  f.image = read_png_rgb(paths.image());
  if (fs::exists(paths.depth_bin())) {
    f.dense_depth = read_depth_bin(paths.depth_bin());
  } else {
    f.dense_depth = read_depth_png(paths.depth_png());
  }
  if (f.dense_depth.width != f.image.width || f.dense_depth.height != f.image.height)
    throw ParseError(paths.id, 0, "dense depth and image sizes differ");

  if (!fs::exists(paths.label())) {
    if (options.require_labels) throw ParseError(paths.label(), 0, "cannot open file");
    return f;
  }
  for (const KittiLabel& lab : read_kitti_labels(paths.label())) {
    ObjectClass cls;
    if (!parse_class(lab.type, cls)) continue;
    ObjectLabel ol;
    ol.cls = cls;
    ol.box = label_to_lidar_box(lab, f.calib);
    ol.truncation = lab.truncation;
    ol.occlusion = lab.occlusion;
    ol.bbox = lab.bbox;
    ol.difficulty = label_difficulty(lab);
    if (!(ol.box.w > 0.0 && ol.box.l > 0.0 && ol.box.h > 0.0)) continue;
    if (!options.difficulties.empty() &&
        (!ol.difficulty || !options.difficulties.count(*ol.difficulty)))
      continue;
    if (auto it = options.min_points.find(cls); it != options.min_points.end())
      if (count_points_in_box(f.cloud, ol.box) < it->second) continue;
    f.labels.push_back(ol);
  }
  return f;
}

void write_frame(const FrameBundle& frame, const std::string& root) {
  for (const char* sub : {"velodyne", "image_2", "calib", "label_2", "depth_dense"})
    fs::create_directories(fs::path(root) / sub);
  const FramePaths paths{root, frame.id};
  write_velodyne(paths.velodyne(), frame.cloud);
  write_png_rgb(paths.image(), frame.image);
  write_kitti_calib(paths.calib(), frame.calib);
  write_depth_bin(paths.depth_bin(), frame.dense_depth);
  std::vector<KittiLabel> labels;
  for (const ObjectLabel& ol : frame.labels) {
    KittiLabel lab = lidar_box_to_label(ol.box, class_name(ol.cls), frame.calib, frame.image_bounds());
    lab.truncation = ol.truncation;
    lab.occlusion = ol.occlusion;
    labels.push_back(lab);
  }
  write_kitti_labels(paths.label(), labels);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    if (mode[0] == 'r') throw ParseError(path, 0, "cannot open file");
    throw Error("cannot write " + path);
  }
  return f;
}

// Decoded 8- or 16-bit rows; channels after expansion.
struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<unsigned char> bytes;  // rows packed, rowbytes each
  std::size_t rowbytes = 0;
};

RawPng read_png_raw(const std::string& path, bool keep_16) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path, 0, "invalid PNG data");
  }
  png_init_io(png, file.get());
  int transforms = PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA;
  if (!keep_16) transforms |= PNG_TRANSFORM_STRIP_16;
  png_read_png(png, info, transforms, nullptr);
  RawPng raw;
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = png_get_bit_depth(png, info);
  raw.rowbytes = png_get_rowbytes(png, info);
  png_bytepp rows = png_get_rows(png, info);
  raw.bytes.resize(raw.rowbytes * raw.height);
  for (int y = 0; y < raw.height; ++y)
    std::memcpy(raw.bytes.data() + raw.rowbytes * y, rows[y], raw.rowbytes);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

void write_png_raw(const std::string& path, int width, int height, int color_type, int bit_depth,
                   const std::vector<unsigned char>& bytes, std::size_t rowbytes) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG write failed: " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + rowbytes * y));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

}  // namespace

RgbImage read_png_rgb(const std::string& path) {
  const RawPng raw = read_png_raw(path, false);
  RgbImage img(raw.width, raw.height);
  for (int y = 0; y < raw.height; ++y) {
    const unsigned char* row = raw.bytes.data() + raw.rowbytes * y;
    for (int x = 0; x < raw.width; ++x) {
      const unsigned char* px = row + static_cast<std::size_t>(x) * raw.channels;
      Rgb& c = img.at(x, y);
      if (raw.channels >= 3) {
        c = {px[0] / 255.0, px[1] / 255.0, px[2] / 255.0};
      } else {
        c = {px[0] / 255.0, px[0] / 255.0, px[0] / 255.0};
      }
    }
  }
  return img;
}

void write_png_rgb(const std::string& path, const RgbImage& image) {
  const std::size_t rowbytes = static_cast<std::size_t>(image.width) * 3;
  std::vector<unsigned char> bytes(rowbytes * image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const Rgb& c = image.at(x, y);
      unsigned char* px = bytes.data() + rowbytes * y + static_cast<std::size_t>(x) * 3;
      px[0] = to_byte(c.r);
      px[1] = to_byte(c.g);
      px[2] = to_byte(c.b);
    }
  write_png_raw(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 8, bytes, rowbytes);
}

DepthMap read_depth_png(const std::string& path) {
  const RawPng raw = read_png_raw(path, true);
  if (raw.channels != 1 || raw.bit_depth != 16)
    throw ParseError(path, 0, "depth PNG must be 16-bit grayscale");
  DepthMap d(raw.width, raw.height);
  for (int y = 0; y < raw.height; ++y) {
    const unsigned char* row = raw.bytes.data() + raw.rowbytes * y;
    for (int x = 0; x < raw.width; ++x) {
      const unsigned value = (static_cast<unsigned>(row[2 * x]) << 8) | row[2 * x + 1];
      if (value > 0) d.set(x, y, value / 256.0);
    }
  }
  return d;
}

void write_depth_png(const std::string& path, const DepthMap& depth) {
  const std::size_t rowbytes = static_cast<std::size_t>(depth.width) * 2;
  std::vector<unsigned char> bytes(rowbytes * depth.height, 0);
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      if (!depth.is_valid(x, y)) continue;
      const double scaled = std::clamp(std::floor(depth.at(x, y) * 256.0 + 0.5), 1.0, 65535.0);
      const unsigned value = static_cast<unsigned>(scaled);
      bytes[rowbytes * y + 2 * x] = static_cast<unsigned char>(value >> 8);
      bytes[rowbytes * y + 2 * x + 1] = static_cast<unsigned char>(value & 0xFF);
    }
  write_png_raw(path, depth.width, depth.height, PNG_COLOR_TYPE_GRAY, 16, bytes, rowbytes);
}

DepthMap read_depth_bin(const std::string& path) {
  const std::string data = read_text(path);
  if (data.size() < 8) throw ParseError(path, 0, "truncated depth header");
  std::int32_t w = 0, h = 0;
  std::memcpy(&w, data.data(), 4);
  std::memcpy(&h, data.data() + 4, 4);
  if (w <= 0 || h <= 0 || data.size() != 8 + 4ull * static_cast<std::size_t>(w) * h)
    throw ParseError(path, 0, "depth size does not match header");
  DepthMap d(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float v;
      std::memcpy(&v, data.data() + 8 + 4 * (static_cast<std::size_t>(y) * w + x), 4);
      if (std::isfinite(v) && v > 0.0f) d.set(x, y, v);
    }
  return d;
}

void write_depth_bin(const std::string& path, const DepthMap& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  const std::int32_t w = depth.width, h = depth.height;
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      const float v = depth.is_valid(x, y) ? static_cast<float>(depth.at(x, y)) : 0.0f;
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  if (!out) throw Error("write failed: " + path);
}

void write_pgm(const std::string& path, int width, int height, const std::vector<double>& values) {
  if (values.size() != static_cast<std::size_t>(width) * height)
    throw std::invalid_argument("write_pgm: value count does not match size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  std::vector<char> bytes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) bytes[i] = static_cast<char>(to_byte(values[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path);
}

}  // namespace vpdet
