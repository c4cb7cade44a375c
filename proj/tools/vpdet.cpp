// vpdet command-line driver.
//
// Exit codes: 0 success, 2 parse or configuration error, 3 runtime stage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vpdet/config.hpp"
#include "vpdet/evaluation.hpp"
#include "vpdet/kitti_io.hpp"
#include "vpdet/pipeline.hpp"
#include "vpdet/synth.hpp"

namespace fs = std::filesystem;
using namespace vpdet;

namespace {

constexpr int kExitParse = 2;
constexpr int kExitRuntime = 3;

struct CommonOptions {
  std::string config;
  std::string weights;
  std::string fusion;
  std::optional<std::uint64_t> seed;
};

PipelineConfig resolve_config(const CommonOptions& o) {
  PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  if (!o.fusion.empty()) {
    auto mode = parse_fusion(o.fusion);
    if (!mode) throw ParseError("--fusion", 0, "expected early, late or gated");
    cfg.fusion = *mode;
  }
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

DetectorWeights resolve_weights(const CommonOptions& o, const PipelineConfig& cfg) {
  if (o.weights.empty()) throw ParseError("--weights", 0, "a weights file is required");
  return load_weights(o.weights, cfg.attention);
}

void add_common(CLI::App* cmd, CommonOptions& o, bool need_weights) {
  cmd->add_option("--config", o.config, "key=value configuration file");
  auto* w = cmd->add_option("--weights", o.weights, "detector weights file");
  if (need_weights) w->required();
  cmd->add_option("--fusion", o.fusion, "early | late | gated");
  cmd->add_option("--seed", o.seed, "base seed for every stochastic stage");
}

int cmd_detect(const CommonOptions& o, const std::string& frames, const std::string& out, bool heatmaps) {
  const PipelineConfig cfg = resolve_config(o);
  const DetectorWeights weights = resolve_weights(o, cfg);
  fs::create_directories(out);
  if (heatmaps) fs::create_directories(fs::path(out) / "heatmaps");
  std::size_t total = 0;
  for (const std::string& id : list_frames(frames)) {
    const FrameBundle frame = load_frame(FramePaths{frames, id}, cfg.load);
    DetectArtifacts art;
    const auto dets = run_detect(frame, cfg, weights, heatmaps ? &art : nullptr);
    export_detections(dets, frame.calib, frame.image_bounds(), (fs::path(out) / (id + ".txt")).string());
    if (heatmaps) export_heatmap(art.heat, (fs::path(out) / "heatmaps" / (id + ".pgm")).string());
    total += dets.size();
    std::cout << id << ": " << dets.size() << " detections\n";
  }
  std::cout << "total " << total << " detections\n";
  return 0;
}

int cmd_eval(const std::string& dets_dir, const std::string& labels_dir, double iou, const std::string& cls_name) {
  ObjectClass cls;
  if (!parse_class(cls_name, cls)) throw ParseError("--class", 0, "expected Car, Pedestrian or Cyclist");
  if (!fs::is_directory(labels_dir)) throw ParseError(labels_dir, 0, "labels directory not found");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(labels_dir))
    if (e.path().extension() == ".txt") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  std::vector<std::vector<KittiLabel>> gts, dets;
  for (const std::string& id : ids) {
    gts.push_back(read_kitti_labels((fs::path(labels_dir) / (id + ".txt")).string()));
    const fs::path det_path = fs::path(dets_dir) / (id + ".txt");
    dets.push_back(fs::exists(det_path) ? read_kitti_labels(det_path.string()) : std::vector<KittiLabel>{});
  }
  const EvalResult r = evaluate(dets, gts, cls, iou);
  std::printf("%s AP@%.2f over %zu frames   Easy     Moderate Hard\n", cls_name.c_str(), iou, ids.size());
  auto row = [](const char* name, const std::array<double, 3>& v) {
    std::printf("  %-5s %8.2f %8.2f %8.2f\n", name, v[0], v[1], v[2]);
  };
  row("bbox", r.ap_2d);
  row("bev", r.ap_bev);
  row("3d", r.ap_3d);
  row("aos", r.aos);
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
  const SynthSpec spec = read_synth_spec(spec_path);
  const FrameBundle frame = synth_scene(spec);
  write_frame(frame, out);
  std::cout << "wrote frame " << frame.id << " (" << frame.cloud.size() << " points, "
            << frame.labels.size() << " objects) to " << out << "\n";
  return 0;
}

int cmd_export_heatmap(const CommonOptions& o, const std::string& frames, const std::string& id,
                       const std::string& out) {
  const PipelineConfig cfg = resolve_config(o);
  const DetectorWeights weights = resolve_weights(o, cfg);
  const FrameBundle frame = load_frame(FramePaths{frames, id}, cfg.load);
  DetectArtifacts art;
  run_detect(frame, cfg, weights, &art);
  export_heatmap(art.heat, out);
  std::cout << "wrote " << art.heat.width << "x" << art.heat.height << " heatmap to " << out << "\n";
  return 0;
}

int cmd_init_weights(const CommonOptions& o, const std::string& out, const std::vector<double>& constructed) {
  const PipelineConfig cfg = resolve_config(o);
  DetectorWeights w = constructed.empty()
                          ? DetectorWeights::random(cfg.attention, cfg.seed)
                          : DetectorWeights::constructed(cfg.attention,
                                                         Vec3(constructed[0], constructed[1], constructed[2]));
  save_weights(out, w);
  std::cout << "wrote weights to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vpdet: LiDAR + virtual point 3D object detector"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string frames, out, dets_dir, labels_dir, spec, id, cls = "Car";
  double iou = 0.7;
  bool heatmaps = false;
  std::vector<double> constructed;

  auto* detect = app.add_subcommand("detect", "run the detector over a KITTI-layout directory");
  add_common(detect, common, true);
  detect->add_option("--frames", frames, "frame root (velodyne/, image_2/, calib/, depth_dense/)")->required();
  detect->add_option("--out", out, "output directory for detection files")->required();
  detect->add_flag("--heatmaps", heatmaps, "also write heatmaps/<id>.pgm");

  auto* eval = app.add_subcommand("eval", "AP / AOS of detection files against labels");
  eval->add_option("--dets", dets_dir, "directory of detection files")->required();
  eval->add_option("--labels", labels_dir, "directory of KITTI label files")->required();
  eval->add_option("--iou", iou, "overlap threshold")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--class", cls, "Car, Pedestrian or Cyclist");

  auto* synth = app.add_subcommand("synth", "write a synthetic frame in KITTI layout");
  synth->add_option("--spec", spec, "scene specification file")->required();
  synth->add_option("--out", out, "output root")->required();

  auto* heat = app.add_subcommand("export-heatmap", "write one frame's BEV score map as PGM");
  add_common(heat, common, true);
  heat->add_option("--frames", frames, "frame root")->required();
  heat->add_option("--id", id, "frame id")->required();
  heat->add_option("--out", out, "output .pgm path")->required();

  auto* init = app.add_subcommand("init-weights", "write seeded random or constructed weights");
  add_common(init, common, false);
  init->add_option("--out", out, "output weights path")->required();
  init->add_option("--constructed", constructed, "hand-set weights decoding boxes of size W L H")
      ->expected(3);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitParse;
  }

  try {
    if (*detect) return cmd_detect(common, frames, out, heatmaps);
    if (*eval) return cmd_eval(dets_dir, labels_dir, iou, cls);
    if (*synth) return cmd_synth(spec, out);
    if (*heat) return cmd_export_heatmap(common, frames, id, out);
    if (*init) return cmd_init_weights(common, out, constructed);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitParse;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
