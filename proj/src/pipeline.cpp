#include "vpdet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "vpdet/evaluation.hpp"
#include "vpdet/virtual_points.hpp"

namespace vpdet {

DetectorWeights DetectorWeights::zeros(const AttentionConfig& cfg) {
  cfg.validate();
  DetectorWeights w;
  w.backbone = BackboneWeights::zeros();
  w.late_fuse = ConvParams::zeros(1, 2 * kBevChannels, kBevChannels);
  w.gate = ConvParams::zeros(1, 2 * kBevChannels, kBevChannels);
  w.vote_head = Linear::zeros(kBevChannels, 3);
  w.refine = RefineWeights::zeros();
  w.reduce = Linear::zeros(2 * kBevChannels, cfg.d);
  w.transformer = TransformerWeights::zeros(cfg, kBevChannels);
  w.heads = DetectionHeads::zeros(cfg.d);
  return w;
}

DetectorWeights DetectorWeights::random(const AttentionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  DetectorWeights w;
  w.backbone = BackboneWeights::random(mix64(seed + 1));
  w.late_fuse = ConvParams::random(1, 2 * kBevChannels, kBevChannels, rng);
  w.gate = ConvParams::random(1, 2 * kBevChannels, kBevChannels, rng);
  w.vote_head = Linear::random(kBevChannels, 3, rng);
  w.refine = RefineWeights::random(mix64(seed + 2));
  w.reduce = Linear::random(2 * kBevChannels, cfg.d, rng);
  w.transformer = TransformerWeights::random(cfg, kBevChannels, mix64(seed + 3));
  w.heads = DetectionHeads::random(cfg.d, mix64(seed + 4));
  return w;
}

namespace {

double& kernel_at(ConvParams& p, int tap, int in, int out) {
  return p.kernel[(static_cast<std::size_t>(tap) * p.in_channels() + in) * p.out_channels() + out];
}

double& weight_at(Linear& l, int out, int in) {
  return l.weight[static_cast<std::size_t>(out) * l.in() + in];
}

}  // namespace

DetectorWeights DetectorWeights::constructed(const AttentionConfig& cfg, const Vec3& box_dims) {
  DetectorWeights w = zeros(cfg);
  auto& convs = w.backbone.convs;
  // Channel 0 carries relu(z + 1.43) from every voxel and is summed over the
  // children of each strided output.
  kernel_at(convs[0], tap_index(0, 0, 0), 2, 0) = 1.0;
  convs[0].bias[0] = 1.43;
  for (int i : {1, 3, 5}) kernel_at(convs[i], tap_index(0, 0, 0), 0, 0) = 1.0;
  for (int i : {2, 4, 6})
    for (int dx = 0; dx <= 1; ++dx)
      for (int dy = 0; dy <= 1; ++dy)
        for (int dz = 0; dz <= 1; ++dz) kernel_at(convs[i], tap_index(dx, dy, dz), 0, 0) = 1.0;
  weight_at(w.backbone.bev_proj, 0, 0) = 1.0;
  weight_at(w.backbone.score_head, 0, 0) = 4.0;
  w.backbone.score_head.bias[0] = -4.0;

  // Both BEV fusions reduce to the mean of the two maps.
  for (int c = 0; c < kBevChannels; ++c) {
    kernel_at(w.late_fuse, 0, c, c) = 0.5;
    kernel_at(w.late_fuse, 0, kBevChannels + c, c) = 0.5;
  }

  w.heads.cls.bias[static_cast<int>(ObjectClass::kCar)] = 2.0;
  w.heads.obj.bias[0] = 3.0;
  w.heads.reg.bias[3] = std::log(box_dims.x());
  w.heads.reg.bias[4] = std::log(box_dims.y());
  w.heads.reg.bias[5] = std::log(box_dims.z());
  w.heads.reg.bias[7] = 1.0;
  return w;
}

void save_weights(const std::string& path, DetectorWeights& weights) {
  write_params(path, to_param_list(weights));
}

DetectorWeights load_weights(const std::string& path, const AttentionConfig& cfg) {
  DetectorWeights w = DetectorWeights::zeros(cfg);
  assign_params(w, read_params(path), path);
  return w;
}

namespace {

void transform_labels(FrameBundle& frame, const Mat3& m, double dtheta, bool mirror, double scale) {
  for (ObjectLabel& lab : frame.labels) {
    const Vec3 c = m * lab.box.center();
    lab.box.x = c.x();
    lab.box.y = c.y();
    lab.box.z = c.z();
    lab.box.w *= scale;
    lab.box.l *= scale;
    lab.box.h *= scale;
    lab.box.theta = wrap_angle((mirror ? -lab.box.theta : lab.box.theta) + dtheta);
  }
  frame.lidar_transform = m * frame.lidar_transform;
}

}  // namespace

void flip_frame(FrameBundle& frame) {
  const Mat3 m = Eigen::Vector3d(1.0, -1.0, 1.0).asDiagonal();
  transform_labels(frame, m, 0.0, true, 1.0);
}

void rotate_frame(FrameBundle& frame, double alpha) {
  Mat3 m = Mat3::Identity();
  m(0, 0) = std::cos(alpha);
  m(0, 1) = -std::sin(alpha);
  m(1, 0) = std::sin(alpha);
  m(1, 1) = std::cos(alpha);
  transform_labels(frame, m, alpha, false, 1.0);
}

void scale_frame(FrameBundle& frame, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("scale_frame: factor must be positive");
  transform_labels(frame, factor * Mat3::Identity(), 0.0, false, factor);
}

void augment(FrameBundle& frame, const AugmentConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Every draw happens regardless of the switches so enabling one does not
  // reshuffle the others.
  const bool do_flip = unit(rng) < 0.5;
  const double alpha = (2.0 * unit(rng) - 1.0) * cfg.max_rotation;
  const double factor = 1.0 + (2.0 * unit(rng) - 1.0) * cfg.max_scale;
  if (cfg.flip && do_flip) flip_frame(frame);
  if (cfg.rotation) rotate_frame(frame, alpha);
  if (cfg.scale) scale_frame(frame, factor);
}

namespace {

void apply_transform(std::vector<Point8D>& pts, const Mat3& m) {
  if (m == Mat3::Identity()) return;
  for (Point8D& p : pts) {
    const Vec3 q = m * p.position();
    p.x = q.x();
    p.y = q.y();
    p.z = q.z();
  }
}

}  // namespace

std::vector<Point8D> frame_real_points(const FrameBundle& frame) {
  std::vector<Point8D> pts = encode_lidar(frame.cloud);
  if (frame.image.width > 0 && frame.image.height > 0) pts = paint_points(pts, frame.image, frame.calib);
  apply_transform(pts, frame.lidar_transform);
  return pts;
}

std::vector<Point8D> frame_virtual_points(const FrameBundle& frame, const PipelineConfig& cfg) {
  if (frame.dense_depth.width == 0) return {};
  std::vector<Point8D> pts =
      generate_virtual_points(frame.dense_depth, frame.image, frame.calib, cfg.depth_max_range);
  apply_transform(pts, frame.lidar_transform);
  return pts;
}

std::vector<Detection> bev_nms(std::vector<Detection> dets, double iou_thresh) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (bev_iou(d.box, k.box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

namespace {

template <class F>
auto run_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

FusedCloud crop(const FusedCloud& cloud, const PointCloudRange& range) {
  FusedCloud out;
  for (const Point8D& p : cloud.points) {
    if (!range.contains(p.position())) continue;
    out.points.push_back(p);
    (p.tau == kRealTag ? out.n_real : out.n_virtual)++;
  }
  return out;
}

FusedCloud only_tag(const FusedCloud& cloud, int tag) {
  FusedCloud out;
  for (const Point8D& p : cloud.points)
    if (p.tau == tag) out.points.push_back(p);
  (tag == kRealTag ? out.n_real : out.n_virtual) = out.points.size();
  return out;
}

void zero_unoccupied(BEVHeatmap& heat) {
  for (int v = 0; v < heat.height; ++v)
    for (int u = 0; u < heat.width; ++u)
      if (!heat.occupied[heat.cell(u, v)]) {
        auto f = heat.feature(u, v);
        std::fill(f.begin(), f.end(), 0.0);
      }
}

}  // namespace

std::vector<Detection> run_detect(const FrameBundle& frame, const PipelineConfig& cfg,
                                  const DetectorWeights& weights, DetectArtifacts* artifacts) {
  run_stage("config", [&] { cfg.validate(); });
  const AttentionConfig& acfg = cfg.attention;

  const FusedCloud cloud = run_stage("fusion", [&] {
    const std::vector<Point8D> real = frame_real_points(frame);
    RangeSampleConfig sampling = cfg.sampling;
    sampling.seed = cfg.sample_seed_value();
    const std::vector<Point8D> virt = range_aware_sample(frame_virtual_points(frame, cfg), sampling);
    return crop(early_fuse(real, virt), cfg.range);
  });

  const Vec3 origin(cfg.range.x_min, cfg.range.y_min, cfg.range.z_min);
  const BevShape shape = cfg.bev_shape();
  BEVHeatmap heat;
  SparseTensor3D context_voxels;
  run_stage("backbone", [&] {
    const std::uint64_t vseed = cfg.voxel_seed_value();
    if (cfg.fusion == FusionMode::kEarly) {
      BackboneOutput out = backbone_forward(voxelize(cloud, cfg.voxel_size, origin, vseed), weights.backbone, shape);
      heat = std::move(out.heat);
      context_voxels = std::move(out.x_conv[3]);
      return;
    }
    BackboneOutput real_out = backbone_forward(
        voxelize(only_tag(cloud, kRealTag), cfg.voxel_size, origin, vseed), weights.backbone, shape);
    BackboneOutput virt_out = backbone_forward(
        voxelize(only_tag(cloud, kVirtualTag), cfg.voxel_size, origin, vseed), weights.backbone, shape);
    heat = cfg.fusion == FusionMode::kLate ? late_fuse_1x1(real_out.heat, virt_out.heat, weights.late_fuse)
                                           : gated_fuse(real_out.heat, virt_out.heat, weights.gate);
    zero_unoccupied(heat);
    apply_score_head(heat, weights.backbone.score_head);
    context_voxels = std::move(real_out.x_conv[3]);
  });

  std::vector<Candidate> candidates;
  std::vector<ProtoCenter> protos;
  run_stage("query_init", [&] {
    candidates = heatmap_nms(heat, cfg.nms_min_dist, cfg.nms_score_thresh);
    if (candidates.empty()) return;
    FpsConfig fps = cfg.fps;
    fps.seed = cfg.fps_seed_value();
    const std::vector<Candidate> seeds = score_modulated_fps(candidates, fps);
    protos = lift(seeds, cfg.z_anchor, weights.vote_head, heat);
    std::vector<Cell> cells;
    for (const ProtoCenter& p : protos) {
      cells.push_back(Cell{p.seed.u, p.seed.v});
      for (const Cell& c : bilinear_support(heat, p.lifted.x(), p.lifted.y())) cells.push_back(c);
    }
    const BEVHeatmap refined = densify_refine(heat, weights.refine, cells);
    for (ProtoCenter& p : protos) {
      const std::vector<double> sampled = bilinear_sample(refined, p.lifted.x(), p.lifted.y());
      form_query(p, refined.feature(p.seed.u, p.seed.v), sampled, weights.reduce);
    }
  });

  std::vector<Detection> dets;
  if (!protos.empty()) {
    std::vector<std::vector<double>> features;
    run_stage("transformer", [&] {
      const RangeViewIndex index =
          build_range_index(cloud, cfg.range_azimuth_bins, cfg.range_inclination_bins);
      const VoxelGeometry geom{cfg.voxel_size, origin};
      for (const ProtoCenter& p : protos) {
        const TokenBank bank = fuse_banks(gather_voxel_tokens(p.lifted, context_voxels, geom, acfg.k_voxel),
                                          gather_point_tokens(p.lifted, index, cloud, acfg.k_point),
                                          weights.transformer);
        const Token query{p.lifted, p.query};
        features.push_back(transformer_forward({&query, 1}, bank, weights.transformer, acfg)[0]);
      }
    });
    run_stage("decode", [&] {
      for (std::size_t i = 0; i < protos.size(); ++i) {
        const HeadPrediction pred = apply_heads(weights.heads, features[i]);
        // A (0, 0) yaw pair has no heading; such a query yields no box.
        if (pred.encoding.yaw[0] == 0.0 && pred.encoding.yaw[1] == 0.0) continue;
        const double score = protos[i].seed.score * sigmoid(pred.objectness_logit);
        if (score < cfg.det_score_thresh) continue;
        const auto best = std::max_element(pred.class_logits.begin(), pred.class_logits.end());
        Detection d;
        d.cls = static_cast<ObjectClass>(best - pred.class_logits.begin());
        d.box = decode_prediction(pred, protos[i].lifted);
        d.score = score;
        dets.push_back(d);
      }
      dets = bev_nms(std::move(dets), cfg.det_nms_iou);
    });
  }

  if (artifacts) {
    artifacts->cloud = cloud;
    artifacts->heat = std::move(heat);
    artifacts->candidates = std::move(candidates);
    artifacts->protos = std::move(protos);
  }
  return dets;
}

void export_heatmap(const BEVHeatmap& heat, const std::string& path) {
  write_pgm(path, heat.width, heat.height, heat.score);
}

void export_detections(const std::vector<Detection>& dets, const CalibrationSet& calib,
                       const ImageBounds& bounds, const std::string& path) {
  std::vector<KittiLabel> labels;
  for (const Detection& d : dets) {
    KittiLabel lab = lidar_box_to_label(d.box, class_name(d.cls), calib, bounds);
    lab.score = d.score;
    labels.push_back(lab);
  }
  write_kitti_labels(path, labels);
}

}  // namespace vpdet
