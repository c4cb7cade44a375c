#pragma once

// End-to-end detector: weights, augmentation, the forward pass and artifact
// export.

#include <cstdint>
#include <string>
#include <vector>

#include "vpdet/config.hpp"
#include "vpdet/detection_head.hpp"
#include "vpdet/kitti_io.hpp"
#include "vpdet/query_init.hpp"
#include "vpdet/transformer_head.hpp"
#include "vpdet/voxel_backbone.hpp"

namespace vpdet {

struct DetectorWeights {
  BackboneWeights backbone;
  ConvParams late_fuse;   // (1, 256, 128)
  ConvParams gate;        // (1, 256, 128)
  Linear vote_head;       // 128 -> 3
  RefineWeights refine;
  Linear reduce;          // 256 -> d
  TransformerWeights transformer;
  DetectionHeads heads;

  static DetectorWeights zeros(const AttentionConfig& cfg);
  static DetectorWeights random(const AttentionConfig& cfg, std::uint64_t seed);
  /// Hand-set weights that light up the heatmap over elevated structure
  /// (anything above z = -1.43 m) and decode a Car of the given size at every
  /// seed.
  static DetectorWeights constructed(const AttentionConfig& cfg, const Vec3& box_dims);

  template <class F>
  void visit(F&& f) {
    backbone.visit("backbone", f);
    late_fuse.visit("late_fuse", f);
    gate.visit("gate", f);
    vote_head.visit("vote_head", f);
    refine.visit("refine", f);
    reduce.visit("reduce", f);
    transformer.visit("transformer", f);
    heads.visit("heads", f);
  }
};

void save_weights(const std::string& path, DetectorWeights& weights);
/// Throws ParseError when a tensor is missing or its shape does not match
/// the configuration.
DetectorWeights load_weights(const std::string& path, const AttentionConfig& cfg);

/// Flip about the x axis: y -> -y, theta -> -theta.
void flip_frame(FrameBundle& frame);
/// Rotation by alpha about z; theta += alpha.
void rotate_frame(FrameBundle& frame, double alpha);
/// Uniform scaling of positions and box extents.
void scale_frame(FrameBundle& frame, double factor);
/// Random flip (p = 0.5), rotation and scale as enabled in cfg.
void augment(FrameBundle& frame, const AugmentConfig& cfg, std::uint64_t seed);

/// Sensor points as 8-D features with the frame's augmentation applied and
/// colors painted from the image.
std::vector<Point8D> frame_real_points(const FrameBundle& frame);
/// Virtual points from the dense depth, mapped through the augmentation.
std::vector<Point8D> frame_virtual_points(const FrameBundle& frame, const PipelineConfig& cfg);

struct Detection {
  ObjectClass cls = ObjectClass::kCar;
  Box7 box;  // LiDAR frame
  double score = 0.0;
};

/// Intermediate results kept for inspection and export.
struct DetectArtifacts {
  FusedCloud cloud;
  BEVHeatmap heat;
  std::vector<Candidate> candidates;
  std::vector<ProtoCenter> protos;
};

/// Fusion, voxelization, backbone(s), query initialization, the transformer
/// head and decoding, then score filtering and BEV NMS. Stage failures are
/// rethrown as StageError naming the stage.
std::vector<Detection> run_detect(const FrameBundle& frame, const PipelineConfig& cfg,
                                  const DetectorWeights& weights, DetectArtifacts* artifacts = nullptr);

/// Greedy BEV NMS in descending score; ties keep input order.
std::vector<Detection> bev_nms(std::vector<Detection> dets, double iou_thresh);

void export_heatmap(const BEVHeatmap& heat, const std::string& path);
void export_detections(const std::vector<Detection>& dets, const CalibrationSet& calib,
                       const ImageBounds& bounds, const std::string& path);

}  // namespace vpdet
