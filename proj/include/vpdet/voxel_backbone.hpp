#pragma once

// Voxelization, the four-stage sparse backbone, the stride-8 BEV heatmap and
// the two BEV-level fusion variants (1x1 and gated).

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vpdet/point_fusion.hpp"
#include "vpdet/sparse_conv.hpp"

namespace vpdet {

struct Voxel {
  Point8D representative;
  int count = 0;
};

/// Occupied voxels sorted by coordinate.
struct VoxelGrid {
  double voxel_size = 0.05;
  Vec3 origin = Vec3::Zero();
  std::vector<Coord3> coords;
  std::vector<Voxel> voxels;

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }
};

/// coord = floor((p - origin) / voxel_size). The representative of each voxel
/// is the member with the smallest seeded hash, which makes the choice uniform
/// over members and independent of input order.
VoxelGrid voxelize(const FusedCloud& cloud, double voxel_size, const Vec3& origin,
                   std::uint64_t seed);

/// Stride-1 tensor whose features are the representatives' 8-D vectors.
SparseTensor3D grid_features(const VoxelGrid& grid);

inline constexpr int kBevChannels = 128;
inline constexpr std::array<int, 4> kStageChannels{16, 32, 64, 128};
inline constexpr int kHeatStride = 8;

/// Placement of the dense BEV grid: cell (u, v) covers
/// [origin_x + u * cell_size, origin_x + (u + 1) * cell_size) in x, likewise y.
struct BevShape {
  int width = 0;
  int height = 0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 0.4;

  /// Smallest shape covering every occupied column of `grid` at stride 8.
  static BevShape covering(const VoxelGrid& grid);
};

struct BEVHeatmap {
  int width = 0;
  int height = 0;
  int channels = 0;
  double cell_size = 0.4;
  double origin_x = 0.0;
  double origin_y = 0.0;
  std::vector<double> data;              // (v * width + u) * channels + c
  std::vector<double> score;             // v * width + u, in [0, 1]
  std::vector<unsigned char> occupied;   // v * width + u

  BEVHeatmap() = default;
  BEVHeatmap(const BevShape& shape, int channels);

  BevShape shape() const { return {width, height, origin_x, origin_y, cell_size}; }
  std::size_t cell(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  std::span<const double> feature(int u, int v) const {
    return {data.data() + cell(u, v) * channels, static_cast<std::size_t>(channels)};
  }
  std::span<double> feature(int u, int v) {
    return {data.data() + cell(u, v) * channels, static_cast<std::size_t>(channels)};
  }
  /// Metric center of cell (u, v).
  double center_x(int u) const { return origin_x + (u + 0.5) * cell_size; }
  double center_y(int v) const { return origin_y + (v + 0.5) * cell_size; }
};

/// Seven convolutions: stage1.subm, then for stages 2-4 a submanifold conv
/// followed by a stride-2 conv, channels (16, 32, 64, 128); ReLU after each.
/// The BEV projection maps the z-collapsed stride-8 features to 128 channels
/// and the score head maps those to one logit.
struct BackboneWeights {
  std::array<ConvParams, 7> convs;
  Linear bev_proj;
  Linear score_head;

  static const std::array<const char*, 7>& conv_names();
  static BackboneWeights zeros(int in_channels = kPointFeatures);
  /// Uniform in +-1/sqrt(fan_in), seeded.
  static BackboneWeights random(std::uint64_t seed, int in_channels = kPointFeatures);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].visit(prefix + "." + conv_names()[i], f);
    bev_proj.visit(prefix + ".bev_proj", f);
    score_head.visit(prefix + ".score_head", f);
  }
};

struct BackboneOutput {
  std::array<SparseTensor3D, 4> x_conv;  // strides 1, 2, 4, 8
  BEVHeatmap heat;
};

/// The heat data is the BEV projection of max-over-z stride-8 features on
/// occupied columns (zero elsewhere); the score is sigmoid of the score head
/// on occupied columns and zero elsewhere. Stride-8 columns outside `shape`
/// are dropped from the heatmap.
BackboneOutput backbone_forward(const VoxelGrid& grid, const BackboneWeights& weights,
                                const BevShape& shape);

/// Gradient of sum_cells dscore[cell] * score[cell] with respect to every
/// backbone weight.
BackboneWeights backbone_score_backward(const VoxelGrid& grid, const BackboneWeights& weights,
                                        const BevShape& shape, std::span<const double> dscore);

/// Recomputes heat.score = sigmoid(head(data)) on occupied cells.
void apply_score_head(BEVHeatmap& heat, const Linear& head);

/// Per-cell linear map of [real; virt] with a (1, 2C, C') kernel. The result
/// is occupied wherever either input is; its score is left at zero.
BEVHeatmap late_fuse_1x1(const BEVHeatmap& real_bev, const BEVHeatmap& virt_bev,
                         const ConvParams& params);

/// g = sigmoid(per-cell linear gate over [real; virt]), output
/// g * real + (1 - g) * virt per channel. Kernel shape (1, 2C, C).
BEVHeatmap gated_fuse(const BEVHeatmap& real_bev, const BEVHeatmap& virt_bev,
                      const ConvParams& gate_params);

}  // namespace vpdet
