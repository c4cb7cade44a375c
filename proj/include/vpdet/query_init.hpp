#pragma once

// Heatmap peaks -> score-modulated FPS seeds -> vote-lifted proto-centers ->
// aligned query tokens.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vpdet/voxel_backbone.hpp"

namespace vpdet {

struct Candidate {
  int u = 0;
  int v = 0;
  double score = 0.0;
  std::vector<double> feature;
};

/// Cells that beat every other cell within Chebyshev distance < min_dist and
/// score at least score_thresh, sorted by descending score (row-major on
/// ties). Equal scores are ordered row-major, so of two equal neighbors only
/// the earlier one can survive.
std::vector<Candidate> heatmap_nms(const BEVHeatmap& heat, int min_dist, double score_thresh);

enum class FpsMode {
  kAsWritten,        // distance / (eps + s(candidate)^gamma)
  kProseConsistent,  // distance / (eps + s(selected)^gamma)
};

struct FpsConfig {
  int k = 256;
  double gamma = 1.0;
  double epsilon = 1e-6;
  double tail_fraction = 0.1;
  FpsMode mode = FpsMode::kAsWritten;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Reweighted distance between a candidate and an already selected seed.
double modulated_distance(const Candidate& candidate, const Candidate& selected,
                          const FpsConfig& cfg);

/// Returns indices into `cands`, in selection order. The first
/// floor(tail_fraction * k) entries are drawn uniformly from the lowest-score
/// decile; farthest-point selection then starts from the highest-score
/// remaining candidate and repeatedly takes the candidate maximizing its
/// minimum modulated distance to the FPS set (lowest index on ties).
std::vector<int> score_modulated_fps_indices(std::span<const Candidate> cands,
                                             const FpsConfig& cfg);
std::vector<Candidate> score_modulated_fps(std::span<const Candidate> cands, const FpsConfig& cfg);

struct ProtoCenter {
  Vec3 anchor = Vec3::Zero();
  Vec3 offset = Vec3::Zero();
  Vec3 lifted = Vec3::Zero();
  std::vector<double> query;
  Candidate seed;
};

/// anchor = (cell center x, cell center y, z_anchor); offset = vote head
/// applied to the seed feature; lifted = anchor + offset.
std::vector<ProtoCenter> lift(std::span<const Candidate> seeds, double z_anchor,
                              const Linear& vote_head, const BEVHeatmap& heat);

/// Inference-mode batch normalization folded to a per-channel affine map.
struct BatchNorm2d {
  Tensor gamma;
  Tensor beta;
  Tensor mean;
  Tensor var;
  double eps = 1e-5;

  static BatchNorm2d identity(int channels);
  double apply(int c, double x) const;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
    f(prefix + ".mean", mean);
    f(prefix + ".var", var);
  }
};

inline constexpr int kTaps2d = 9;
inline constexpr std::array<int, 5> kRefineChannels{128, 64, 64, 64, 128};

/// 2D kernels use tap t = (dx + 1) * 3 + (dy + 1), shape (9, in, out).
struct RefineWeights {
  std::array<ConvParams, 4> convs;
  std::array<BatchNorm2d, 4> norms;

  static RefineWeights zeros();
  static RefineWeights random(std::uint64_t seed);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < convs.size(); ++i) {
      convs[i].visit(prefix + ".conv" + std::to_string(i + 1), f);
      norms[i].visit(prefix + ".bn" + std::to_string(i + 1), f);
    }
  }
};

struct Cell {
  int u = 0;
  int v = 0;
  auto operator<=>(const Cell&) const = default;
};

/// Dense residual refinement: four conv3x3 + BN + ReLU layers
/// (128 -> 64 -> 64 -> 64 -> 128) added back onto the zero-filled input.
BEVHeatmap densify_refine(const BEVHeatmap& heat, const RefineWeights& weights);

/// Same result as densify_refine on the listed cells; every other cell keeps
/// its input features. Work is limited to the receptive fields of `cells`.
BEVHeatmap densify_refine(const BEVHeatmap& heat, const RefineWeights& weights,
                          std::span<const Cell> cells);

/// The cells whose features bilinear_sample(map, x, y) reads.
std::array<Cell, 4> bilinear_support(const BEVHeatmap& map, double x, double y);

/// Four-neighbor bilinear interpolation in cell coordinates (cell centers at
/// integer positions); queries outside the map clamp to the border cells.
std::vector<double> bilinear_sample(const BEVHeatmap& map, double x, double y);

/// concat(sampled, seed_feature) -> reduce. Stores and returns the query.
std::vector<double> form_query(ProtoCenter& proto, std::span<const double> seed_feature,
                               std::span<const double> sampled_feature, const Linear& reduce);

}  // namespace vpdet
