#include "vpdet/voxel_backbone.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>

namespace vpdet {

namespace {

std::uint64_t point_key(const Point8D& p, std::uint64_t seed) {
  std::uint64_t h = mix64(seed);
  for (double v : p.features()) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

int floor_to_int(double v) {
  const double f = std::floor(v);
  if (!(f >= std::numeric_limits<int>::min() && f <= std::numeric_limits<int>::max()))
    throw std::invalid_argument("voxelize: coordinate out of range");
  return static_cast<int>(f);
}

void relu_inplace(std::vector<double>& v) {
  for (double& x : v) x = std::max(x, 0.0);
}

struct ConvStep {
  SparseTensor3D input;  // post-activation input of this conv
  Rulebook rules;
  std::vector<double> pre;  // pre-activation output
};

struct BackboneTrace {
  std::array<ConvStep, 7> steps;
  SparseTensor3D last;  // post-activation output of the final conv
  // Per occupied cell: which x_conv4 row supplied each channel's maximum.
  std::vector<std::size_t> cells;
  std::vector<int> argmax;      // cells.size() x 128
  std::vector<double> pooled;   // cells.size() x 128
};

BackboneTrace run_backbone(const VoxelGrid& grid, const BackboneWeights& w, const BevShape& shape,
                           BackboneOutput& out) {
  BackboneTrace trace;
  SparseTensor3D current = grid_features(grid);
  int stage = 0;
  for (std::size_t l = 0; l < w.convs.size(); ++l) {
    ConvStep& step = trace.steps[l];
    step.input = current;
    const bool strided = (l == 2 || l == 4 || l == 6);
    step.rules = strided ? strided_rulebook(current) : submanifold_rulebook(current);
    SparseTensor3D next = apply_sparse_conv(current, step.rules, w.convs[l]);
    step.pre = next.feats;
    relu_inplace(next.feats);
    current = std::move(next);
    if (l == 0 || strided) out.x_conv[stage++] = current;
  }
  trace.last = current;

  out.heat = BEVHeatmap(shape, kBevChannels);
  const SparseTensor3D& top = trace.last;
  const int c4 = top.channels;
  std::map<std::size_t, std::size_t> slot_of_cell;
  for (std::size_t i = 0; i < top.size(); ++i) {
    const Coord3& c = top.coords[i];
    if (c.x < 0 || c.y < 0 || c.x >= shape.width || c.y >= shape.height) continue;
    const std::size_t cell = out.heat.cell(c.x, c.y);
    auto [it, inserted] = slot_of_cell.emplace(cell, trace.cells.size());
    if (inserted) {
      trace.cells.push_back(cell);
      trace.argmax.insert(trace.argmax.end(), c4, static_cast<int>(i));
      trace.pooled.insert(trace.pooled.end(), top.feats.begin() + i * c4,
                          top.feats.begin() + (i + 1) * c4);
      continue;
    }
    const std::size_t slot = it->second;
    for (int ch = 0; ch < c4; ++ch) {
      const double v = top.feats[i * c4 + ch];
      if (v > trace.pooled[slot * c4 + ch]) {
        trace.pooled[slot * c4 + ch] = v;
        trace.argmax[slot * c4 + ch] = static_cast<int>(i);
      }
    }
  }

  for (std::size_t s = 0; s < trace.cells.size(); ++s) {
    const std::size_t cell = trace.cells[s];
    std::span<const double> pooled(trace.pooled.data() + s * c4, c4);
    std::span<double> dst(out.heat.data.data() + cell * kBevChannels, kBevChannels);
    w.bev_proj.forward(pooled, dst);
    out.heat.occupied[cell] = 1;
  }
  apply_score_head(out.heat, w.score_head);
  return trace;
}

}  // namespace

VoxelGrid voxelize(const FusedCloud& cloud, double voxel_size, const Vec3& origin,
                   std::uint64_t seed) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("voxelize: voxel_size must be positive");
  struct Slot {
    std::size_t best = 0;
    std::uint64_t key = 0;
    int count = 0;
  };
  std::map<Coord3, Slot> slots;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Point8D& p = cloud.points[i];
    const Coord3 c{floor_to_int((p.x - origin.x()) / voxel_size),
                   floor_to_int((p.y - origin.y()) / voxel_size),
                   floor_to_int((p.z - origin.z()) / voxel_size)};
    const std::uint64_t key = point_key(p, seed);
    auto [it, inserted] = slots.emplace(c, Slot{i, key, 0});
    Slot& s = it->second;
    s.count += 1;
    if (!inserted && key < s.key) {
      s.key = key;
      s.best = i;
    }
  }
  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.origin = origin;
  grid.coords.reserve(slots.size());
  grid.voxels.reserve(slots.size());
  for (const auto& [c, s] : slots) {
    grid.coords.push_back(c);
    grid.voxels.push_back(Voxel{cloud.points[s.best], s.count});
  }
  return grid;
}

SparseTensor3D grid_features(const VoxelGrid& grid) {
  SparseTensor3D t;
  t.coords = grid.coords;
  t.channels = kPointFeatures;
  t.stride = 1;
  t.feats.reserve(grid.size() * kPointFeatures);
  for (const Voxel& v : grid.voxels) {
    const auto f = v.representative.features();
    t.feats.insert(t.feats.end(), f.begin(), f.end());
  }
  return t;
}

BevShape BevShape::covering(const VoxelGrid& grid) {
  BevShape s;
  s.origin_x = grid.origin.x();
  s.origin_y = grid.origin.y();
  s.cell_size = grid.voxel_size * kHeatStride;
  int max_x = -1;
  int max_y = -1;
  for (const Coord3& c : grid.coords) {
    max_x = std::max(max_x, c.x / kHeatStride);
    max_y = std::max(max_y, c.y / kHeatStride);
  }
  s.width = std::max(max_x + 1, 1);
  s.height = std::max(max_y + 1, 1);
  return s;
}

BEVHeatmap::BEVHeatmap(const BevShape& shape, int ch)
    : width(shape.width),
      height(shape.height),
      channels(ch),
      cell_size(shape.cell_size),
      origin_x(shape.origin_x),
      origin_y(shape.origin_y) {
  if (width <= 0 || height <= 0 || channels <= 0)
    throw std::invalid_argument("BEVHeatmap: dimensions must be positive");
  const auto cells = static_cast<std::size_t>(width) * height;
  data.assign(cells * channels, 0.0);
  score.assign(cells, 0.0);
  occupied.assign(cells, 0);
}

const std::array<const char*, 7>& BackboneWeights::conv_names() {
  static const std::array<const char*, 7> names{"stage1.subm", "stage2.subm", "stage2.down",
                                                "stage3.subm", "stage3.down", "stage4.subm",
                                                "stage4.down"};
  return names;
}

namespace {

std::array<std::pair<int, int>, 7> conv_shapes(int in_channels) {
  const auto& c = kStageChannels;
  return {{{in_channels, c[0]},
           {c[0], c[1]},
           {c[1], c[1]},
           {c[1], c[2]},
           {c[2], c[2]},
           {c[2], c[3]},
           {c[3], c[3]}}};
}

}  // namespace

BackboneWeights BackboneWeights::zeros(int in_channels) {
  BackboneWeights w;
  const auto shapes = conv_shapes(in_channels);
  for (std::size_t i = 0; i < shapes.size(); ++i)
    w.convs[i] = ConvParams::zeros(kTaps3d, shapes[i].first, shapes[i].second);
  w.bev_proj = Linear::zeros(kStageChannels[3], kBevChannels);
  w.score_head = Linear::zeros(kBevChannels, 1);
  return w;
}

BackboneWeights BackboneWeights::random(std::uint64_t seed, int in_channels) {
  std::mt19937_64 rng(seed);
  BackboneWeights w;
  const auto shapes = conv_shapes(in_channels);
  for (std::size_t i = 0; i < shapes.size(); ++i)
    w.convs[i] = ConvParams::random(kTaps3d, shapes[i].first, shapes[i].second, rng);
  w.bev_proj = Linear::random(kStageChannels[3], kBevChannels, rng);
  w.score_head = Linear::random(kBevChannels, 1, rng);
  return w;
}

BackboneOutput backbone_forward(const VoxelGrid& grid, const BackboneWeights& weights,
                                const BevShape& shape) {
  BackboneOutput out;
  if (grid.empty()) {
    int stride = 1;
    for (int s = 0; s < 4; ++s) {
      out.x_conv[s].channels = kStageChannels[s];
      out.x_conv[s].stride = stride;
      stride *= 2;
    }
    out.heat = BEVHeatmap(shape, kBevChannels);
    return out;
  }
  run_backbone(grid, weights, shape, out);
  return out;
}

BackboneWeights backbone_score_backward(const VoxelGrid& grid, const BackboneWeights& weights,
                                        const BevShape& shape, std::span<const double> dscore) {
  BackboneWeights grad = BackboneWeights::zeros(weights.convs[0].in_channels());
  if (grid.empty()) return grad;
  BackboneOutput out;
  const BackboneTrace trace = run_backbone(grid, weights, shape, out);
  const int c4 = trace.last.channels;

  std::vector<double> dlast(trace.last.feats.size(), 0.0);
  for (std::size_t s = 0; s < trace.cells.size(); ++s) {
    const std::size_t cell = trace.cells[s];
    const double sc = out.heat.score[cell];
    const double dlogit = dscore[cell] * sc * (1.0 - sc);
    std::span<const double> data(out.heat.data.data() + cell * kBevChannels, kBevChannels);
    std::vector<double> ddata(kBevChannels, 0.0);
    const double dl[1] = {dlogit};
    weights.score_head.backward(data, dl, grad.score_head, ddata);
    std::span<const double> pooled(trace.pooled.data() + s * c4, c4);
    std::vector<double> dpooled(c4, 0.0);
    weights.bev_proj.backward(pooled, ddata, grad.bev_proj, dpooled);
    for (int ch = 0; ch < c4; ++ch)
      dlast[static_cast<std::size_t>(trace.argmax[s * c4 + ch]) * c4 + ch] += dpooled[ch];
  }

  std::vector<double> dpost = std::move(dlast);
  for (int l = static_cast<int>(trace.steps.size()) - 1; l >= 0; --l) {
    const ConvStep& step = trace.steps[l];
    for (std::size_t i = 0; i < dpost.size(); ++i)
      if (!(step.pre[i] > 0.0)) dpost[i] = 0.0;
    std::vector<double> dinput(l > 0 ? step.input.feats.size() : 0, 0.0);
    sparse_conv_backward(step.input, step.rules, weights.convs[l], dpost, grad.convs[l], dinput);
    dpost = std::move(dinput);
  }
  return grad;
}

void apply_score_head(BEVHeatmap& heat, const Linear& head) {
  if (head.in() != heat.channels || head.out() != 1)
    throw std::invalid_argument("score head must map heat channels to one logit");
  for (std::size_t cell = 0; cell < heat.score.size(); ++cell) {
    if (!heat.occupied[cell]) {
      heat.score[cell] = 0.0;
      continue;
    }
    double logit = 0.0;
    head.forward({heat.data.data() + cell * heat.channels, static_cast<std::size_t>(heat.channels)},
                 {&logit, 1});
    heat.score[cell] = sigmoid(logit);
  }
}

namespace {

bool all_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

void check_same_grid(const BEVHeatmap& a, const BEVHeatmap& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw std::invalid_argument("BEV fusion: input maps differ in shape");
}

}  // namespace

BEVHeatmap late_fuse_1x1(const BEVHeatmap& real_bev, const BEVHeatmap& virt_bev,
                         const ConvParams& params) {
  check_same_grid(real_bev, virt_bev);
  const int c = real_bev.channels;
  if (params.taps() != 1 || params.in_channels() != 2 * c)
    throw std::invalid_argument("late_fuse_1x1: kernel must be (1, 2C, C')");
  const int cout = params.out_channels();
  BEVHeatmap out(real_bev.shape(), cout);
  std::vector<double> cat(2 * c);
  for (int v = 0; v < out.height; ++v) {
    for (int u = 0; u < out.width; ++u) {
      auto a = real_bev.feature(u, v);
      auto b = virt_bev.feature(u, v);
      std::copy(a.begin(), a.end(), cat.begin());
      std::copy(b.begin(), b.end(), cat.begin() + c);
      auto y = out.feature(u, v);
      for (int o = 0; o < cout; ++o) y[o] = params.bias[o];
      // Empty cells reduce to the bias exactly.
      if (all_zero(a) && all_zero(b)) continue;
      for (int i = 0; i < 2 * c; ++i) {
        const double* w = params.kernel.data.data() + static_cast<std::size_t>(i) * cout;
        for (int o = 0; o < cout; ++o) y[o] += cat[i] * w[o];
      }
      const std::size_t cell = out.cell(u, v);
      out.occupied[cell] = real_bev.occupied[cell] | virt_bev.occupied[cell];
    }
  }
  return out;
}

BEVHeatmap gated_fuse(const BEVHeatmap& real_bev, const BEVHeatmap& virt_bev,
                      const ConvParams& gate_params) {
  check_same_grid(real_bev, virt_bev);
  const int c = real_bev.channels;
  if (gate_params.taps() != 1 || gate_params.in_channels() != 2 * c ||
      gate_params.out_channels() != c)
    throw std::invalid_argument("gated_fuse: gate kernel must be (1, 2C, C)");
  BEVHeatmap out(real_bev.shape(), c);
  std::vector<double> cat(2 * c);
  std::vector<double> logit(c);
  for (int v = 0; v < out.height; ++v) {
    for (int u = 0; u < out.width; ++u) {
      auto a = real_bev.feature(u, v);
      auto b = virt_bev.feature(u, v);
      // Empty cells mix two zero vectors.
      if (all_zero(a) && all_zero(b)) continue;
      std::copy(a.begin(), a.end(), cat.begin());
      std::copy(b.begin(), b.end(), cat.begin() + c);
      for (int o = 0; o < c; ++o) logit[o] = gate_params.bias[o];
      for (int i = 0; i < 2 * c; ++i) {
        const double* w = gate_params.kernel.data.data() + static_cast<std::size_t>(i) * c;
        for (int o = 0; o < c; ++o) logit[o] += cat[i] * w[o];
      }
      auto y = out.feature(u, v);
      for (int o = 0; o < c; ++o) {
        const double g = sigmoid(logit[o]);
        y[o] = g * a[o] + (1.0 - g) * b[o];
      }
      const std::size_t cell = out.cell(u, v);
      out.occupied[cell] = real_bev.occupied[cell] | virt_bev.occupied[cell];
    }
  }
  return out;
}

}  // namespace vpdet
