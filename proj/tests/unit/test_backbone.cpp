#include <random>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vpdet/voxel_backbone.hpp"

using namespace vpdet;

namespace {

SparseTensor3D random_tensor(int n, int channels, std::mt19937_64& rng, int span = 6) {
  SparseTensor3D t;
  t.channels = channels;
  std::set<Coord3> seen;
  std::uniform_real_distribution<double> U(-1, 1);
  while (static_cast<int>(t.size()) < n) {
    Coord3 c{static_cast<int>(rng() % span) - span / 2, static_cast<int>(rng() % span) - span / 2,
             static_cast<int>(rng() % 4)};
    if (!seen.insert(c).second) continue;
    t.coords.push_back(c);
    for (int k = 0; k < channels; ++k) t.feats.push_back(U(rng));
  }
  return t;
}

FusedCloud random_cloud(int n, std::mt19937_64& rng, double extent = 1.0) {
  std::uniform_real_distribution<double> U(0, 1);
  FusedCloud c;
  for (int i = 0; i < n; ++i) {
    Point8D p{extent * U(rng), extent * U(rng), 0.3 * U(rng), U(rng), U(rng), U(rng), U(rng), kRealTag};
    c.points.push_back(p);
  }
  c.n_real = c.points.size();
  return c;
}

BEVHeatmap random_map(int w, int h, int ch, std::mt19937_64& rng) {
  BEVHeatmap m(BevShape{w, h, 0.0, 0.0, 0.4}, ch);
  std::uniform_real_distribution<double> U(-1, 1);
  for (double& x : m.data) x = U(rng);
  std::fill(m.occupied.begin(), m.occupied.end(), 1);
  return m;
}

}  // namespace

TEST(Voxelize, SinglePointAndSharedCell) {
  FusedCloud one;
  one.points.push_back({0.12, 0.03, 0.01, 0.5, 0, 0, 0, kRealTag});
  const auto g = voxelize(one, 0.05, Vec3::Zero(), 0);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g.coords[0], (Coord3{2, 0, 0}));
  EXPECT_EQ(g.voxels[0].representative, one.points[0]);

  FusedCloud two = one;
  two.points.push_back({0.13, 0.03, 0.01, 0.9, 0, 0, 0, kRealTag});
  const auto g2 = voxelize(two, 0.05, Vec3::Zero(), 0);
  ASSERT_EQ(g2.size(), 1u);
  EXPECT_EQ(g2.voxels[0].count, 2);
  EXPECT_TRUE(g2.voxels[0].representative == two.points[0] || g2.voxels[0].representative == two.points[1]);
  EXPECT_TRUE(voxelize(FusedCloud{}, 0.05, Vec3::Zero(), 0).empty());
  EXPECT_THROW(voxelize(one, 0.0, Vec3::Zero(), 0), std::invalid_argument);
}

TEST(Voxelize, CountMatchesDistinctCellsAndRepresentativesLieInside) {
  std::mt19937_64 rng(1);
  const auto cloud = random_cloud(1000, rng, 2.0);
  const Vec3 origin(-0.3, -0.2, -0.1);
  const auto g = voxelize(cloud, 0.05, origin, 4);
  std::set<std::array<long, 3>> cells;
  for (const auto& p : cloud.points)
    cells.insert({static_cast<long>(std::floor((p.x - origin.x()) / 0.05)),
                  static_cast<long>(std::floor((p.y - origin.y()) / 0.05)),
                  static_cast<long>(std::floor((p.z - origin.z()) / 0.05))});
  EXPECT_EQ(g.size(), cells.size());
  int total = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& r = g.voxels[i].representative;
    EXPECT_EQ(static_cast<int>(std::floor((r.x - origin.x()) / 0.05)), g.coords[i].x);
    EXPECT_EQ(static_cast<int>(std::floor((r.z - origin.z()) / 0.05)), g.coords[i].z);
    EXPECT_GE(g.voxels[i].count, 1);
    total += g.voxels[i].count;
  }
  EXPECT_EQ(total, 1000);
}

TEST(Voxelize, RepresentativeIsOrderIndependent) {
  std::mt19937_64 rng(2);
  auto cloud = random_cloud(500, rng, 0.2);
  const auto a = voxelize(cloud, 0.05, Vec3::Zero(), 11);
  std::shuffle(cloud.points.begin(), cloud.points.end(), rng);
  const auto b = voxelize(cloud, 0.05, Vec3::Zero(), 11);
  ASSERT_EQ(a.coords, b.coords);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.voxels[i].representative, b.voxels[i].representative);
}

TEST(Voxelize, RepresentativeChoiceIsRoughlyUniform) {
  FusedCloud c;
  for (int i = 0; i < 4; ++i) c.points.push_back({0.01 * i + 0.001, 0.01, 0.01, 0, 0, 0, 0, kRealTag});
  std::array<int, 4> hits{};
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    const auto g = voxelize(c, 0.05, Vec3::Zero(), seed);
    for (int i = 0; i < 4; ++i) hits[i] += g.voxels[0].representative == c.points[i];
  }
  for (int h : hits) EXPECT_NEAR(h, 1000, 4 * std::sqrt(4000 * 0.25 * 0.75));
}

TEST(SubmanifoldConv, IdentityKernelAndIsolatedVoxel) {
  std::mt19937_64 rng(3);
  const auto in = random_tensor(15, 3, rng);
  ConvParams id = ConvParams::zeros(kTaps3d, 3, 3);
  for (int c = 0; c < 3; ++c) id.kernel.data[(tap_index(0, 0, 0) * 3 + c) * 3 + c] = 1.0;
  const auto out = submanifold_conv(in, id);
  EXPECT_EQ(out.coords, in.coords);
  EXPECT_EQ(out.feats, in.feats);

  SparseTensor3D single;
  single.channels = 2;
  single.coords = {{4, 4, 4}};
  single.feats = {0.5, -1.0};
  const ConvParams p = ConvParams::random(kTaps3d, 2, 3, rng);
  const auto s = submanifold_conv(single, p);
  for (int o = 0; o < 3; ++o)
    EXPECT_DOUBLE_EQ(s.feats[o], p.bias.data[o] + 0.5 * oracle::kernel_at(p, 0, 0, 0, 0, o) -
                                     1.0 * oracle::kernel_at(p, 0, 0, 0, 1, o));
}

TEST(SubmanifoldConv, FiveVoxelClusterMatchesDenseOracle) {
  std::mt19937_64 rng(4);
  SparseTensor3D in;
  in.channels = 2;
  in.coords = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 1}, {-1, 0, 1}};
  std::uniform_real_distribution<double> U(-1, 1);
  for (int i = 0; i < 10; ++i) in.feats.push_back(U(rng));
  const ConvParams p = ConvParams::random(kTaps3d, 2, 4, rng);
  const auto out = submanifold_conv(in, p);
  const oracle::DenseVolume vol(in, 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto want = oracle::dense_conv_at(vol, p, out.coords[i], 1);
    for (int o = 0; o < 4; ++o) EXPECT_NEAR(out.feature(i)[o], want[o], 1e-12);
  }
}

TEST(SubmanifoldConv, RejectsChannelMismatch) {
  std::mt19937_64 rng(5);
  const auto in = random_tensor(4, 3, rng);
  EXPECT_THROW(submanifold_conv(in, ConvParams::zeros(kTaps3d, 2, 2)), std::invalid_argument);
  SparseTensor3D dup = in;
  dup.coords[1] = dup.coords[0];
  EXPECT_THROW(submanifold_conv(dup, ConvParams::zeros(kTaps3d, 3, 2)), std::invalid_argument);
}

TEST(SubmanifoldConv, LinearInFeatures) {
  std::mt19937_64 rng(6);
  const auto in = random_tensor(12, 3, rng);
  const ConvParams p = ConvParams::random(kTaps3d, 3, 2, rng);
  SparseTensor3D twice = in;
  for (double& x : twice.feats) x *= 2.0;
  const auto a = submanifold_conv(in, p), b = submanifold_conv(twice, p);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int o = 0; o < 2; ++o)
      EXPECT_NEAR(b.feature(i)[o], 2.0 * a.feature(i)[o] - p.bias.data[o], 1e-12);
}

TEST(StridedConv, ParentCellsAndStride) {
  SparseTensor3D one;
  one.channels = 1;
  one.coords = {{0, 0, 0}};
  one.feats = {1.0};
  ConvParams p = ConvParams::zeros(kTaps3d, 1, 1);
  for (double& k : p.kernel.data) k = 1.0;
  const auto a = strided_conv(one, p);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a.coords[0], (Coord3{0, 0, 0}));
  EXPECT_EQ(a.stride, 2);

  SparseTensor3D two;
  two.channels = 1;
  two.coords = {{0, 0, 0}, {1, 0, 0}};
  two.feats = {1.0, 2.0};
  const auto b = strided_conv(two, p);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_DOUBLE_EQ(b.feats[0], 3.0);

  SparseTensor3D neg;
  neg.channels = 1;
  neg.coords = {{-1, -3, 2}, {-2, -4, 3}};
  neg.feats = {1.0, 1.0};
  const auto c = strided_conv(neg, p);
  EXPECT_EQ(c.coords, (std::vector<Coord3>{{-1, -2, 1}}));
}

TEST(StridedConv, TwentyVoxelsMatchDenseOracle) {
  std::mt19937_64 rng(7);
  const auto in = random_tensor(20, 3, rng);
  const ConvParams p = ConvParams::random(kTaps3d, 3, 5, rng);
  const auto out = strided_conv(in, p);
  const oracle::DenseVolume vol(in, 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto want = oracle::dense_conv_at(vol, p, out.coords[i], 2);
    for (int o = 0; o < 5; ++o) EXPECT_NEAR(out.feature(i)[o], want[o], 1e-12);
  }
}

TEST(SparseConv, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto in = random_tensor(10, 2, rng);
  ConvParams p = ConvParams::random(kTaps3d, 2, 3, rng);
  for (bool strided : {false, true}) {
    const Rulebook rules = strided ? strided_rulebook(in) : submanifold_rulebook(in);
    std::vector<double> dout(rules.out_coords.size() * 3);
    std::uniform_real_distribution<double> U(-1, 1);
    for (double& d : dout) d = U(rng);
    auto loss = [&] {
      const auto out = apply_sparse_conv(in, rules, p);
      double s = 0;
      for (std::size_t i = 0; i < dout.size(); ++i) s += dout[i] * out.feats[i];
      return s;
    };
    ConvParams g = ConvParams::zeros(kTaps3d, 2, 3);
    std::vector<double> din(in.feats.size(), 0.0);
    sparse_conv_backward(in, rules, p, dout, g, din);
    for (std::size_t i : oracle::slice(p.kernel.size()))
      EXPECT_LT(oracle::relative_error(g.kernel.data[i], oracle::central_difference(p.kernel.data[i], loss)), 1e-4);
    for (std::size_t i = 0; i < 3; ++i)
      EXPECT_LT(oracle::relative_error(g.bias.data[i], oracle::central_difference(p.bias.data[i], loss)), 1e-4);
    for (std::size_t i = 0; i < in.feats.size(); ++i)
      EXPECT_LT(oracle::relative_error(din[i], oracle::central_difference(in.feats[i], loss)), 1e-4);
  }
}

TEST(Backbone, EmptyGridGivesZeroScores) {
  const BackboneWeights w = BackboneWeights::random(1);
  const BevShape shape{4, 3, 0, 0, 0.4};
  const auto out = backbone_forward(VoxelGrid{}, w, shape);
  for (const auto& x : out.x_conv) EXPECT_TRUE(x.empty());
  for (double s : out.heat.score) EXPECT_EQ(s, 0.0);
  EXPECT_DOUBLE_EQ(out.heat.cell_size, 0.4);
}

TEST(Backbone, ZeroWeightsGiveSigmoidOfBias) {
  FusedCloud c;
  c.points.push_back({0.1, 0.1, 0.1, 0.5, 0, 0, 0, kRealTag});
  const auto grid = voxelize(c, 0.05, Vec3::Zero(), 0);
  BackboneWeights w = BackboneWeights::zeros();
  w.score_head.bias.data[0] = 0.7;
  const auto out = backbone_forward(grid, w, BevShape::covering(grid));
  int occupied = 0;
  for (std::size_t i = 0; i < out.heat.score.size(); ++i) {
    if (out.heat.occupied[i]) {
      ++occupied;
      EXPECT_DOUBLE_EQ(out.heat.score[i], sigmoid(0.7));
    } else {
      EXPECT_EQ(out.heat.score[i], 0.0);
    }
  }
  EXPECT_EQ(occupied, 1);
}

TEST(Backbone, StridesChannelsAndSubmanifoldClosure) {
  std::mt19937_64 rng(9);
  const auto grid = voxelize(random_cloud(300, rng, 1.5), 0.05, Vec3::Zero(), 2);
  const BackboneWeights w = BackboneWeights::random(3);
  const auto out = backbone_forward(grid, w, BevShape::covering(grid));
  for (int s = 0; s < 4; ++s) {
    EXPECT_EQ(out.x_conv[s].stride, 1 << s);
    EXPECT_EQ(out.x_conv[s].channels, kStageChannels[s]);
  }
  EXPECT_EQ(out.x_conv[0].coords, grid.coords);
  EXPECT_DOUBLE_EQ(out.heat.cell_size, 0.05 * 8);
  for (double s : out.heat.score) EXPECT_TRUE(s >= 0.0 && s <= 1.0);
  for (double d : out.heat.data) EXPECT_TRUE(std::isfinite(d));
}

TEST(Backbone, ScoreGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const auto grid = voxelize(random_cloud(40, rng, 0.6), 0.05, Vec3::Zero(), 2);
  ASSERT_LE(grid.size(), 100u);
  BackboneWeights w = BackboneWeights::random(12);
  const BevShape shape = BevShape::covering(grid);
  std::vector<double> dscore(static_cast<std::size_t>(shape.width) * shape.height);
  std::uniform_real_distribution<double> U(-1, 1);
  for (double& d : dscore) d = U(rng);
  BackboneWeights g = backbone_score_backward(grid, w, shape, dscore);
  auto loss = [&] {
    const auto heat = backbone_forward(grid, w, shape).heat;
    double s = 0;
    for (std::size_t i = 0; i < dscore.size(); ++i) s += dscore[i] * heat.score[i];
    return s;
  };
  std::vector<Tensor*> wt, gt;
  w.visit("b", [&](const std::string&, Tensor& t) { wt.push_back(&t); });
  g.visit("b", [&](const std::string&, Tensor& t) { gt.push_back(&t); });
  // With h = 1e-6 the difference quotient carries about 1e-10 of rounding
  // noise, so gradients far below the 1e-6 floor get an absolute allowance.
  for (std::size_t t = 0; t < wt.size(); ++t)
    for (std::size_t i : oracle::slice(wt[t]->size(), 40)) {
      const double a = gt[t]->data[i];
      const double n = oracle::central_difference(wt[t]->data[i], loss, 1e-6);
      EXPECT_TRUE(oracle::relative_error(a, n) < 1e-4 || std::abs(a - n) < 1e-9)
          << "tensor " << t << " entry " << i << " analytic " << a << " numeric " << n;
    }
}

TEST(LateFuse, SelectsRealBlockAndMatchesMatrixOracle) {
  std::mt19937_64 rng(11);
  const auto real = random_map(3, 2, 4, rng), virt = random_map(3, 2, 4, rng);
  ConvParams sel = ConvParams::zeros(1, 8, 4);
  for (int c = 0; c < 4; ++c) sel.kernel.data[c * 4 + c] = 1.0;
  EXPECT_EQ(late_fuse_1x1(real, virt, sel).data, real.data);

  BEVHeatmap zero_a(real.shape(), 4), zero_b(real.shape(), 4);
  ConvParams bias = ConvParams::zeros(1, 8, 4);
  bias.bias.data = {1, 2, 3, 4};
  const auto b = late_fuse_1x1(zero_a, zero_b, bias);
  for (std::size_t i = 0; i < b.data.size(); ++i) EXPECT_EQ(b.data[i], double(i % 4 + 1));

  const ConvParams p = ConvParams::random(1, 8, 4, rng);
  const auto out = late_fuse_1x1(real, virt, p);
  for (int v = 0; v < 2; ++v)
    for (int u = 0; u < 3; ++u)
      for (int o = 0; o < 4; ++o) {
        double want = p.bias.data[o];
        for (int i = 0; i < 4; ++i)
          want += p.kernel.data[i * 4 + o] * real.feature(u, v)[i] + p.kernel.data[(4 + i) * 4 + o] * virt.feature(u, v)[i];
        EXPECT_NEAR(out.feature(u, v)[o], want, 1e-12);
      }
  EXPECT_THROW(late_fuse_1x1(real, random_map(2, 2, 4, rng), p), std::invalid_argument);
}

TEST(GatedFuse, SaturatedHalfAndFormula) {
  std::mt19937_64 rng(12);
  const auto real = random_map(3, 3, 4, rng), virt = random_map(3, 3, 4, rng);
  ConvParams open = ConvParams::zeros(1, 8, 4);
  for (double& b : open.bias.data) b = 1000.0;
  EXPECT_EQ(gated_fuse(real, virt, open).data, real.data);

  const auto half = gated_fuse(real, virt, ConvParams::zeros(1, 8, 4));
  for (std::size_t i = 0; i < half.data.size(); ++i)
    EXPECT_NEAR(half.data[i], 0.5 * (real.data[i] + virt.data[i]), 1e-15);

  const ConvParams g = ConvParams::random(1, 8, 4, rng);
  const auto out = gated_fuse(real, virt, g);
  for (int v = 0; v < 3; ++v)
    for (int u = 0; u < 3; ++u)
      for (int o = 0; o < 4; ++o) {
        double logit = g.bias.data[o];
        for (int i = 0; i < 4; ++i)
          logit += g.kernel.data[i * 4 + o] * real.feature(u, v)[i] + g.kernel.data[(4 + i) * 4 + o] * virt.feature(u, v)[i];
        const double gate = 1.0 / (1.0 + std::exp(-logit));
        EXPECT_NEAR(out.feature(u, v)[o], gate * real.feature(u, v)[o] + (1 - gate) * virt.feature(u, v)[o], 1e-6);
      }
}
