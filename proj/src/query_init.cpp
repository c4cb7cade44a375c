#include "vpdet/query_init.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace vpdet {

std::vector<Candidate> heatmap_nms(const BEVHeatmap& heat, int min_dist, double score_thresh) {
  if (min_dist < 1) throw std::invalid_argument("heatmap_nms: min_dist must be >= 1");
  const int reach = min_dist - 1;
  std::vector<Candidate> out;
  for (int v = 0; v < heat.height; ++v) {
    for (int u = 0; u < heat.width; ++u) {
      const std::size_t idx = heat.cell(u, v);
      const double s = heat.score[idx];
      if (!(s > 0.0) || s < score_thresh) continue;
      bool is_peak = true;
      for (int dv = -reach; dv <= reach && is_peak; ++dv) {
        for (int du = -reach; du <= reach; ++du) {
          if (du == 0 && dv == 0) continue;
          const int uu = u + du;
          const int vv = v + dv;
          if (uu < 0 || vv < 0 || uu >= heat.width || vv >= heat.height) continue;
          const std::size_t other = heat.cell(uu, vv);
          const double so = heat.score[other];
          if (so > s || (so == s && other < idx)) {
            is_peak = false;
            break;
          }
        }
      }
      if (!is_peak) continue;
      auto f = heat.feature(u, v);
      out.push_back(Candidate{u, v, s, std::vector<double>(f.begin(), f.end())});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  return out;
}

void FpsConfig::validate() const {
  if (k < 1) throw std::invalid_argument("FPS: k must be >= 1");
  if (!(gamma >= 1.0)) throw std::invalid_argument("FPS: gamma must be >= 1");
  if (!(epsilon > 0.0)) throw std::invalid_argument("FPS: epsilon must be positive");
  if (!(tail_fraction >= 0.0 && tail_fraction < 1.0))
    throw std::invalid_argument("FPS: tail_fraction must be in [0, 1)");
}

double modulated_distance(const Candidate& candidate, const Candidate& selected,
                          const FpsConfig& cfg) {
  const double du = candidate.u - selected.u;
  const double dv = candidate.v - selected.v;
  const double dist = std::sqrt(du * du + dv * dv);
  const double s = cfg.mode == FpsMode::kAsWritten ? candidate.score : selected.score;
  return dist / (cfg.epsilon + std::pow(s, cfg.gamma));
}

std::vector<int> score_modulated_fps_indices(std::span<const Candidate> cands,
                                             const FpsConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(cands.size());
  std::vector<int> picked;
  if (n == 0) return picked;
  const int target = std::min(cfg.k, n);
  std::vector<unsigned char> taken(n, 0);

  // Low-score tail harvest.
  std::vector<int> by_score(n);
  std::iota(by_score.begin(), by_score.end(), 0);
  std::stable_sort(by_score.begin(), by_score.end(),
                   [&](int a, int b) { return cands[a].score < cands[b].score; });
  const int decile = (n + 9) / 10;
  const int n_tail = std::min({static_cast<int>(std::floor(cfg.tail_fraction * cfg.k)), decile,
                               target - 1});
  if (n_tail > 0) {
    std::vector<int> pool(by_score.begin(), by_score.begin() + decile);
    std::mt19937_64 rng(cfg.seed);
    for (int i = 0; i < n_tail; ++i) {
      std::uniform_int_distribution<int> pick(i, decile - 1);
      std::swap(pool[i], pool[pick(rng)]);
      picked.push_back(pool[i]);
      taken[pool[i]] = 1;
    }
  }

  // Highest-score remaining candidate starts the FPS set.
  int start = -1;
  for (int i = 0; i < n; ++i) {
    if (taken[i]) continue;
    if (start < 0 || cands[i].score > cands[start].score) start = i;
  }
  picked.push_back(start);
  taken[start] = 1;

  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  int last = start;
  while (static_cast<int>(picked.size()) < target) {
    int best = -1;
    for (int i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_dist[i] = std::min(min_dist[i], modulated_distance(cands[i], cands[last], cfg));
      if (best < 0 || min_dist[i] > min_dist[best]) best = i;
    }
    picked.push_back(best);
    taken[best] = 1;
    last = best;
  }
  return picked;
}

std::vector<Candidate> score_modulated_fps(std::span<const Candidate> cands, const FpsConfig& cfg) {
  std::vector<Candidate> out;
  for (int i : score_modulated_fps_indices(cands, cfg)) out.push_back(cands[i]);
  return out;
}

std::vector<ProtoCenter> lift(std::span<const Candidate> seeds, double z_anchor,
                              const Linear& vote_head, const BEVHeatmap& heat) {
  if (vote_head.in() != heat.channels || vote_head.out() != 3)
    throw std::invalid_argument("lift: vote head must map heat channels to 3 offsets");
  std::vector<ProtoCenter> out;
  out.reserve(seeds.size());
  for (const Candidate& c : seeds) {
    if (c.u < 0 || c.v < 0 || c.u >= heat.width || c.v >= heat.height)
      throw std::invalid_argument("lift: seed outside heatmap");
    ProtoCenter p;
    p.anchor = Vec3(heat.center_x(c.u), heat.center_y(c.v), z_anchor);
    const std::vector<double> delta = vote_head(heat.feature(c.u, c.v));
    p.offset = Vec3(delta[0], delta[1], delta[2]);
    p.lifted = p.anchor + p.offset;
    p.seed = c;
    out.push_back(std::move(p));
  }
  return out;
}

BatchNorm2d BatchNorm2d::identity(int channels) {
  return BatchNorm2d{Tensor({channels}, 1.0), Tensor({channels}, 0.0), Tensor({channels}, 0.0),
                     Tensor({channels}, 1.0 - 1e-5)};
}

double BatchNorm2d::apply(int c, double x) const {
  return gamma[c] * (x - mean[c]) / std::sqrt(var[c] + eps) + beta[c];
}

RefineWeights RefineWeights::zeros() {
  RefineWeights w;
  for (std::size_t i = 0; i < 4; ++i) {
    w.convs[i] = ConvParams::zeros(kTaps2d, kRefineChannels[i], kRefineChannels[i + 1]);
    const int c = kRefineChannels[i + 1];
    w.norms[i] = BatchNorm2d{Tensor({c}), Tensor({c}), Tensor({c}), Tensor({c}, 1.0)};
  }
  return w;
}

RefineWeights RefineWeights::random(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RefineWeights w;
  for (std::size_t i = 0; i < 4; ++i) {
    w.convs[i] = ConvParams::random(kTaps2d, kRefineChannels[i], kRefineChannels[i + 1], rng);
    w.norms[i] = BatchNorm2d::identity(kRefineChannels[i + 1]);
  }
  return w;
}

namespace {

struct DenseMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  const double* at(int u, int v) const {
    return data.data() + (static_cast<std::size_t>(v) * width + u) * channels;
  }
  double* at(int u, int v) { return data.data() + (static_cast<std::size_t>(v) * width + u) * channels; }
};

void conv3x3_bn_relu(const DenseMap& in, const ConvParams& conv, const BatchNorm2d& bn,
                     const std::vector<Cell>& cells, DenseMap& out) {
  const int cin = conv.in_channels();
  const int cout = conv.out_channels();
  std::vector<double> acc(cout);
  for (const Cell& cell : cells) {
    for (int o = 0; o < cout; ++o) acc[o] = conv.bias[o];
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        const int u = cell.u + dx;
        const int v = cell.v + dy;
        if (u < 0 || v < 0 || u >= in.width || v >= in.height) continue;
        const double* x = in.at(u, v);
        const double* w =
            conv.kernel.data.data() + static_cast<std::size_t>((dx + 1) * 3 + (dy + 1)) * cin * cout;
        for (int i = 0; i < cin; ++i) {
          if (x[i] == 0.0) continue;
          const double* wrow = w + static_cast<std::size_t>(i) * cout;
          for (int o = 0; o < cout; ++o) acc[o] += x[i] * wrow[o];
        }
      }
    }
    double* y = out.at(cell.u, cell.v);
    for (int o = 0; o < cout; ++o) y[o] = std::max(bn.apply(o, acc[o]), 0.0);
  }
}

std::vector<Cell> dilate(const std::vector<Cell>& cells, int width, int height) {
  std::set<Cell> grown;
  for (const Cell& c : cells)
    for (int dv = -1; dv <= 1; ++dv)
      for (int du = -1; du <= 1; ++du) {
        const int u = c.u + du;
        const int v = c.v + dv;
        if (u >= 0 && v >= 0 && u < width && v < height) grown.insert(Cell{u, v});
      }
  return {grown.begin(), grown.end()};
}

BEVHeatmap refine_cells(const BEVHeatmap& heat, const RefineWeights& w, std::vector<Cell> cells) {
  if (heat.channels != kRefineChannels.front())
    throw std::invalid_argument("densify_refine: heatmap must have 128 channels");
  std::array<std::vector<Cell>, 4> layer_cells;
  layer_cells[3] = std::move(cells);
  for (int l = 2; l >= 0; --l) layer_cells[l] = dilate(layer_cells[l + 1], heat.width, heat.height);

  DenseMap current{heat.width, heat.height, heat.channels, heat.data};
  for (int l = 0; l < 4; ++l) {
    DenseMap next{heat.width, heat.height, kRefineChannels[l + 1],
                  std::vector<double>(static_cast<std::size_t>(heat.width) * heat.height *
                                      kRefineChannels[l + 1])};
    conv3x3_bn_relu(current, w.convs[l], w.norms[l], layer_cells[l], next);
    current = std::move(next);
  }
  BEVHeatmap out = heat;
  for (const Cell& c : layer_cells[3]) {
    auto y = out.feature(c.u, c.v);
    const double* r = current.at(c.u, c.v);
    for (int ch = 0; ch < out.channels; ++ch) y[ch] += r[ch];
  }
  return out;
}

}  // namespace

BEVHeatmap densify_refine(const BEVHeatmap& heat, const RefineWeights& weights) {
  std::vector<Cell> all;
  all.reserve(static_cast<std::size_t>(heat.width) * heat.height);
  for (int v = 0; v < heat.height; ++v)
    for (int u = 0; u < heat.width; ++u) all.push_back(Cell{u, v});
  return refine_cells(heat, weights, std::move(all));
}

BEVHeatmap densify_refine(const BEVHeatmap& heat, const RefineWeights& weights,
                          std::span<const Cell> cells) {
  std::set<Cell> unique;
  for (const Cell& c : cells) {
    if (c.u < 0 || c.v < 0 || c.u >= heat.width || c.v >= heat.height)
      throw std::invalid_argument("densify_refine: cell outside heatmap");
    unique.insert(c);
  }
  return refine_cells(heat, weights, std::vector<Cell>(unique.begin(), unique.end()));
}

namespace {

struct Bilinear {
  int u0, u1, v0, v1;
  double fx, fy;
};

Bilinear bilinear_weights(const BEVHeatmap& map, double x, double y) {
  const double gx = std::clamp((x - map.origin_x) / map.cell_size - 0.5, 0.0, map.width - 1.0);
  const double gy = std::clamp((y - map.origin_y) / map.cell_size - 0.5, 0.0, map.height - 1.0);
  Bilinear b;
  b.u0 = static_cast<int>(std::floor(gx));
  b.v0 = static_cast<int>(std::floor(gy));
  b.u1 = std::min(b.u0 + 1, map.width - 1);
  b.v1 = std::min(b.v0 + 1, map.height - 1);
  b.fx = gx - b.u0;
  b.fy = gy - b.v0;
  return b;
}

}  // namespace

std::array<Cell, 4> bilinear_support(const BEVHeatmap& map, double x, double y) {
  const Bilinear b = bilinear_weights(map, x, y);
  return {Cell{b.u0, b.v0}, Cell{b.u1, b.v0}, Cell{b.u0, b.v1}, Cell{b.u1, b.v1}};
}

std::vector<double> bilinear_sample(const BEVHeatmap& map, double x, double y) {
  const Bilinear b = bilinear_weights(map, x, y);
  auto f00 = map.feature(b.u0, b.v0);
  auto f10 = map.feature(b.u1, b.v0);
  auto f01 = map.feature(b.u0, b.v1);
  auto f11 = map.feature(b.u1, b.v1);
  const double w00 = (1.0 - b.fx) * (1.0 - b.fy);
  const double w10 = b.fx * (1.0 - b.fy);
  const double w01 = (1.0 - b.fx) * b.fy;
  const double w11 = b.fx * b.fy;
  std::vector<double> out(map.channels);
  for (int c = 0; c < map.channels; ++c)
    out[c] = w00 * f00[c] + w10 * f10[c] + w01 * f01[c] + w11 * f11[c];
  return out;
}

std::vector<double> form_query(ProtoCenter& proto, std::span<const double> seed_feature,
                               std::span<const double> sampled_feature, const Linear& reduce) {
  if (static_cast<std::size_t>(reduce.in()) != seed_feature.size() + sampled_feature.size())
    throw std::invalid_argument("form_query: reduce width does not match concatenated features");
  std::vector<double> cat(sampled_feature.begin(), sampled_feature.end());
  cat.insert(cat.end(), seed_feature.begin(), seed_feature.end());
  proto.query = reduce(cat);
  return proto.query;
}

}  // namespace vpdet
