#include "vpdet/transformer_head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace vpdet {

std::size_t TokenBank::valid_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

void TokenBank::push(Token t, bool valid) {
  tokens.push_back(std::move(t));
  mask.push_back(valid ? 1 : 0);
}

void AttentionConfig::validate() const {
  if (heads < 1 || d < 1 || layers < 1 || bias_bins < 1 || k_voxel < 1 || k_point < 1)
    throw std::invalid_argument("attention config: all counts must be >= 1");
  if (d % heads != 0) throw std::invalid_argument("attention config: d must be divisible by heads");
  if (!(bias_range > 0.0)) throw std::invalid_argument("attention config: bias_range must be positive");
}

namespace {

void pad_bank(TokenBank& bank, int k, int width) {
  while (static_cast<int>(bank.size()) < k) bank.push(Token{Vec3::Zero(), std::vector<double>(width, 0.0)}, false);
}

}  // namespace

TokenBank gather_voxel_tokens(const Vec3& center, const SparseTensor3D& voxels,
                              const VoxelGeometry& geom, int k) {
  if (k < 1) throw std::invalid_argument("gather_voxel_tokens: k must be >= 1");
  const double pitch = geom.voxel_size * voxels.stride;
  auto position = [&](const Coord3& c) {
    return Vec3(geom.origin.x() + (c.x + 0.5) * pitch, geom.origin.y() + (c.y + 0.5) * pitch,
                geom.origin.z() + (c.z + 0.5) * pitch);
  };
  std::vector<std::pair<double, std::size_t>> ranked;
  ranked.reserve(voxels.size());
  for (std::size_t i = 0; i < voxels.size(); ++i)
    ranked.emplace_back((position(voxels.coords[i]) - center).squaredNorm(), i);
  const std::size_t take = std::min<std::size_t>(k, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + take, ranked.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return voxels.coords[a.second] < voxels.coords[b.second];
  });
  TokenBank bank;
  for (std::size_t j = 0; j < take; ++j) {
    const std::size_t i = ranked[j].second;
    auto f = voxels.feature(i);
    bank.push(Token{position(voxels.coords[i]), std::vector<double>(f.begin(), f.end())});
  }
  pad_bank(bank, k, voxels.channels);
  return bank;
}

RangeViewIndex::RangeViewIndex(const FusedCloud& cloud, int azimuth_bins, int inclination_bins)
    : az_bins_(azimuth_bins), incl_bins_(inclination_bins) {
  if (azimuth_bins < 1 || inclination_bins < 1)
    throw std::invalid_argument("range index: bin counts must be >= 1");
  positions_.reserve(cloud.size());
  std::vector<double> incl(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 p = cloud.points[i].position();
    positions_.push_back(p);
    incl[i] = std::atan2(p.z(), std::hypot(p.x(), p.y()));
  }
  if (!incl.empty()) {
    const auto [lo, hi] = std::minmax_element(incl.begin(), incl.end());
    min_incl_ = *lo;
    max_incl_ = *hi;
  }
  if (max_incl_ - min_incl_ < 1e-9) max_incl_ = min_incl_ + 1e-9;
  for (std::size_t i = 0; i < positions_.size(); ++i) {
    const Vec3& p = positions_[i];
    cells_[{azimuth_bin(std::atan2(p.y(), p.x())), inclination_bin(incl[i])}].push_back(static_cast<int>(i));
  }
}

int RangeViewIndex::azimuth_bin(double azimuth) const {
  const int b = static_cast<int>(std::floor((azimuth + kPi) / (2.0 * kPi) * az_bins_));
  return std::clamp(b, 0, az_bins_ - 1);
}

int RangeViewIndex::inclination_bin(double inclination) const {
  const double width = (max_incl_ - min_incl_) / incl_bins_;
  const double b = std::floor((inclination - min_incl_) / width);
  if (b < 0.0) return 0;
  if (b > incl_bins_ - 1) return incl_bins_ - 1;
  return static_cast<int>(b);
}

const std::vector<int>& RangeViewIndex::bin(int a, int i) const {
  static const std::vector<int> kEmpty;
  auto it = cells_.find({a, i});
  return it == cells_.end() ? kEmpty : it->second;
}

std::vector<int> RangeViewIndex::knn(const Vec3& center, int k) const {
  if (k < 1) throw std::invalid_argument("range index: k must be >= 1");
  std::vector<int> result;
  if (positions_.empty()) return result;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const double rho = std::hypot(center.x(), center.y());
  const double az = std::atan2(center.y(), center.x());
  const double inc = std::atan2(center.z(), rho);
  const int ca = azimuth_bin(az);
  const int ci = inclination_bin(inc);
  const double az_width = 2.0 * kPi / az_bins_;
  const double incl_width = (max_incl_ - min_incl_) / incl_bins_;
  const std::size_t want = std::min<std::size_t>(k, positions_.size());

  std::vector<std::pair<double, int>> found;
  for (int w = 0;; w = (w == 0 ? 1 : 2 * w)) {
    const bool az_full = 2 * w + 1 >= az_bins_;
    const int lo = std::max(0, ci - w);
    const int hi = std::min(incl_bins_ - 1, ci + w);
    const bool incl_full = lo == 0 && hi == incl_bins_ - 1;

    found.clear();
    auto collect = [&](int a) {
      for (int i = lo; i <= hi; ++i)
        for (int idx : bin(a, i)) found.emplace_back((positions_[idx] - center).norm(), idx);
    };
    if (az_full) {
      for (int a = 0; a < az_bins_; ++a) collect(a);
    } else {
      for (int da = -w; da <= w; ++da) collect(((ca + da) % az_bins_ + az_bins_) % az_bins_);
    }
    const std::size_t take = std::min(want, found.size());
    std::partial_sort(found.begin(), found.begin() + take, found.end());

    bool done = az_full && incl_full;
    if (!done && take == want) {
      double bound_az = kInf;
      if (!az_full) {
        const double gap = std::min(az - (-kPi + (ca - w) * az_width), (-kPi + (ca + w + 1) * az_width) - az);
        bound_az = rho * std::sin(std::clamp(gap, 0.0, kPi / 2.0));
      }
      double gap_incl = kInf;
      if (lo > 0) gap_incl = std::min(gap_incl, inc - (min_incl_ + lo * incl_width));
      if (hi < incl_bins_ - 1) gap_incl = std::min(gap_incl, (min_incl_ + (hi + 1) * incl_width) - inc);
      const double bound_incl =
          gap_incl == kInf ? kInf : center.norm() * std::sin(std::clamp(gap_incl, 0.0, kPi / 2.0));
      done = found[take - 1].first < std::min(bound_az, bound_incl);
    }
    if (done) {
      for (std::size_t j = 0; j < take; ++j) result.push_back(found[j].second);
      return result;
    }
  }
}

RangeViewIndex build_range_index(const FusedCloud& cloud, int azimuth_bins, int inclination_bins) {
  return RangeViewIndex(cloud, azimuth_bins, inclination_bins);
}

TokenBank gather_point_tokens(const Vec3& center, const RangeViewIndex& index,
                              const FusedCloud& cloud, int k) {
  if (index.point_count() != cloud.size())
    throw std::invalid_argument("gather_point_tokens: index was built over a different cloud");
  TokenBank bank;
  if (!cloud.empty()) {
    for (int i : index.knn(center, k)) {
      const auto f = cloud.points[i].features();
      bank.push(Token{cloud.points[i].position(), std::vector<double>(f.begin(), f.end())});
    }
  }
  pad_bank(bank, k, kPointFeatures);
  return bank;
}

TokenBank gather_point_tokens(const Vec3& center, const RangeViewIndex& index,
                              const FusedCloud& cloud, int k, const Linear& embed) {
  TokenBank bank = gather_point_tokens(center, index, cloud, k);
  for (std::size_t j = 0; j < bank.size(); ++j) {
    bank.tokens[j].feature = bank.mask[j] ? embed(bank.tokens[j].feature)
                                          : std::vector<double>(embed.out(), 0.0);
  }
  return bank;
}

int relative_bias_bin(const Vec3& delta, const AttentionConfig& cfg) {
  const double r = cfg.bias_range;
  const int n = cfg.bias_bins;
  auto axis = [&](double v) {
    const double b = std::floor((v + r) / (2.0 * r) * n);
    if (!(b >= 0.0)) return 0;
    if (b > n - 1) return n - 1;
    return static_cast<int>(b);
  };
  return (axis(delta.x()) * n + axis(delta.y())) * n + axis(delta.z());
}

double relative_bias(const Vec3& q_pos, const Vec3& k_pos, const Tensor& table, int head,
                     const AttentionConfig& cfg) {
  const int bins = cfg.bias_bins;
  if (table.shape != std::vector<int>{bins * bins * bins, cfg.heads})
    throw std::invalid_argument("relative_bias: table must be (bins^3, heads)");
  return table[static_cast<std::size_t>(relative_bias_bin(k_pos - q_pos, cfg)) * cfg.heads + head];
}

AttentionParams AttentionParams::zeros(const AttentionConfig& cfg) {
  const int bins = cfg.bias_bins;
  return AttentionParams{Linear::zeros(cfg.d, cfg.d), Linear::zeros(cfg.d, cfg.d),
                         Linear::zeros(cfg.d, cfg.d), Linear::zeros(cfg.d, cfg.d),
                         Tensor({bins * bins * bins, cfg.heads})};
}

AttentionParams AttentionParams::random(const AttentionConfig& cfg, std::mt19937_64& rng) {
  AttentionParams p = zeros(cfg);
  p.q = Linear::random(cfg.d, cfg.d, rng);
  p.k = Linear::random(cfg.d, cfg.d, rng);
  p.v = Linear::random(cfg.d, cfg.d, rng);
  p.o = Linear::random(cfg.d, cfg.d, rng);
  init_uniform(p.bias_table, 0.1, rng);
  return p;
}

namespace {

bool token_less(const Token& a, const Token& b) {
  for (int i = 0; i < 3; ++i)
    if (a.position[i] != b.position[i]) return a.position[i] < b.position[i];
  return std::lexicographical_compare(a.feature.begin(), a.feature.end(), b.feature.begin(),
                                      b.feature.end());
}

std::vector<int> canonical_order(const TokenBank& bank) {
  std::vector<int> order;
  for (std::size_t j = 0; j < bank.size(); ++j)
    if (bank.mask[j]) order.push_back(static_cast<int>(j));
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return token_less(bank.tokens[a], bank.tokens[b]); });
  return order;
}

}  // namespace

std::vector<std::vector<double>> cross_attention(std::span<const Token> queries,
                                                 const TokenBank& bank,
                                                 const AttentionParams& params,
                                                 const AttentionConfig& cfg,
                                                 AttentionCache* cache) {
  if (bank.mask.size() != bank.tokens.size())
    throw std::invalid_argument("cross_attention: mask not aligned with bank");
  const int d = cfg.d;
  const int heads = cfg.heads;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  AttentionCache local;
  AttentionCache& c = cache ? *cache : local;
  c = AttentionCache{};
  c.order = canonical_order(bank);
  const std::size_t n = c.order.size();
  for (int slot : c.order) {
    const auto& f = bank.tokens[slot].feature;
    if (static_cast<int>(f.size()) != d) throw std::invalid_argument("cross_attention: bank width != d");
    c.k_in.push_back(f);
    c.k_proj.push_back(params.k(f));
    c.v_proj.push_back(params.v(f));
  }

  std::vector<std::vector<double>> out;
  out.reserve(queries.size());
  for (const Token& query : queries) {
    if (static_cast<int>(query.feature.size()) != d)
      throw std::invalid_argument("cross_attention: query width != d");
    c.q_in.push_back(query.feature);
    c.q_proj.push_back(params.q(query.feature));
    const std::vector<double>& q = c.q_proj.back();
    std::vector<int> bins(n);
    for (std::size_t j = 0; j < n; ++j)
      bins[j] = relative_bias_bin(bank.tokens[c.order[j]].position - query.position, cfg);
    c.bias_bins.push_back(bins);
    if (n == 0) {
      c.probs.emplace_back();
      c.concat.emplace_back();
      out.emplace_back(d, 0.0);
      continue;
    }
    std::vector<double> probs(static_cast<std::size_t>(heads) * n);
    std::vector<double> concat(d, 0.0);
    for (int h = 0; h < heads; ++h) {
      double* p = probs.data() + static_cast<std::size_t>(h) * n;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (int e = h * dh; e < (h + 1) * dh; ++e) dot += q[e] * c.k_proj[j][e];
        p[j] = dot * scale + params.bias_table[static_cast<std::size_t>(bins[j]) * heads + h];
        peak = std::max(peak, p[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        p[j] = std::exp(p[j] - peak);
        total += p[j];
      }
      for (std::size_t j = 0; j < n; ++j) p[j] /= total;
      for (std::size_t j = 0; j < n; ++j)
        for (int e = h * dh; e < (h + 1) * dh; ++e) concat[e] += p[j] * c.v_proj[j][e];
    }
    out.push_back(params.o(concat));
    c.probs.push_back(std::move(probs));
    c.concat.push_back(std::move(concat));
  }
  return out;
}

void cross_attention_backward(const AttentionCache& c, const TokenBank& bank,
                              const AttentionParams& params, const AttentionConfig& cfg,
                              const std::vector<std::vector<double>>& dout, AttentionParams& grad,
                              std::vector<std::vector<double>>* dq,
                              std::vector<std::vector<double>>* dbank) {
  const int d = cfg.d;
  const int heads = cfg.heads;
  const int dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t n = c.order.size();
  if (dq) dq->assign(c.q_in.size(), std::vector<double>(d, 0.0));
  if (dbank) dbank->assign(bank.size(), std::vector<double>(d, 0.0));
  if (n == 0) return;

  std::vector<std::vector<double>> dk(n, std::vector<double>(d, 0.0));
  std::vector<std::vector<double>> dv(n, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < c.q_in.size(); ++i) {
    std::vector<double> dconcat(d, 0.0);
    params.o.backward(c.concat[i], dout[i], grad.o, dconcat);
    std::vector<double> dqp(d, 0.0);
    const std::vector<double>& q = c.q_proj[i];
    for (int h = 0; h < heads; ++h) {
      const double* p = c.probs[i].data() + static_cast<std::size_t>(h) * n;
      std::vector<double> dp(n);
      double weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int e = h * dh; e < (h + 1) * dh; ++e) {
          acc += dconcat[e] * c.v_proj[j][e];
          dv[j][e] += p[j] * dconcat[e];
        }
        dp[j] = acc;
        weighted += p[j] * acc;
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double ds = p[j] * (dp[j] - weighted);
        grad.bias_table[static_cast<std::size_t>(c.bias_bins[i][j]) * heads + h] += ds;
        for (int e = h * dh; e < (h + 1) * dh; ++e) {
          dqp[e] += ds * scale * c.k_proj[j][e];
          dk[j][e] += ds * scale * q[e];
        }
      }
    }
    params.q.backward(c.q_in[i], dqp, grad.q, dq ? std::span<double>((*dq)[i]) : std::span<double>());
  }
  for (std::size_t j = 0; j < n; ++j) {
    std::span<double> dx = dbank ? std::span<double>((*dbank)[c.order[j]]) : std::span<double>();
    params.k.backward(c.k_in[j], dk[j], grad.k, dx);
    params.v.backward(c.k_in[j], dv[j], grad.v, dx);
  }
}

TransformerWeights TransformerWeights::zeros(const AttentionConfig& cfg, int voxel_channels) {
  cfg.validate();
  TransformerWeights w;
  w.voxel_embed = Linear::zeros(voxel_channels, cfg.d);
  w.point_embed = Linear::zeros(kPointFeatures, cfg.d);
  for (int l = 0; l < cfg.layers; ++l) {
    w.layers.push_back(TransformerLayer{LayerNorm::identity(cfg.d), LayerNorm::identity(cfg.d),
                                        AttentionParams::zeros(cfg), LayerNorm::identity(cfg.d),
                                        Linear::zeros(cfg.d, 2 * cfg.d), Linear::zeros(2 * cfg.d, cfg.d)});
  }
  return w;
}

TransformerWeights TransformerWeights::zero_gradient(const AttentionConfig& cfg, int voxel_channels) {
  TransformerWeights g = zeros(cfg, voxel_channels);
  g.visit("", [](const std::string&, Tensor& t) { t.fill(0.0); });
  return g;
}

TransformerWeights TransformerWeights::random(const AttentionConfig& cfg, int voxel_channels,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TransformerWeights w = zeros(cfg, voxel_channels);
  w.voxel_embed = Linear::random(voxel_channels, cfg.d, rng);
  w.point_embed = Linear::random(kPointFeatures, cfg.d, rng);
  for (auto& layer : w.layers) {
    layer.attn = AttentionParams::random(cfg, rng);
    layer.ffn1 = Linear::random(cfg.d, 2 * cfg.d, rng);
    layer.ffn2 = Linear::random(2 * cfg.d, cfg.d, rng);
  }
  return w;
}

TokenBank fuse_banks(const TokenBank& voxel_tokens, const TokenBank& point_tokens,
                     const TransformerWeights& weights) {
  TokenBank bank;
  auto append = [&](const TokenBank& src, const Linear& embed) {
    for (std::size_t j = 0; j < src.size(); ++j) {
      const bool valid = src.mask[j] != 0;
      bank.push(Token{src.tokens[j].position,
                      valid ? embed(src.tokens[j].feature) : std::vector<double>(embed.out(), 0.0)},
                valid);
    }
  };
  append(voxel_tokens, weights.voxel_embed);
  append(point_tokens, weights.point_embed);
  return bank;
}

std::vector<Token> transformer_block(std::span<const Token> queries, const TokenBank& bank,
                                     const TransformerLayer& layer, const AttentionConfig& cfg,
                                     LayerCache* cache) {
  LayerCache local;
  LayerCache& c = cache ? *cache : local;
  c = LayerCache{};

  c.normed_bank.mask = bank.mask;
  c.nkv.resize(bank.size());
  for (std::size_t j = 0; j < bank.size(); ++j) {
    const Token& t = bank.tokens[j];
    c.normed_bank.tokens.push_back(
        Token{t.position, bank.mask[j] ? layer.norm_kv.forward(t.feature, &c.nkv[j]) : t.feature});
  }

  std::vector<Token> normed_q;
  c.nq.resize(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i)
    normed_q.push_back(Token{queries[i].position, layer.norm_q.forward(queries[i].feature, &c.nq[i])});
  const auto attn = cross_attention(normed_q, c.normed_bank, layer.attn, cfg, &c.attn);

  std::vector<Token> out;
  c.nffn.resize(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::vector<double> x = queries[i].feature;
    for (std::size_t e = 0; e < x.size(); ++e) x[e] += attn[i][e];
    c.x_mid.push_back(x);
    c.ffn_in.push_back(layer.norm_ffn.forward(x, &c.nffn[i]));
    std::vector<double> h = layer.ffn1(c.ffn_in.back());
    c.hidden.push_back(h);
    for (double& v : h) v = gelu(v);
    const std::vector<double> y = layer.ffn2(h);
    for (std::size_t e = 0; e < x.size(); ++e) x[e] += y[e];
    out.push_back(Token{queries[i].position, std::move(x)});
  }
  return out;
}

std::vector<std::vector<double>> transformer_forward(std::span<const Token> queries,
                                                     const TokenBank& bank,
                                                     const TransformerWeights& weights,
                                                     const AttentionConfig& cfg,
                                                     TransformerCache* cache) {
  if (cache) cache->layers.assign(weights.layers.size(), LayerCache{});
  std::vector<Token> x(queries.begin(), queries.end());
  for (std::size_t l = 0; l < weights.layers.size(); ++l)
    x = transformer_block(x, bank, weights.layers[l], cfg, cache ? &cache->layers[l] : nullptr);
  std::vector<std::vector<double>> out;
  out.reserve(x.size());
  for (Token& t : x) out.push_back(std::move(t.feature));
  return out;
}

void transformer_backward(const TransformerCache& cache, std::span<const Token> queries,
                          const TokenBank& bank, const TransformerWeights& weights,
                          const AttentionConfig& cfg,
                          const std::vector<std::vector<double>>& dout, TransformerWeights& grad,
                          std::vector<std::vector<double>>* dq,
                          std::vector<std::vector<double>>* dbank) {
  const int d = cfg.d;
  std::vector<std::vector<double>> dx = dout;
  std::vector<std::vector<double>> dbank_total(bank.size(), std::vector<double>(d, 0.0));

  for (std::size_t l = weights.layers.size(); l-- > 0;) {
    const TransformerLayer& layer = weights.layers[l];
    TransformerLayer& g = grad.layers[l];
    const LayerCache& c = cache.layers[l];

    // FFN branch; dx accumulates the residual path.
    for (std::size_t i = 0; i < queries.size(); ++i) {
      std::vector<double> act = c.hidden[i];
      for (double& v : act) v = gelu(v);
      std::vector<double> dact(act.size(), 0.0);
      layer.ffn2.backward(act, dx[i], g.ffn2, dact);
      for (std::size_t e = 0; e < dact.size(); ++e) dact[e] *= gelu_grad(c.hidden[i][e]);
      std::vector<double> dffn_in(d, 0.0);
      layer.ffn1.backward(c.ffn_in[i], dact, g.ffn1, dffn_in);
      layer.norm_ffn.backward(c.nffn[i], dffn_in, g.norm_ffn, dx[i]);
    }

    std::vector<std::vector<double>> dnq;
    std::vector<std::vector<double>> dnbank;
    cross_attention_backward(c.attn, c.normed_bank, layer.attn, cfg, dx, g.attn, &dnq, &dnbank);
    for (std::size_t i = 0; i < queries.size(); ++i)
      layer.norm_q.backward(c.nq[i], dnq[i], g.norm_q, dx[i]);
    for (std::size_t j = 0; j < bank.size(); ++j)
      if (bank.mask[j]) layer.norm_kv.backward(c.nkv[j], dnbank[j], g.norm_kv, dbank_total[j]);
  }
  if (dq) *dq = std::move(dx);
  if (dbank) *dbank = std::move(dbank_total);
}

}  // namespace vpdet
