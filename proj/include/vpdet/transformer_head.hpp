#pragma once

// Context banks (voxel KNN tokens and range-view point tokens) and the
// pre-LN cross-attention stack with a learned relative positional bias.

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vpdet/nn.hpp"
#include "vpdet/point_fusion.hpp"
#include "vpdet/sparse_conv.hpp"

namespace vpdet {

struct Token {
  Vec3 position = Vec3::Zero();
  std::vector<double> feature;
};

/// Tokens plus a validity mask. Slots with mask 0 are padding and never
/// attended to.
struct TokenBank {
  std::vector<Token> tokens;
  std::vector<unsigned char> mask;

  std::size_t size() const { return tokens.size(); }
  std::size_t valid_count() const;
  void push(Token t, bool valid = true);
};

struct AttentionConfig {
  int heads = 4;
  int d = 128;
  int layers = 3;
  int bias_bins = 15;
  double bias_range = 4.0;
  int k_voxel = 16;
  int k_point = 32;

  int head_dim() const { return d / heads; }
  void validate() const;
};

/// Voxel (i, j, k) of a stride-s tensor is centered at
/// origin + (index + 0.5) * voxel_size * s.
struct VoxelGeometry {
  double voxel_size = 0.05;
  Vec3 origin = Vec3::Zero();
};

/// The k active voxels closest to `center` (ties by coordinate), padded with
/// masked zero tokens up to k.
TokenBank gather_voxel_tokens(const Vec3& center, const SparseTensor3D& voxels,
                              const VoxelGeometry& geom, int k);

class RangeViewIndex {
 public:
  RangeViewIndex() = default;
  RangeViewIndex(const FusedCloud& cloud, int azimuth_bins, int inclination_bins);

  int azimuth_bins() const { return az_bins_; }
  int inclination_bins() const { return incl_bins_; }
  double min_inclination() const { return min_incl_; }
  double max_inclination() const { return max_incl_; }
  std::size_t point_count() const { return positions_.size(); }
  std::size_t occupied_bins() const { return cells_.size(); }

  int azimuth_bin(double azimuth) const;
  int inclination_bin(double inclination) const;
  const std::vector<int>& bin(int a, int i) const;

  /// Exact k nearest indexed points to `center`, ordered by (distance,
  /// index). The search window grows until no point outside it can be closer
  /// than the current k-th neighbor.
  std::vector<int> knn(const Vec3& center, int k) const;

 private:
  int az_bins_ = 1;
  int incl_bins_ = 1;
  double min_incl_ = 0.0;
  double max_incl_ = 0.0;
  std::vector<Vec3> positions_;
  std::map<std::pair<int, int>, std::vector<int>> cells_;
};

RangeViewIndex build_range_index(const FusedCloud& cloud, int azimuth_bins, int inclination_bins);

/// k nearest points as 8-D feature tokens, padded with masked tokens to k.
TokenBank gather_point_tokens(const Vec3& center, const RangeViewIndex& index,
                              const FusedCloud& cloud, int k);
/// Same, with features lifted by a shared linear embedding.
TokenBank gather_point_tokens(const Vec3& center, const RangeViewIndex& index,
                              const FusedCloud& cloud, int k, const Linear& embed);

/// Row of the (bins^3, heads) bias table for offset delta = k_pos - q_pos.
int relative_bias_bin(const Vec3& delta, const AttentionConfig& cfg);
double relative_bias(const Vec3& q_pos, const Vec3& k_pos, const Tensor& table, int head,
                     const AttentionConfig& cfg);

struct AttentionParams {
  Linear q, k, v, o;
  Tensor bias_table;  // (bins^3, heads)

  static AttentionParams zeros(const AttentionConfig& cfg);
  static AttentionParams random(const AttentionConfig& cfg, std::mt19937_64& rng);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    q.visit(prefix + ".q", f);
    k.visit(prefix + ".k", f);
    v.visit(prefix + ".v", f);
    o.visit(prefix + ".o", f);
    f(prefix + ".bias_table", bias_table);
  }
};

struct AttentionCache {
  std::vector<std::vector<double>> q_in, q_proj;
  std::vector<std::vector<double>> k_in, k_proj, v_proj;
  std::vector<int> order;                          // valid bank slots, canonical order
  std::vector<std::vector<int>> bias_bins;         // [query][slot]
  std::vector<std::vector<double>> probs;          // [query][head * order.size() + j]
  std::vector<std::vector<double>> concat;         // [query], empty when no valid key
};

/// Multi-head attention of each query over the valid bank slots. Reductions
/// over the bank run in a canonical token order, so permuting the bank
/// leaves the result bit-identical. A query with no valid key gets zeros.
std::vector<std::vector<double>> cross_attention(std::span<const Token> queries,
                                                 const TokenBank& bank,
                                                 const AttentionParams& params,
                                                 const AttentionConfig& cfg,
                                                 AttentionCache* cache = nullptr);

/// Accumulates parameter gradients; adds input gradients into dq / dbank
/// (per query / per bank slot) when they are non-empty.
void cross_attention_backward(const AttentionCache& cache, const TokenBank& bank,
                              const AttentionParams& params, const AttentionConfig& cfg,
                              const std::vector<std::vector<double>>& dout, AttentionParams& grad,
                              std::vector<std::vector<double>>* dq,
                              std::vector<std::vector<double>>* dbank);

struct TransformerLayer {
  LayerNorm norm_q;
  LayerNorm norm_kv;
  AttentionParams attn;
  LayerNorm norm_ffn;
  Linear ffn1;  // d -> 2d
  Linear ffn2;  // 2d -> d

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    norm_q.visit(prefix + ".norm_q", f);
    norm_kv.visit(prefix + ".norm_kv", f);
    attn.visit(prefix + ".attn", f);
    norm_ffn.visit(prefix + ".norm_ffn", f);
    ffn1.visit(prefix + ".ffn1", f);
    ffn2.visit(prefix + ".ffn2", f);
  }
};

struct TransformerWeights {
  Linear voxel_embed;  // voxel channels -> d
  Linear point_embed;  // 8 -> d
  std::vector<TransformerLayer> layers;

  /// Identity norms, zero linear maps and bias tables.
  static TransformerWeights zeros(const AttentionConfig& cfg, int voxel_channels);
  static TransformerWeights random(const AttentionConfig& cfg, int voxel_channels,
                                   std::uint64_t seed);
  /// Same shapes with every tensor zero, for accumulating gradients.
  static TransformerWeights zero_gradient(const AttentionConfig& cfg, int voxel_channels);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    voxel_embed.visit(prefix + ".voxel_embed", f);
    point_embed.visit(prefix + ".point_embed", f);
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].visit(prefix + ".layer" + std::to_string(i), f);
  }
};

/// Concatenates embedded voxel tokens and point tokens into one bank.
TokenBank fuse_banks(const TokenBank& voxel_tokens, const TokenBank& point_tokens,
                     const TransformerWeights& weights);

struct LayerCache {
  std::vector<LayerNorm::Cache> nq, nkv, nffn;
  TokenBank normed_bank;
  AttentionCache attn;
  std::vector<std::vector<double>> x_mid;     // after the attention residual
  std::vector<std::vector<double>> ffn_in;    // normalized x_mid
  std::vector<std::vector<double>> hidden;    // ffn1 output, pre-activation
};

struct TransformerCache {
  std::vector<LayerCache> layers;
};

/// One pre-LN layer: x += attn(norm_q(x), norm_kv(bank)); x += ffn(norm_ffn(x)).
std::vector<Token> transformer_block(std::span<const Token> queries, const TokenBank& bank,
                                     const TransformerLayer& layer, const AttentionConfig& cfg,
                                     LayerCache* cache = nullptr);

/// All layers in sequence over the same bank. Returns updated query features.
std::vector<std::vector<double>> transformer_forward(std::span<const Token> queries,
                                                     const TokenBank& bank,
                                                     const TransformerWeights& weights,
                                                     const AttentionConfig& cfg,
                                                     TransformerCache* cache = nullptr);

/// Accumulates gradients of sum(dout . output) into `grad` (start from
/// zero_gradient) and optionally the query and bank features.
void transformer_backward(const TransformerCache& cache, std::span<const Token> queries,
                          const TokenBank& bank, const TransformerWeights& weights,
                          const AttentionConfig& cfg,
                          const std::vector<std::vector<double>>& dout, TransformerWeights& grad,
                          std::vector<std::vector<double>>* dq = nullptr,
                          std::vector<std::vector<double>>* dbank = nullptr);

}  // namespace vpdet
