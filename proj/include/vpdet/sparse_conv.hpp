#pragma once

// Sparse 3D tensors and the submanifold / strided convolutions over them.
//
// Kernels are stored (taps, in, out) with tap index
//   t = ((dx + 1) * 3 + (dy + 1)) * 3 + (dz + 1),  dx, dy, dz in {-1, 0, 1}.
// A submanifold tap reads the input at out + (dx, dy, dz); a stride-2 tap
// reads the input at 2 * out + (dx, dy, dz).

#include <compare>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vpdet/common.hpp"
#include "vpdet/nn.hpp"

namespace vpdet {

struct Coord3 {
  int x = 0;
  int y = 0;
  int z = 0;

  auto operator<=>(const Coord3&) const = default;
};

struct Coord3Hash {
  std::size_t operator()(const Coord3& c) const noexcept {
    const auto packed = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.x)) << 42) ^
                        (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.y)) << 21) ^
                        static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.z));
    return static_cast<std::size_t>(mix64(packed));
  }
};

using CoordIndex = std::unordered_map<Coord3, int, Coord3Hash>;

inline constexpr int kTaps3d = 27;

constexpr int tap_index(int dx, int dy, int dz) { return ((dx + 1) * 3 + (dy + 1)) * 3 + (dz + 1); }

struct SparseTensor3D {
  std::vector<Coord3> coords;
  int channels = 0;
  std::vector<double> feats;  // coords.size() x channels, row-major
  int stride = 1;

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }
  std::span<const double> feature(std::size_t i) const {
    return {feats.data() + i * channels, static_cast<std::size_t>(channels)};
  }
  std::span<double> feature(std::size_t i) {
    return {feats.data() + i * channels, static_cast<std::size_t>(channels)};
  }

  /// Coordinate -> row map. Throws std::invalid_argument on duplicates or a
  /// feature buffer of the wrong length.
  CoordIndex build_index() const;
};

struct ConvParams {
  Tensor kernel;  // (taps, in, out)
  Tensor bias;    // (out)

  static ConvParams zeros(int taps, int in, int out);
  /// Uniform in +-1/sqrt(taps * in).
  static ConvParams random(int taps, int in, int out, std::mt19937_64& rng);

  int taps() const { return kernel.dim(0); }
  int in_channels() const { return kernel.dim(1); }
  int out_channels() const { return kernel.dim(2); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".kernel", kernel);
    f(prefix + ".bias", bias);
  }
};

/// Output sites plus, for every (output, tap), the contributing input row or -1.
struct Rulebook {
  std::vector<Coord3> out_coords;
  int out_stride = 1;
  std::vector<int> neighbors;  // out_coords.size() x kTaps3d
};

Rulebook submanifold_rulebook(const SparseTensor3D& input);
/// Output sites are the distinct floor(coord / 2), sorted.
Rulebook strided_rulebook(const SparseTensor3D& input);

SparseTensor3D apply_sparse_conv(const SparseTensor3D& input, const Rulebook& rules,
                                 const ConvParams& params);
/// Accumulates kernel/bias gradients into `grad`; adds input gradients into
/// `dinput` when it is non-empty.
void sparse_conv_backward(const SparseTensor3D& input, const Rulebook& rules,
                          const ConvParams& params, std::span<const double> doutput,
                          ConvParams& grad, std::span<double> dinput);

/// Output active set equals the input active set exactly.
SparseTensor3D submanifold_conv(const SparseTensor3D& input, const ConvParams& params);
/// Stride-2 convolution restricted to the parent cells of active inputs.
SparseTensor3D strided_conv(const SparseTensor3D& input, const ConvParams& params);

}  // namespace vpdet
