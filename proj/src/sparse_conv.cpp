#include "vpdet/sparse_conv.hpp"

#include <algorithm>
#include <cmath>

namespace vpdet {

namespace {

int floor_div2(int v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

void check_channels(const SparseTensor3D& input, const ConvParams& params) {
  if (params.kernel.shape.size() != 3 || params.taps() != kTaps3d)
    throw std::invalid_argument("sparse conv: kernel must be (27, in, out)");
  if (params.in_channels() != input.channels)
    throw std::invalid_argument("sparse conv: kernel expects " +
                                std::to_string(params.in_channels()) + " input channels, got " +
                                std::to_string(input.channels));
  if (static_cast<int>(params.bias.size()) != params.out_channels())
    throw std::invalid_argument("sparse conv: bias width mismatch");
}

}  // namespace

CoordIndex SparseTensor3D::build_index() const {
  if (feats.size() != coords.size() * static_cast<std::size_t>(channels))
    throw std::invalid_argument("SparseTensor3D: feature buffer size mismatch");
  CoordIndex index;
  index.reserve(coords.size() * 2);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!index.emplace(coords[i], static_cast<int>(i)).second)
      throw std::invalid_argument("SparseTensor3D: duplicate coordinate");
  }
  return index;
}

ConvParams ConvParams::zeros(int taps, int in, int out) {
  return ConvParams{Tensor({taps, in, out}), Tensor({out})};
}

ConvParams ConvParams::random(int taps, int in, int out, std::mt19937_64& rng) {
  ConvParams p = zeros(taps, in, out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(taps) * in);
  init_uniform(p.kernel, bound, rng);
  init_uniform(p.bias, bound, rng);
  return p;
}

Rulebook submanifold_rulebook(const SparseTensor3D& input) {
  const CoordIndex index = input.build_index();
  Rulebook rules;
  rules.out_coords = input.coords;
  rules.out_stride = input.stride;
  rules.neighbors.assign(input.size() * kTaps3d, -1);
  for (std::size_t o = 0; o < input.size(); ++o) {
    const Coord3& c = input.coords[o];
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = index.find(Coord3{c.x + dx, c.y + dy, c.z + dz});
          if (it != index.end()) rules.neighbors[o * kTaps3d + tap_index(dx, dy, dz)] = it->second;
        }
  }
  return rules;
}

Rulebook strided_rulebook(const SparseTensor3D& input) {
  const CoordIndex index = input.build_index();
  Rulebook rules;
  rules.out_stride = input.stride * 2;
  for (const Coord3& c : input.coords)
    rules.out_coords.push_back(Coord3{floor_div2(c.x), floor_div2(c.y), floor_div2(c.z)});
  std::sort(rules.out_coords.begin(), rules.out_coords.end());
  rules.out_coords.erase(std::unique(rules.out_coords.begin(), rules.out_coords.end()),
                         rules.out_coords.end());
  rules.neighbors.assign(rules.out_coords.size() * kTaps3d, -1);
  for (std::size_t o = 0; o < rules.out_coords.size(); ++o) {
    const Coord3& p = rules.out_coords[o];
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = index.find(Coord3{2 * p.x + dx, 2 * p.y + dy, 2 * p.z + dz});
          if (it != index.end()) rules.neighbors[o * kTaps3d + tap_index(dx, dy, dz)] = it->second;
        }
  }
  return rules;
}

SparseTensor3D apply_sparse_conv(const SparseTensor3D& input, const Rulebook& rules,
                                 const ConvParams& params) {
  check_channels(input, params);
  const int cin = params.in_channels();
  const int cout = params.out_channels();
  SparseTensor3D out;
  out.coords = rules.out_coords;
  out.channels = cout;
  out.stride = rules.out_stride;
  out.feats.assign(out.coords.size() * cout, 0.0);
  const double* kernel = params.kernel.data.data();
  for (std::size_t o = 0; o < out.coords.size(); ++o) {
    double* y = out.feats.data() + o * cout;
    for (int c = 0; c < cout; ++c) y[c] = params.bias[c];
    for (int t = 0; t < kTaps3d; ++t) {
      const int j = rules.neighbors[o * kTaps3d + t];
      if (j < 0) continue;
      const double* x = input.feats.data() + static_cast<std::size_t>(j) * cin;
      const double* w = kernel + static_cast<std::size_t>(t) * cin * cout;
      for (int i = 0; i < cin; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* wrow = w + static_cast<std::size_t>(i) * cout;
        for (int c = 0; c < cout; ++c) y[c] += xi * wrow[c];
      }
    }
  }
  return out;
}

void sparse_conv_backward(const SparseTensor3D& input, const Rulebook& rules,
                          const ConvParams& params, std::span<const double> doutput,
                          ConvParams& grad, std::span<double> dinput) {
  const int cin = params.in_channels();
  const int cout = params.out_channels();
  const double* kernel = params.kernel.data.data();
  double* gkernel = grad.kernel.data.data();
  for (std::size_t o = 0; o < rules.out_coords.size(); ++o) {
    const double* dy = doutput.data() + o * cout;
    for (int c = 0; c < cout; ++c) grad.bias[c] += dy[c];
    for (int t = 0; t < kTaps3d; ++t) {
      const int j = rules.neighbors[o * kTaps3d + t];
      if (j < 0) continue;
      const double* x = input.feats.data() + static_cast<std::size_t>(j) * cin;
      const std::size_t base = static_cast<std::size_t>(t) * cin * cout;
      for (int i = 0; i < cin; ++i) {
        double* gw = gkernel + base + static_cast<std::size_t>(i) * cout;
        const double* w = kernel + base + static_cast<std::size_t>(i) * cout;
        double acc = 0.0;
        for (int c = 0; c < cout; ++c) {
          gw[c] += x[i] * dy[c];
          acc += w[c] * dy[c];
        }
        if (!dinput.empty()) dinput[static_cast<std::size_t>(j) * cin + i] += acc;
      }
    }
  }
}

SparseTensor3D submanifold_conv(const SparseTensor3D& input, const ConvParams& params) {
  check_channels(input, params);
  return apply_sparse_conv(input, submanifold_rulebook(input), params);
}

SparseTensor3D strided_conv(const SparseTensor3D& input, const ConvParams& params) {
  check_channels(input, params);
  return apply_sparse_conv(input, strided_rulebook(input), params);
}

}  // namespace vpdet
