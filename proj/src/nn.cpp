#include "vpdet/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "vpdet/common.hpp"

namespace vpdet {

ParseError::ParseError(std::string file, int line, const std::string& message)
    : Error(file + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + message),
      file_(std::move(file)),
      line_(line) {}

StageError::StageError(std::string stage, const std::string& message)
    : Error("stage '" + stage + "': " + message), stage_(std::move(stage)) {}

double wrap_angle(double theta) {
  double t = std::fmod(theta + kPi, 2.0 * kPi);
  if (t < 0.0) t += 2.0 * kPi;
  t -= kPi;
  if (t >= kPi) t -= 2.0 * kPi;
  return t;
}

Tensor::Tensor(std::vector<int> dims, double fill) : shape(std::move(dims)) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  data.assign(n, fill);
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

void init_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data) v = dist(rng);
}

Linear Linear::zeros(int in, int out) { return Linear{Tensor({out, in}), Tensor({out})}; }

Linear Linear::random(int in, int out, std::mt19937_64& rng) {
  Linear l = zeros(in, out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  init_uniform(l.weight, bound, rng);
  init_uniform(l.bias, bound, rng);
  return l;
}

void Linear::forward(std::span<const double> x, std::span<double> y) const {
  const int n_in = in();
  const int n_out = out();
  if (static_cast<int>(x.size()) != n_in || static_cast<int>(y.size()) != n_out)
    throw std::invalid_argument("Linear: width mismatch");
  for (int o = 0; o < n_out; ++o) {
    const double* w = weight.data.data() + static_cast<std::size_t>(o) * n_in;
    double acc = bias[o];
    for (int i = 0; i < n_in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
}

std::vector<double> Linear::operator()(std::span<const double> x) const {
  std::vector<double> y(out());
  forward(x, y);
  return y;
}

void Linear::backward(std::span<const double> x, std::span<const double> dy, Linear& grad,
                      std::span<double> dx) const {
  const int n_in = in();
  const int n_out = out();
  for (int o = 0; o < n_out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    grad.bias[o] += g;
    double* gw = grad.weight.data.data() + static_cast<std::size_t>(o) * n_in;
    for (int i = 0; i < n_in; ++i) gw[i] += g * x[i];
    if (!dx.empty()) {
      const double* w = weight.data.data() + static_cast<std::size_t>(o) * n_in;
      for (int i = 0; i < n_in; ++i) dx[i] += g * w[i];
    }
  }
}

LayerNorm LayerNorm::identity(int width) {
  return LayerNorm{Tensor({width}, 1.0), Tensor({width}, 0.0)};
}

std::vector<double> LayerNorm::forward(std::span<const double> x, Cache* cache) const {
  const std::size_t n = x.size();
  if (static_cast<int>(n) != width()) throw std::invalid_argument("LayerNorm: width mismatch");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double rstd = 1.0 / std::sqrt(var + eps);
  std::vector<double> y(n);
  std::vector<double> xhat(n);
  for (std::size_t i = 0; i < n; ++i) {
    xhat[i] = (x[i] - mean) * rstd;
    y[i] = gamma[i] * xhat[i] + beta[i];
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = rstd;
  }
  return y;
}

void LayerNorm::backward(const Cache& cache, std::span<const double> dy, LayerNorm& grad,
                         std::span<double> dx) const {
  const std::size_t n = dy.size();
  std::vector<double> dxhat(n);
  double sum_dxhat = 0.0;
  double sum_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    grad.gamma[i] += dy[i] * cache.xhat[i];
    grad.beta[i] += dy[i];
    dxhat[i] = dy[i] * gamma[i];
    sum_dxhat += dxhat[i];
    sum_dxhat_xhat += dxhat[i] * cache.xhat[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] += cache.rstd * (dxhat[i] - inv_n * sum_dxhat - cache.xhat[i] * inv_n * sum_dxhat_xhat);
  }
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
  return cdf + x * pdf;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "weight serialization assumes a little-endian host");

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw ParseError(path, 0, "truncated weight file");
  return v;
}

}  // namespace

void write_params(const std::string& path, const ParamList& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

ParamList read_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open weight file");
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  const std::uint32_t count = get_u32(in, path);
  ParamList out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = get_u32(in, path);
    if (name_len > 4096) throw ParseError(path, 0, "implausible tensor name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw ParseError(path, 0, "truncated weight file");
    const std::uint32_t rank = get_u32(in, path);
    if (rank > 8) throw ParseError(path, 0, "implausible rank for tensor '" + name + "'");
    std::vector<int> dims(rank);
    std::uint64_t elements = 1;
    for (auto& d : dims) {
      const std::uint32_t v = get_u32(in, path);
      elements *= v;
      if (v > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) || elements > file_size)
        throw ParseError(path, 0, "tensor '" + name + "' is larger than the file");
      d = static_cast<int>(v);
    }
    if (elements * 4 > file_size - static_cast<std::uint64_t>(in.tellg()))
      throw ParseError(path, 0, "truncated data for tensor '" + name + "'");
    Tensor t(dims);
    std::vector<float> buf(t.size());
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4)))
      throw ParseError(path, 0, "truncated data for tensor '" + name + "'");
    for (std::size_t i = 0; i < buf.size(); ++i) t.data[i] = buf[i];
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void assign_tensor(Tensor& dst, const std::string& name,
                   const std::map<std::string, const Tensor*>& by_name, const std::string& source) {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw ParseError(source, 0, "missing tensor '" + name + "'");
  if (it->second->shape != dst.shape)
    throw ParseError(source, 0, "shape mismatch for tensor '" + name + "'");
  dst.data = it->second->data;
}

}  // namespace vpdet
