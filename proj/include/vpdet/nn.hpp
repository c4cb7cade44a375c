#pragma once

// Dense tensors, parameter containers and the small set of layers shared by
// the backbone, query initialization and transformer head. Everything is
// double precision so analytic gradients can be checked against central
// differences.

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vpdet {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  void fill(double v);
  Tensor zeros_like() const { return Tensor(shape); }
};

/// Fills `t` with U(-bound, bound).
void init_uniform(Tensor& t, double bound, std::mt19937_64& rng);

/// Fully connected layer, y = W x + b with W stored (out, in) row-major.
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear zeros(int in, int out);
  /// Uniform in +-1/sqrt(in) for both weight and bias.
  static Linear random(int in, int out, std::mt19937_64& rng);

  int in() const { return weight.dim(1); }
  int out() const { return weight.dim(0); }

  void forward(std::span<const double> x, std::span<double> y) const;
  std::vector<double> operator()(std::span<const double> x) const;
  /// Accumulates dW, db into `grad` and, when `dx` is non-empty, adds W^T dy
  /// into dx.
  void backward(std::span<const double> x, std::span<const double> dy, Linear& grad,
                std::span<double> dx) const;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

/// Per-token mean/variance normalization with learned scale and shift.
struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  static LayerNorm identity(int width);

  int width() const { return static_cast<int>(gamma.size()); }

  struct Cache {
    std::vector<double> xhat;
    double rstd = 0.0;
  };
  std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr) const;
  void backward(const Cache& cache, std::span<const double> dy, LayerNorm& grad,
                std::span<double> dx) const;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

double sigmoid(double x);
double gelu(double x);
double gelu_grad(double x);

/// Named tensors in a stable order; the unit of weight serialization.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

/// Writes the flat little-endian weight format: u32 tensor count, then per
/// tensor u32 name length, name bytes, u32 rank, u32 dims, float32 data.
void write_params(const std::string& path, const ParamList& params);
ParamList read_params(const std::string& path);

template <class W>
ParamList to_param_list(W& weights) {
  ParamList out;
  weights.visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

/// Copies tensors into `weights` by name. Throws ParseError when a tensor is
/// missing or its shape differs.
template <class W>
void assign_params(W& weights, const ParamList& params, const std::string& source);

void assign_tensor(Tensor& dst, const std::string& name,
                   const std::map<std::string, const Tensor*>& by_name, const std::string& source);

template <class W>
void assign_params(W& weights, const ParamList& params, const std::string& source) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : params) by_name[name] = &t;
  weights.visit([&](const std::string& name, Tensor& t) { assign_tensor(t, name, by_name, source); });
}

}  // namespace vpdet
