#pragma once

// Small feed-forward network with hand-written reverse mode and Adam.
// Batches are column-major: one sample per column.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "oap/errors.hpp"
#include "oap/io.hpp"
#include "oap/rng.hpp"

namespace oap {

enum class OutputActivation { Identity, Tanh };

struct MlpSpec {
  std::vector<int> widths;  // input, hidden..., output
  OutputActivation output = OutputActivation::Identity;
  double output_scale = 1.0;  // tanh outputs are scaled into [-scale, scale]
  double dropout = 0.0;       // hidden layers only, train mode only
};

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

// Same shapes as the parameter layers.
using Gradients = std::vector<Layer>;

struct Backprop {
  Gradients params;
  Eigen::MatrixXd input;  // dL/dx, same shape as the forward input
};

inline void accumulate(Gradients& into, const Gradients& g) {
  for (std::size_t l = 0; l < into.size(); ++l) {
    into[l].weight += g[l].weight;
    into[l].bias += g[l].bias;
  }
}

class MlpNet {
 public:
  MlpNet() = default;

  // All-zero parameters.
  explicit MlpNet(MlpSpec spec) : spec_(std::move(spec)) {
    validate_spec();
    for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
      const int in = spec_.widths[l];
      const int out = spec_.widths[l + 1];
      layers_.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
    }
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  MlpNet(MlpSpec spec, Rng& rng) : MlpNet(std::move(spec)) {
    for (auto& layer : layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = rng.uniform(-bound, bound);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = rng.uniform(-bound, bound);
    }
  }

  const MlpSpec& spec() const { return spec_; }
  int input_width() const { return spec_.widths.front(); }
  int output_width() const { return spec_.widths.back(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    return n;
  }

  // Caches activations for backward(). `rng` is required when dropout is active.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, bool train_mode, Rng* rng = nullptr) {
    check_input(x);
    const bool drop = train_mode && spec_.dropout > 0.0;
    if (drop && rng == nullptr) throw StateError("dropout in train mode needs a random stream");
    const std::size_t n_layers = layers_.size();
    cache_.inputs.resize(n_layers);
    cache_.pre.resize(n_layers);
    cache_.masks.assign(n_layers, Eigen::MatrixXd());
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
      cache_.inputs[l] = a;
      Eigen::MatrixXd z = (layers_[l].weight * a).colwise() + layers_[l].bias;
      if (l + 1 < n_layers) {
        a = z.cwiseMax(0.0);
        if (drop) {
          const double keep = 1.0 - spec_.dropout;
          Eigen::MatrixXd mask(a.rows(), a.cols());
          for (Eigen::Index k = 0; k < mask.size(); ++k) mask(k) = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
          a = a.cwiseProduct(mask);
          cache_.masks[l] = std::move(mask);
        }
      } else {
        a = apply_output(z);
      }
      cache_.pre[l] = std::move(z);
    }
    cache_.valid = true;
    return a;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& x, bool train_mode = false, Rng* rng = nullptr) {
    Eigen::MatrixXd m = x;
    return forward(m, train_mode, rng).col(0);
  }

  // Evaluation-mode pass without touching the cache.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const {
    check_input(x);
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::MatrixXd z = (layers_[l].weight * a).colwise() + layers_[l].bias;
      a = (l + 1 < layers_.size()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : apply_output(z);
    }
    return a;
  }

  Eigen::VectorXd predict(std::span<const double> x) const {
    Eigen::MatrixXd m = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return predict(m).col(0);
  }

  // Gradients of sum(output_grad .* output) w.r.t. parameters and input,
  // for the most recent forward().
  Backprop backward(const Eigen::MatrixXd& output_grad) const {
    if (!cache_.valid) throw StateError("backward() without a cached forward pass");
    const std::size_t n_layers = layers_.size();
    const Eigen::Index batch = cache_.inputs.front().cols();
    if (output_grad.rows() != output_width() || output_grad.cols() != batch)
      throw ShapeError("output gradient shape does not match the cached forward pass");
    Backprop out;
    out.params.resize(n_layers);
    Eigen::MatrixXd g = output_grad;
    for (std::size_t l = n_layers; l-- > 0;) {
      const Eigen::MatrixXd& z = cache_.pre[l];
      Eigen::MatrixXd dz;
      if (l + 1 == n_layers) {
        if (spec_.output == OutputActivation::Tanh) {
          dz = g.array() * (spec_.output_scale * (1.0 - z.array().tanh().square()));
        } else {
          dz = g;
        }
      } else {
        if (cache_.masks[l].size() > 0) g = g.cwiseProduct(cache_.masks[l]);
        dz = g.array() * (z.array() > 0.0).cast<double>();
      }
      out.params[l].weight = dz * cache_.inputs[l].transpose();
      out.params[l].bias = dz.rowwise().sum();
      g = layers_[l].weight.transpose() * dz;
    }
    out.input = std::move(g);
    return out;
  }

  bool has_cache() const { return cache_.valid; }
  void clear_cache() { cache_ = Cache{}; }

  Gradients zero_gradients() const {
    Gradients g;
    for (const auto& layer : layers_)
      g.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                   Eigen::VectorXd::Zero(layer.bias.size())});
    return g;
  }

  // Flattened per layer: weights row-major, then biases.
  std::vector<double> parameters() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& layer : layers_) {
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) flat.push_back(layer.weight(i, j));
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) flat.push_back(layer.bias(i));
    }
    return flat;
  }

  void set_parameters(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ShapeError("parameter vector has the wrong length");
    std::size_t k = 0;
    for (auto& layer : layers_) {
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = flat[k++];
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = flat[k++];
    }
    cache_.valid = false;
  }

  // this <- tau * source + (1 - tau) * this
  void soft_update_from(const MlpNet& source, double tau) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].weight = tau * source.layers_[l].weight + (1.0 - tau) * layers_[l].weight;
      layers_[l].bias = tau * source.layers_[l].bias + (1.0 - tau) * layers_[l].bias;
    }
  }

 private:
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;
    std::vector<Eigen::MatrixXd> pre;
    std::vector<Eigen::MatrixXd> masks;
    bool valid = false;
  };

  void validate_spec() const {
    if (spec_.widths.size() < 2) throw ConfigError("network needs at least input and output widths");
    for (int w : spec_.widths)
      if (w <= 0) throw ConfigError("layer widths must be positive");
    if (!(spec_.dropout >= 0.0 && spec_.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  }

  void check_input(const Eigen::MatrixXd& x) const {
    if (x.rows() != input_width())
      throw ShapeError("input has " + std::to_string(x.rows()) + " rows, network expects " +
                       std::to_string(input_width()));
  }

  Eigen::MatrixXd apply_output(const Eigen::MatrixXd& z) const {
    if (spec_.output == OutputActivation::Tanh) return spec_.output_scale * z.array().tanh().matrix();
    return z;
  }

  MlpSpec spec_;
  std::vector<Layer> layers_;
  Cache cache_;
};

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(const MlpNet& net, AdamConfig cfg) : config(cfg), first(net.zero_gradients()), second(net.zero_gradients()) {}

  AdamConfig config;
  std::uint64_t step_count = 0;
  Gradients first;
  Gradients second;
};

inline bool all_finite(const Gradients& g) {
  for (const auto& layer : g)
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  return true;
}

// Bias-corrected Adam update.
inline void adam_step(MlpNet& net, const Gradients& grads, AdamState& state) {
  if (grads.size() != net.layers().size()) throw ShapeError("gradient layer count mismatch");
  if (!all_finite(grads)) throw NumericError("non-finite gradient passed to adam_step");
  const AdamConfig& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() -= c.learning_rate * (m.array() / correct1) / ((v.array() / correct2).sqrt() + c.epsilon);
  };
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, state.first[l].weight, state.second[l].weight, grads[l].weight);
    update(layers[l].bias, state.first[l].bias, state.second[l].bias, grads[l].bias);
  }
}

// Parameter snapshot: "OAPNET v1 widths=a,b,c" then one value per line.
inline void save_snapshot(const MlpNet& net, std::ostream& out) {
  out << "OAPNET v1 widths=";
  const auto& w = net.spec().widths;
  for (std::size_t i = 0; i < w.size(); ++i) out << (i ? "," : "") << w[i];
  out << '\n';
  for (double p : net.parameters()) out << format_double(p) << '\n';
}

inline void save_snapshot(const MlpNet& net, const std::string& path) {
  std::ostringstream ss;
  save_snapshot(net, ss);
  write_file(path, ss.str());
}

// `spec` supplies activation and dropout; its widths must match the file
// (an empty widths list adopts the file's).
inline MlpNet load_snapshot(std::istream& in, MlpSpec spec) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "empty snapshot");
  constexpr std::string_view prefix = "OAPNET v1 widths=";
  if (line.rfind(prefix, 0) != 0) throw ParseError(1, "missing 'OAPNET v1 widths=' header");
  std::vector<int> widths;
  for (auto tok : split(std::string_view(line).substr(prefix.size()), ',')) {
    int w = 0;
    if (!parse_int(tok, w) || w <= 0) throw ParseError(1, "bad width '" + std::string(tok) + "'");
    widths.push_back(w);
  }
  if (!spec.widths.empty() && spec.widths != widths) throw ParseError(1, "widths do not match the expected network");
  spec.widths = widths;
  MlpNet net(spec);
  std::vector<double> flat;
  flat.reserve(net.parameter_count());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = split_whitespace(line);
    if (toks.empty()) continue;
    double v = 0.0;
    if (toks.size() != 1 || !parse_double(toks[0], v)) throw ParseError(line_no, "expected one number");
    flat.push_back(v);
  }
  if (flat.size() != net.parameter_count())
    throw ParseError(line_no, "expected " + std::to_string(net.parameter_count()) + " parameters, found " +
                                  std::to_string(flat.size()));
  net.set_parameters(flat);
  return net;
}

inline MlpNet load_snapshot(const std::string& path, MlpSpec spec) {
  std::istringstream ss(read_file(path));
  return load_snapshot(ss, std::move(spec));
}

}  // namespace oap
