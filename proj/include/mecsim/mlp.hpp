#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mecsim/rng.hpp"

#include "json.hpp"

namespace mecsim {

// Fully-connected network: tanh hidden layers, identity output. Weights are
// row-major [out x in]. Sized by default as [input, 200, 200, actions].
struct Mlp {
  std::vector<int> dims;
  std::vector<std::vector<double>> weights;  // one per layer
  std::vector<std::vector<double>> biases;

  std::size_t num_layers() const { return weights.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      n += weights[l].size() + biases[l].size();
    }
    return n;
  }
};

// Per-parameter gradients, same shapes as the network.
struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
};

// Adaptive moment estimates, one pair per parameter.
struct OptimizerState {
  std::vector<std::vector<double>> m_weights, v_weights;
  std::vector<std::vector<double>> m_biases, v_biases;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline Mlp mlp_init(const std::vector<int>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("mlp_init: need >= 2 dims");
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("mlp_init: dims must be positive");
  }
  Mlp net;
  net.dims = dims;
  Rng rng(splitmix64(seed ^ 0xA3C59AC2ULL));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out);
    for (auto& x : w) x = rng.uniform(-bound, bound);
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(static_cast<std::size_t>(fan_out), 0.0);
  }
  return net;
}

inline OptimizerState optimizer_init(const Mlp& net) {
  OptimizerState opt;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    opt.m_weights.emplace_back(net.weights[l].size(), 0.0);
    opt.v_weights.emplace_back(net.weights[l].size(), 0.0);
    opt.m_biases.emplace_back(net.biases[l].size(), 0.0);
    opt.v_biases.emplace_back(net.biases[l].size(), 0.0);
  }
  return opt;
}

namespace detail {

// Post-activation values per layer, index 0 holding the inputs.
struct ForwardCache {
  std::vector<std::vector<double>> activations;
};

inline ForwardCache forward_cached(const Mlp& net,
                                   const std::vector<std::vector<double>>& batch) {
  const std::size_t bsz = batch.size();
  ForwardCache cache;
  cache.activations.resize(net.dims.size());
  for (const auto& x : batch) {
    if (static_cast<int>(x.size()) != net.dims[0]) {
      throw std::invalid_argument("forward: input width mismatch");
    }
  }
  auto& a0 = cache.activations[0];
  a0.reserve(bsz * static_cast<std::size_t>(net.dims[0]));
  for (const auto& x : batch) a0.insert(a0.end(), x.begin(), x.end());

  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const int in = net.dims[l];
    const int out = net.dims[l + 1];
    const bool hidden = l + 1 < net.num_layers();
    const auto& prev = cache.activations[l];
    auto& cur = cache.activations[l + 1];
    cur.assign(bsz * static_cast<std::size_t>(out), 0.0);
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* xin = prev.data() + b * static_cast<std::size_t>(in);
      double* xout = cur.data() + b * static_cast<std::size_t>(out);
      for (int o = 0; o < out; ++o) {
        const double* wrow =
            net.weights[l].data() + static_cast<std::size_t>(o) * in;
        double acc = net.biases[l][static_cast<std::size_t>(o)];
        for (int i = 0; i < in; ++i) acc += wrow[i] * xin[i];
        xout[o] = hidden ? std::tanh(acc) : acc;
      }
    }
  }
  return cache;
}

}  // namespace detail

inline std::vector<std::vector<double>> mlp_forward(
    const Mlp& net, const std::vector<std::vector<double>>& batch) {
  auto cache = detail::forward_cached(net, batch);
  const auto& last = cache.activations.back();
  const int out = net.dims.back();
  std::vector<std::vector<double>> result(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    result[b].assign(last.begin() + static_cast<std::ptrdiff_t>(b * out),
                     last.begin() + static_cast<std::ptrdiff_t>((b + 1) * out));
  }
  return result;
}

// Gradients of mean squared error between Q(s, a) at the taken actions and
// fixed targets; output units of non-taken actions receive zero error.
inline Gradients mlp_backward(const Mlp& net,
                              const std::vector<std::vector<double>>& batch,
                              const std::vector<int>& actions,
                              const std::vector<double>& targets) {
  const std::size_t bsz = batch.size();
  if (actions.size() != bsz || targets.size() != bsz) {
    throw std::invalid_argument("backward: batch size mismatch");
  }
  auto cache = detail::forward_cached(net, batch);

  Gradients grads;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    grads.weights.emplace_back(net.weights[l].size(), 0.0);
    grads.biases.emplace_back(net.biases[l].size(), 0.0);
  }

  const int out_dim = net.dims.back();
  std::vector<double> delta(bsz * static_cast<std::size_t>(out_dim), 0.0);
  for (std::size_t b = 0; b < bsz; ++b) {
    const int a = actions[b];
    if (a < 0 || a >= out_dim) {
      throw std::invalid_argument("backward: action index out of range");
    }
    const double q = cache.activations.back()[b * out_dim + a];
    delta[b * out_dim + a] = 2.0 * (q - targets[b]) / static_cast<double>(bsz);
  }

  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const int in = net.dims[l];
    const int out = net.dims[l + 1];
    const auto& prev = cache.activations[l];
    std::vector<double> prev_delta;
    if (l > 0) prev_delta.assign(bsz * static_cast<std::size_t>(in), 0.0);
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* d = delta.data() + b * static_cast<std::size_t>(out);
      const double* xin = prev.data() + b * static_cast<std::size_t>(in);
      for (int o = 0; o < out; ++o) {
        if (d[o] == 0.0) continue;
        double* gw = grads.weights[l].data() + static_cast<std::size_t>(o) * in;
        const double* wrow =
            net.weights[l].data() + static_cast<std::size_t>(o) * in;
        grads.biases[l][static_cast<std::size_t>(o)] += d[o];
        for (int i = 0; i < in; ++i) {
          gw[i] += d[o] * xin[i];
          if (l > 0) prev_delta[b * static_cast<std::size_t>(in) + i] += d[o] * wrow[i];
        }
      }
    }
    if (l > 0) {
      // Propagate through the previous layer's tanh: d/dx tanh = 1 - tanh^2.
      for (std::size_t b = 0; b < bsz; ++b) {
        for (int i = 0; i < in; ++i) {
          const double a = prev[b * static_cast<std::size_t>(in) + i];
          prev_delta[b * static_cast<std::size_t>(in) + i] *= 1.0 - a * a;
        }
      }
      delta = std::move(prev_delta);
    }
  }
  return grads;
}

// One bias-corrected adaptive moment step. Rejects non-finite gradients so a
// diverging run aborts instead of silently corrupting the network.
inline void apply_update(Mlp& net, OptimizerState& opt, const Gradients& grads,
                         double learning_rate) {
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    for (double g : grads.weights[l]) {
      if (!std::isfinite(g)) throw std::runtime_error("apply_update: non-finite gradient");
    }
    for (double g : grads.biases[l]) {
      if (!std::isfinite(g)) throw std::runtime_error("apply_update: non-finite gradient");
    }
  }
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  auto update = [&](std::vector<double>& p, std::vector<double>& m,
                    std::vector<double>& v, const std::vector<double>& g) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p[i] -= learning_rate * mh / (std::sqrt(vh) + opt.eps);
    }
  };
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    update(net.weights[l], opt.m_weights[l], opt.v_weights[l], grads.weights[l]);
    update(net.biases[l], opt.m_biases[l], opt.v_biases[l], grads.biases[l]);
  }
}

// Versioned parameter checkpoint; doubles round-trip exactly through the
// shortest-representation JSON encoding.
inline nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json j;
  j["format"] = "mecsim-mlp";
  j["version"] = 1;
  j["dims"] = net.dims;
  j["weights"] = net.weights;
  j["biases"] = net.biases;
  return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "mecsim-mlp" || j.value("version", 0) != 1) {
    throw std::runtime_error("mlp_from_json: unrecognized checkpoint format");
  }
  Mlp net;
  net.dims = j.at("dims").get<std::vector<int>>();
  net.weights = j.at("weights").get<std::vector<std::vector<double>>>();
  net.biases = j.at("biases").get<std::vector<std::vector<double>>>();
  if (net.weights.size() + 1 != net.dims.size() ||
      net.biases.size() != net.weights.size()) {
    throw std::runtime_error("mlp_from_json: inconsistent shapes");
  }
  for (std::size_t l = 0; l + 1 < net.dims.size(); ++l) {
    const auto expect_w = static_cast<std::size_t>(net.dims[l]) *
                          static_cast<std::size_t>(net.dims[l + 1]);
    if (net.weights[l].size() != expect_w ||
        net.biases[l].size() != static_cast<std::size_t>(net.dims[l + 1])) {
      throw std::runtime_error("mlp_from_json: inconsistent shapes");
    }
  }
  return net;
}

inline nlohmann::json optimizer_to_json(const OptimizerState& opt) {
  nlohmann::json j;
  j["step"] = opt.step;
  j["m_weights"] = opt.m_weights;
  j["v_weights"] = opt.v_weights;
  j["m_biases"] = opt.m_biases;
  j["v_biases"] = opt.v_biases;
  return j;
}

inline OptimizerState optimizer_from_json(const nlohmann::json& j) {
  OptimizerState opt;
  opt.step = j.at("step").get<std::int64_t>();
  opt.m_weights = j.at("m_weights").get<std::vector<std::vector<double>>>();
  opt.v_weights = j.at("v_weights").get<std::vector<std::vector<double>>>();
  opt.m_biases = j.at("m_biases").get<std::vector<std::vector<double>>>();
  opt.v_biases = j.at("v_biases").get<std::vector<std::vector<double>>>();
  return opt;
}

}  // namespace mecsim
