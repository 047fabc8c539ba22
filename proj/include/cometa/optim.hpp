#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cometa/graph.hpp"
#include "cometa/tensor.hpp"

namespace cometa {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter first/second moments plus the shared step counter.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

inline AdamState make_adam_state(std::span<Tensor* const> params, AdamConfig config = {}) {
  AdamState state;
  state.config = config;
  for (const Tensor* p : params) {
    state.m.emplace_back(p->shape());
    state.v.emplace_back(p->shape());
  }
  return state;
}

/// One bias-corrected Adam update, in place.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " + std::to_string(state.m.size()) +
                     " moment slots");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->shape() != grads[k].shape() || params[k]->shape() != state.m[k].shape()) {
      throw ShapeError("adam: parameter " + std::to_string(k) + " is " + params[k]->shape().str() +
                       " but gradient is " + grads[k].shape().str());
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    double* p = params[k]->data();
    const double* g = grads[k].data();
    double* m = state.m[k].data();
    double* v = state.v[k].data();
    for (std::size_t j = 0; j < grads[k].size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

/// tensor - eta * grad. eta == 0 returns the input unchanged.
inline Tensor sgd_step(const Tensor& tensor, const Tensor& grad, double eta) {
  if (tensor.shape() != grad.shape()) {
    throw ShapeError("sgd step: tensor " + tensor.shape().str() + " vs gradient " + grad.shape().str());
  }
  if (eta < 0.0) throw Error("sgd step size must be non-negative");
  if (eta == 0.0) return tensor;
  Tensor out = tensor;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] -= eta * grad[j];
  return out;
}

/// Differentiable form: the result stays a graph node, so gradients flow
/// through both `tensor` and (when it was built with create_graph) `grad`.
inline ad::Var sgd_step(ad::Var tensor, ad::Var grad, double eta) {
  if (tensor.shape() != grad.shape()) {
    throw ShapeError("sgd step: tensor " + tensor.shape().str() + " vs gradient " + grad.shape().str());
  }
  if (eta < 0.0) throw Error("sgd step size must be non-negative");
  if (eta == 0.0) return tensor;
  return ad::add(tensor, ad::scale(grad, -eta));
}

}  // namespace cometa
