#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "cometa/tensor.hpp"

namespace oracle {

/// Central differences of a scalar function, one coordinate at a time.
inline cometa::Tensor numeric_gradient(const std::function<double(const cometa::Tensor&)>& f, cometa::Tensor x,
                                       double h = 1e-5) {
  cometa::Tensor g(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    x[k] = saved + h;
    const double up = f(x);
    x[k] = saved - h;
    const double down = f(x);
    x[k] = saved;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor), Euclidean norms over the whole tensor.
inline double relative_error(const cometa::Tensor& a, const cometa::Tensor& b, double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline cometa::Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  cometa::Tensor t(rows, cols);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

}  // namespace oracle
