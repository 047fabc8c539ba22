#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "cometa/error.hpp"

namespace cometa {

/// Predictions are clamped to [kProbClamp, 1 - kProbClamp] before taking logs.
inline constexpr double kProbClamp = 1e-12;

inline double clamp_probability(double p) {
  return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

/// Mean binary cross-entropy. Shared by the training loss and the Logloss metric.
inline double binary_cross_entropy(std::span<const double> predictions,
                                   std::span<const double> labels) {
  if (predictions.empty()) throw Error("binary cross-entropy of an empty batch");
  if (predictions.size() != labels.size()) {
    throw ShapeError("binary cross-entropy: " + std::to_string(predictions.size()) +
                     " predictions vs " + std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = clamp_probability(predictions[i]);
    const double y = labels[i];
    total += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return -total / static_cast<double>(predictions.size());
}

}  // namespace cometa
