#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "probing/layer_stack.hpp"

namespace probing {

/// Scalar mix over layers 0..k: gamma * sum_i softmax(raw)_i * layer_i.
/// With `normalize` off the raw values are used as weights directly.
struct MixWeights {
  std::vector<double> raw;
  double gamma = 1.0;
  bool normalize = true;

  /// The weights actually applied to each layer.
  std::vector<double> normalized() const;
};

std::vector<double> softmax(std::span<const double> logits);

/// Mixed piece vectors, width x piece_count (one column per piece).
/// Parallel over pieces.
Eigen::MatrixXd mix_layers(const LayerStack& stack, const MixWeights& weights, int k);

/// Reference implementation of mix_layers, single-threaded.
Eigen::MatrixXd mix_layers_serial(const LayerStack& stack, const MixWeights& weights, int k);

}  // namespace probing
