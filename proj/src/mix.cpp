#include "probing/mix.hpp"

#include <algorithm>
#include <cmath>

#include "probing/error.hpp"

namespace probing {

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - top);
  for (auto& v : out) v /= sum;
  return out;
}

std::vector<double> MixWeights::normalized() const {
  return normalize ? softmax(raw) : raw;
}

namespace {

void check_mix_args(const LayerStack& stack, const MixWeights& weights, int k) {
  if (k < 0 || k > stack.top_layer())
    throw ValidationError("mix target layer " + std::to_string(k) + " outside 0.." +
                          std::to_string(stack.top_layer()));
  if (weights.raw.size() != static_cast<std::size_t>(k) + 1)
    throw ValidationError("mix has " + std::to_string(weights.raw.size()) +
                          " weights for " + std::to_string(k + 1) + " layers");
}

}  // namespace

Eigen::MatrixXd mix_layers(const LayerStack& stack, const MixWeights& weights, int k) {
  check_mix_args(stack, weights, k);
  const auto w = weights.normalized();
  const int pieces = stack.piece_count();
  const int width = stack.width();
  Eigen::MatrixXd out(width, pieces);

#pragma omp parallel for schedule(static)
  for (int p = 0; p < pieces; ++p) {
    auto col = out.col(p);
    col.setZero();
    for (int layer = 0; layer <= k; ++layer) {
      const auto row = stack.row(layer, p);
      const double scale = weights.gamma * w[layer];
      for (int d = 0; d < width; ++d) col[d] += scale * row[d];
    }
  }
  return out;
}

Eigen::MatrixXd mix_layers_serial(const LayerStack& stack, const MixWeights& weights, int k) {
  check_mix_args(stack, weights, k);
  const auto w = weights.normalized();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(stack.width(), stack.piece_count());
  for (int p = 0; p < stack.piece_count(); ++p)
    for (int layer = 0; layer <= k; ++layer) {
      const auto row = stack.row(layer, p);
      for (int d = 0; d < stack.width(); ++d) out(d, p) += weights.gamma * w[layer] * row[d];
    }
  return out;
}

}  // namespace probing
