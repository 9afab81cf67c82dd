#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "probing/corpus.hpp"
#include "probing/mix.hpp"
#include "probing/records.hpp"
#include "probing/rng.hpp"

namespace probing {

struct ProbeConfig {
  ProbeMode mode = ProbeMode::SINGLE;
  int layer = 0;  // target layer k
  int input_width = 768;
  int hidden = 256;
  int lstm_layers = 2;
  double dropout_input = 0.2;
  double dropout_recurrent = 0.3;
  double dropout_other = 0.2;
  double lr = 1e-4;
  double weight_decay = 0.01;
  int batch_size = 32;
  int eval_every = 1000;  // batches between validation passes
  int patience = 20;      // validation passes without improvement
  std::uint64_t seed = 0;
  bool mix_normalize = true;  // softmax over raw mixing weights
  bool mix_gamma = true;      // learn the global scale; fixed at 1 otherwise
  long max_batches = 0;       // 0 = until early stopping
  bool zero_head = false;     // zero-initialise the label projection

  /// Checks ranges; `num_layers` is L + 1 of the encoder.
  void validate(int num_layers) const;
};

/// Encoder features for one span: layers first..k, each width x pieces.
struct SpanInput {
  int first_layer = 0;
  std::vector<Eigen::MatrixXf> layers;

  int pieces() const { return layers.empty() ? 0 : static_cast<int>(layers.front().cols()); }
};

struct ProbeInput {
  std::vector<SpanInput> spans;
};

/// Named views into one flat parameter vector.
class ParamLayout {
 public:
  struct Section {
    std::string name;
    int rows = 0;
    int cols = 0;
    Eigen::Index offset = 0;
    Eigen::Index size() const { return static_cast<Eigen::Index>(rows) * cols; }
  };

  void add(std::string name, int rows, int cols);
  const Section& at(const std::string& name) const;
  const std::vector<Section>& sections() const { return sections_; }
  Eigen::Index total() const { return total_; }

  friend bool operator==(const ParamLayout& a, const ParamLayout& b) {
    return a.sections_.size() == b.sections_.size() &&
           std::equal(a.sections_.begin(), a.sections_.end(), b.sections_.begin(),
                      [](const Section& x, const Section& y) {
                        return x.name == y.name && x.rows == y.rows && x.cols == y.cols;
                      });
  }

 private:
  std::vector<Section> sections_;
  Eigen::Index total_ = 0;
};

/// Dropout masks drawn for one training example; absent at evaluation time.
struct DropoutStream {
  Rng rng;
  const ProbeConfig* config;
};

/// Edge-probing classifier: optional scalar mix, input dropout, a stacked
/// bidirectional LSTM pooler per span (shared weights), and a one-hidden-layer
/// feed-forward head over the concatenated span vectors.
class ProbeModel {
 public:
  ProbeModel() = default;
  ProbeModel(const ProbeConfig& config, int span_count, int num_labels);

  const ProbeConfig& config() const { return config_; }
  int span_count() const { return span_count_; }
  int num_labels() const { return num_labels_; }
  const ParamLayout& layout() const { return layout_; }

  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }

  Eigen::Map<Eigen::MatrixXd> param(const std::string& name);
  Eigen::Map<const Eigen::MatrixXd> param(const std::string& name) const;

  /// Seeded initialisation. Mixing weights start uniform with gamma = 1 and
  /// consume no random draws, so SINGLE and MIX probes at k = 0 share every
  /// other initial value.
  void initialize(std::uint64_t seed);

  std::optional<MixWeights> mix() const;
  std::vector<double> mix_weights() const;

  /// Class probabilities in evaluation mode (no dropout).
  Eigen::VectorXd probabilities(const ProbeInput& input) const;

  /// Pooled representation of one span (2 * hidden), evaluation mode.
  Eigen::VectorXd pool_span(const SpanInput& span) const;

  /// Cross-entropy of `label`; adds d loss / d params * grad_scale into
  /// `grad` when given. Dropout is applied when `dropout` is non-null.
  double loss_and_grad(const ProbeInput& input, int label, Eigen::VectorXd* grad,
                       double grad_scale, DropoutStream* dropout) const;

 private:
  struct Forward;

  Eigen::MatrixXd mixed_input(const SpanInput& span) const;

  ProbeConfig config_;
  int span_count_ = 1;
  int num_labels_ = 0;
  ParamLayout layout_;
  Eigen::VectorXd theta_;
};

/// Index of the largest entry; ties go to the lowest index.
int argmax_lowest(const Eigen::VectorXd& v);

}  // namespace probing
