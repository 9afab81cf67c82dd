#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "probing/cache.hpp"
#include "probing/corpus.hpp"
#include "probing/encoder.hpp"
#include "probing/probe.hpp"

namespace probing {

/// Layer stacks of one context plus the piece location of every token.
struct EmbeddedContext {
  std::vector<LayerStack> chunks;
  std::vector<TokenLocation> tokens;
};

/// Resolves (context, token span) to encoder features. Contexts are either
/// added directly or produced on first use by a loader.
class FeatureStore {
 public:
  using Loader = std::function<EmbeddedContext(const std::string& context_ref)>;

  FeatureStore() = default;
  explicit FeatureStore(Loader loader) : loader_(std::move(loader)) {}

  /// Contexts chunked with `enc` and read back from `cache`.
  static FeatureStore from_cache(const StackCache& cache, const Encoder& enc,
                                 const std::vector<Context>& contexts);

  void add(const std::string& context_ref, EmbeddedContext context);
  const EmbeddedContext& context(const std::string& context_ref) const;

  /// Layers first..last of the pieces under `tokens`. Throws ValidationError
  /// when the span lies outside the context or was truncated away.
  SpanInput gather(const std::string& context_ref, Interval tokens, int first_layer,
                   int last_layer) const;

  /// Inputs for a probe reading layers as `config` requires.
  ProbeInput input_for(const SpanExample& example, const ProbeConfig& config) const;

  /// Drops loaded contexts (those added directly are kept).
  void release_loaded() const;

 private:
  Loader loader_;
  std::unordered_map<std::string, EmbeddedContext> added_;
  mutable std::unordered_map<std::string, EmbeddedContext> loaded_;
};

struct Dataset {
  std::vector<ProbeInput> inputs;
  std::vector<int> labels;  // -1 for labels outside the probe's label set
};

Dataset make_dataset(const std::vector<SpanExample>& examples, const FeatureStore& features,
                     const ProbeConfig& config, const std::vector<std::string>& label_set);

struct LogEntry {
  long step = 0;  // batches trained so far
  double validation_loss = 0.0;
  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

struct TrainedProbe {
  ProbeConfig config;
  Task task = Task::POS;
  std::vector<std::string> label_set;
  ProbeModel model;
  std::vector<LogEntry> training_log;
  long best_step = 0;

  std::optional<MixWeights> mix() const { return model.mix(); }
  int label_index(const std::string& label) const;  // -1 if unknown
};

/// Stops after `patience` consecutive evaluations without a strict decrease.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  /// Records a validation loss; returns true when it is a new best.
  bool update(double loss);
  bool should_stop() const { return since_best_ >= patience_; }
  int evaluations_since_best() const { return since_best_; }
  double best() const { return best_; }

 private:
  int patience_;
  int since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(Eigen::Index size, double lr, double weight_decay, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

/// Mean loss over `batch`, adding the gradient of the mean into `grad`.
/// Examples are split into a fixed number of shards processed in parallel
/// and summed in shard order, so the result does not depend on the thread
/// count. Dropout masks are seeded per example from `batch_seed`.
double batch_gradient(const ProbeModel& model, const Dataset& data,
                      std::span<const std::size_t> batch, std::uint64_t batch_seed,
                      bool dropout, Eigen::VectorXd& grad);

/// Single-threaded reference for batch_gradient.
double batch_gradient_serial(const ProbeModel& model, const Dataset& data,
                             std::span<const std::size_t> batch, std::uint64_t batch_seed,
                             bool dropout, Eigen::VectorXd& grad);

/// Mean evaluation-mode loss over examples whose label is known.
double mean_loss(const ProbeModel& model, const Dataset& data);

/// Trains on `train`, early-stopping on `valid`; returns the parameters of the
/// best validation checkpoint rounded to float32.
TrainedProbe fit_probe(const Dataset& train, const Dataset& valid, const ProbeConfig& config,
                       Task task, std::vector<std::string> label_set);

/// Builds the label set from `train`, gathers features, and fits.
TrainedProbe train_probe(const std::vector<SpanExample>& train,
                         const std::vector<SpanExample>& valid, const FeatureStore& features,
                         const ProbeConfig& config);

/// Sorted distinct labels.
std::vector<std::string> collect_labels(const std::vector<SpanExample>& examples);

Eigen::VectorXd classify(const TrainedProbe& probe, const SpanExample& example,
                         const FeatureStore& features);

std::vector<PredictionRecord> predict(const TrainedProbe& probe,
                                      const std::vector<SpanExample>& test,
                                      const FeatureStore& features,
                                      const std::string& model_name);

}  // namespace probing
