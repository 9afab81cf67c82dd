#include "probing/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "probing/error.hpp"

namespace probing {

using Eigen::VectorXd;

// ---- FeatureStore --------------------------------------------------------

FeatureStore FeatureStore::from_cache(const StackCache& cache, const Encoder& enc,
                                      const std::vector<Context>& contexts) {
  auto index = std::make_shared<std::unordered_map<std::string, Context>>();
  for (const auto& c : contexts) index->emplace(c.id, c);
  return FeatureStore([&cache, &enc, index](const std::string& ref) {
    auto it = index->find(ref);
    if (it == index->end()) throw NotFoundError("unknown context '" + ref + "'");
    const auto chunked = concat_context(it->second.sentences, enc);
    EmbeddedContext out;
    for (std::size_t c = 0; c < chunked.chunks.size(); ++c)
      out.chunks.push_back(cache.read(chunk_key(ref, c)));
    out.tokens = locate_tokens(it->second, chunked);
    return out;
  });
}

void FeatureStore::add(const std::string& context_ref, EmbeddedContext context) {
  added_.insert_or_assign(context_ref, std::move(context));
}

const EmbeddedContext& FeatureStore::context(const std::string& context_ref) const {
  if (auto it = added_.find(context_ref); it != added_.end()) return it->second;
  if (auto it = loaded_.find(context_ref); it != loaded_.end()) return it->second;
  if (!loader_) throw NotFoundError("unknown context '" + context_ref + "'");
  return loaded_.emplace(context_ref, loader_(context_ref)).first->second;
}

void FeatureStore::release_loaded() const { loaded_.clear(); }

SpanInput FeatureStore::gather(const std::string& context_ref, Interval tokens,
                               int first_layer, int last_layer) const {
  const auto& ctx = context(context_ref);
  const int n = static_cast<int>(ctx.tokens.size());
  if (tokens.start < 0 || tokens.end > n || tokens.empty())
    throw ValidationError("span [" + std::to_string(tokens.start) + ", " +
                          std::to_string(tokens.end) + ") outside context '" + context_ref +
                          "' of " + std::to_string(n) + " tokens");
  const auto& first = ctx.tokens[tokens.start];
  const auto& last = ctx.tokens[tokens.end - 1];
  if (first.chunk < 0 || last.chunk < 0)
    throw ValidationError("span in context '" + context_ref + "' was truncated away");
  if (first.chunk != last.chunk)
    throw ValidationError("span in context '" + context_ref + "' crosses a chunk boundary");
  const auto& stack = ctx.chunks[first.chunk];
  if (first_layer < 0 || last_layer > stack.top_layer() || first_layer > last_layer)
    throw ValidationError("requested layers outside 0.." + std::to_string(stack.top_layer()));
  const Interval pieces{first.pieces.start, last.pieces.end};
  SpanInput out;
  out.first_layer = first_layer;
  for (int l = first_layer; l <= last_layer; ++l) {
    Eigen::MatrixXf m(stack.width(), pieces.size());
    for (int p = pieces.start; p < pieces.end; ++p) {
      const auto row = stack.row(l, p);
      m.col(p - pieces.start) = Eigen::Map<const Eigen::VectorXf>(row.data(), stack.width());
    }
    out.layers.push_back(std::move(m));
  }
  return out;
}

ProbeInput FeatureStore::input_for(const SpanExample& example, const ProbeConfig& config) const {
  const int first = config.mode == ProbeMode::MIX ? 0 : config.layer;
  ProbeInput in;
  in.spans.push_back(gather(example.context_ref, example.span1, first, config.layer));
  if (is_two_span(example.task)) {
    if (!example.span2) throw ValidationError("example " + example.id() + " lacks span2");
    in.spans.push_back(gather(example.context_ref, *example.span2, first, config.layer));
  }
  return in;
}

Dataset make_dataset(const std::vector<SpanExample>& examples, const FeatureStore& features,
                     const ProbeConfig& config, const std::vector<std::string>& label_set) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < label_set.size(); ++i) index.emplace(label_set[i], static_cast<int>(i));
  Dataset out;
  out.inputs.reserve(examples.size());
  out.labels.reserve(examples.size());
  for (const auto& ex : examples) {
    auto in = features.input_for(ex, config);
    if (in.spans.front().layers.front().rows() != config.input_width)
      throw ValidationError("features are " +
                            std::to_string(in.spans.front().layers.front().rows()) +
                            " wide but the probe expects " + std::to_string(config.input_width));
    out.inputs.push_back(std::move(in));
    auto it = index.find(ex.label);
    out.labels.push_back(it == index.end() ? -1 : it->second);
  }
  return out;
}

// ---- Optimisation --------------------------------------------------------

bool EarlyStopping::update(double loss) {
  if (loss < best_) {
    best_ = loss;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

Adam::Adam(Eigen::Index size, double lr, double weight_decay, double beta1, double beta2,
           double eps)
    : lr_(lr),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      m_(VectorXd::Zero(size)),
      v_(VectorXd::Zero(size)) {}

void Adam::step(VectorXd& params, const VectorXd& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double g = grad[i] + weight_decay_ * params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

namespace {

constexpr int kGradShards = 8;

double accumulate_range(const ProbeModel& model, const Dataset& data,
                        std::span<const std::size_t> batch, std::size_t begin, std::size_t end,
                        std::uint64_t batch_seed, bool dropout, double scale, VectorXd& grad) {
  double loss = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const auto idx = batch[i];
    if (data.labels[idx] < 0) continue;
    DropoutStream stream{Rng(derive_seed(batch_seed, i)), &model.config()};
    loss += model.loss_and_grad(data.inputs[idx], data.labels[idx], &grad, scale,
                                dropout ? &stream : nullptr);
  }
  return loss;
}

}  // namespace

double batch_gradient(const ProbeModel& model, const Dataset& data,
                      std::span<const std::size_t> batch, std::uint64_t batch_seed, bool dropout,
                      VectorXd& grad) {
  if (batch.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<VectorXd> shard_grads(kGradShards);
  std::vector<double> shard_loss(kGradShards, 0.0);
  std::vector<std::string> errors(kGradShards);

#pragma omp parallel for schedule(dynamic, 1)
  for (int s = 0; s < kGradShards; ++s) {
    const auto begin = batch.size() * s / kGradShards;
    const auto end = batch.size() * (s + 1) / kGradShards;
    shard_grads[s] = VectorXd::Zero(grad.size());
    try {
      shard_loss[s] = accumulate_range(model, data, batch, begin, end, batch_seed, dropout,
                                       scale, shard_grads[s]);
    } catch (const std::exception& e) {
      errors[s] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw Error(e);
  double loss = 0.0;
  for (int s = 0; s < kGradShards; ++s) {
    grad += shard_grads[s];
    loss += shard_loss[s];
  }
  return loss * scale;
}

double batch_gradient_serial(const ProbeModel& model, const Dataset& data,
                             std::span<const std::size_t> batch, std::uint64_t batch_seed,
                             bool dropout, VectorXd& grad) {
  if (batch.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  return accumulate_range(model, data, batch, 0, batch.size(), batch_seed, dropout, scale, grad) *
         scale;
}

double mean_loss(const ProbeModel& model, const Dataset& data) {
  const auto n = static_cast<long>(data.inputs.size());
  std::vector<double> losses(n, 0.0);
#pragma omp parallel for schedule(dynamic, 16)
  for (long i = 0; i < n; ++i)
    if (data.labels[i] >= 0)
      losses[i] = model.loss_and_grad(data.inputs[i], data.labels[i], nullptr, 0.0, nullptr);
  double sum = 0.0;
  long counted = 0;
  for (long i = 0; i < n; ++i)
    if (data.labels[i] >= 0) {
      sum += losses[i];
      ++counted;
    }
  if (counted == 0) throw ValidationError("no validation example has a known label");
  return sum / static_cast<double>(counted);
}

int TrainedProbe::label_index(const std::string& label) const {
  auto it = std::find(label_set.begin(), label_set.end(), label);
  return it == label_set.end() ? -1 : static_cast<int>(it - label_set.begin());
}

TrainedProbe fit_probe(const Dataset& train, const Dataset& valid, const ProbeConfig& config,
                       Task task, std::vector<std::string> label_set) {
  if (train.inputs.empty() || valid.inputs.empty())
    throw ValidationError("training and validation sets must be non-empty");
  if (std::find(train.labels.begin(), train.labels.end(), -1) != train.labels.end())
    throw ValidationError("training example with a label outside the label set");
  const auto unknown = std::count(valid.labels.begin(), valid.labels.end(), -1);
  if (unknown > 0)
    spdlog::warn("{} validation examples carry labels unseen in training; counted as errors",
                 unknown);

  TrainedProbe probe;
  probe.config = config;
  probe.task = task;
  probe.label_set = std::move(label_set);
  probe.model = ProbeModel(config, static_cast<int>(train.inputs.front().spans.size()),
                           static_cast<int>(probe.label_set.size()));
  probe.model.initialize(config.seed);

  auto& theta = probe.model.params();
  Adam adam(theta.size(), config.lr, config.weight_decay);
  VectorXd best = theta;
  std::optional<double> frozen_gamma;
  if (config.mode == ProbeMode::MIX && !config.mix_gamma)
    frozen_gamma = probe.model.param("mix.gamma")(0, 0);

  std::vector<std::size_t> order(train.inputs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(config.seed, 0x5eed));
  EarlyStopping stopper(config.patience);
  VectorXd grad(theta.size());
  long step = 0;

  auto evaluate = [&] {
    const double loss = mean_loss(probe.model, valid);
    probe.training_log.push_back({step, loss});
    if (stopper.update(loss)) {
      best = theta;
      probe.best_step = step;
    }
  };

  bool done = false;
  while (!done) {
    shuffle(order, shuffle_rng);
    for (std::size_t start = 0; start < order.size() && !done; start += config.batch_size) {
      const auto len = std::min<std::size_t>(config.batch_size, order.size() - start);
      grad.setZero();
      batch_gradient(probe.model, train, std::span(order).subspan(start, len),
                     derive_seed(config.seed, 0xba7c, step), true, grad);
      adam.step(theta, grad);
      if (frozen_gamma) probe.model.param("mix.gamma")(0, 0) = *frozen_gamma;
      ++step;
      if (step % config.eval_every == 0) {
        evaluate();
        if (stopper.should_stop()) done = true;
      }
      if (config.max_batches > 0 && step >= config.max_batches) done = true;
    }
  }
  if (probe.training_log.empty() || probe.training_log.back().step != step) evaluate();

  theta = best.cast<float>().cast<double>();
  return probe;
}

std::vector<std::string> collect_labels(const std::vector<SpanExample>& examples) {
  std::vector<std::string> labels;
  for (const auto& ex : examples) labels.push_back(ex.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

TrainedProbe train_probe(const std::vector<SpanExample>& train,
                         const std::vector<SpanExample>& valid, const FeatureStore& features,
                         const ProbeConfig& config) {
  if (train.empty() || valid.empty())
    throw ValidationError("training and validation sets must be non-empty");
  const auto labels = collect_labels(train);
  const auto train_set = make_dataset(train, features, config, labels);
  const auto valid_set = make_dataset(valid, features, config, labels);
  return fit_probe(train_set, valid_set, config, train.front().task, labels);
}

VectorXd classify(const TrainedProbe& probe, const SpanExample& example,
                  const FeatureStore& features) {
  return probe.model.probabilities(features.input_for(example, probe.config));
}

std::vector<PredictionRecord> predict(const TrainedProbe& probe,
                                      const std::vector<SpanExample>& test,
                                      const FeatureStore& features,
                                      const std::string& model_name) {
  std::vector<PredictionRecord> out(test.size());
  constexpr std::size_t kBlock = 4096;
  std::vector<ProbeInput> inputs;
  for (std::size_t begin = 0; begin < test.size(); begin += kBlock) {
    const auto end = std::min(test.size(), begin + kBlock);
    inputs.clear();
    for (auto i = begin; i < end; ++i) inputs.push_back(features.input_for(test[i], probe.config));
    const auto n = static_cast<long>(end - begin);
#pragma omp parallel for schedule(dynamic, 16)
    for (long j = 0; j < n; ++j) {
      const auto& ex = test[begin + j];
      const auto probs = probe.model.probabilities(inputs[j]);
      out[begin + j] = {ex.id(),  model_name, probe.config.mode, probe.config.layer,
                        ex.label, probe.label_set[argmax_lowest(probs)]};
    }
  }
  return out;
}

}  // namespace probing
