#include "probing/probe.hpp"

#include <array>
#include <cmath>

#include "probing/error.hpp"

namespace probing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void ProbeConfig::validate(int num_layers) const {
  auto fail = [](const std::string& what) { throw ValidationError("probe config: " + what); };
  if (layer < 0 || layer >= num_layers)
    fail("layer " + std::to_string(layer) + " outside 0.." + std::to_string(num_layers - 1));
  for (double rate : {dropout_input, dropout_recurrent, dropout_other})
    if (!(rate >= 0.0 && rate < 1.0)) fail("dropout rates must lie in [0, 1)");
  if (input_width < 1 || hidden < 1 || lstm_layers < 1) fail("sizes must be positive");
  if (batch_size < 1 || eval_every < 1 || patience < 1) fail("schedule values must be positive");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) fail("lr and weight decay must be non-negative");
}

// ---- ParamLayout ---------------------------------------------------------

void ParamLayout::add(std::string name, int rows, int cols) {
  Section s{std::move(name), rows, cols, total_};
  total_ += s.size();
  sections_.push_back(std::move(s));
}

const ParamLayout::Section& ParamLayout::at(const std::string& name) const {
  for (const auto& s : sections_)
    if (s.name == name) return s;
  throw NotFoundError("no parameter section '" + name + "'");
}

// ---- Helpers -------------------------------------------------------------

namespace {

constexpr std::array<char, 2> kDirs = {'f', 'b'};

std::string lstm_name(int layer, int dir, const char* part) {
  return "lstm." + std::to_string(layer) + "." + kDirs[dir] + "." + part;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Inverted-dropout mask, or an empty matrix when p == 0.
MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  if (p <= 0.0) return {};
  MatrixXd m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = uniform_real(rng) < p ? 0.0 : keep;
  return m;
}

void apply_mask(MatrixXd& x, const MatrixXd& mask) {
  if (mask.size() > 0) x.array() *= mask.array();
}

struct DirState {
  MatrixXd gates;  // 4H x T: i, f, g, o after activation
  MatrixXd c;      // H x T
  MatrixXd h;      // H x T
};

/// One LSTM direction over x (in x T); `reverse` processes t = T-1 .. 0.
DirState lstm_forward(const MatrixXd& x, bool reverse, const Eigen::Map<const MatrixXd>& w,
                      const Eigen::Map<const MatrixXd>& u, const Eigen::Map<const MatrixXd>& b) {
  const Eigen::Index hidden = u.cols();
  const Eigen::Index steps = x.cols();
  DirState st{MatrixXd(4 * hidden, steps), MatrixXd(hidden, steps), MatrixXd(hidden, steps)};
  VectorXd h_prev = VectorXd::Zero(hidden);
  VectorXd c_prev = VectorXd::Zero(hidden);
  VectorXd a(4 * hidden);
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    a.noalias() = w * x.col(t) + u * h_prev + b.col(0);
    for (Eigen::Index j = 0; j < hidden; ++j) {
      a[j] = sigmoid(a[j]);
      a[hidden + j] = sigmoid(a[hidden + j]);
      a[2 * hidden + j] = std::tanh(a[2 * hidden + j]);
      a[3 * hidden + j] = sigmoid(a[3 * hidden + j]);
    }
    st.gates.col(t) = a;
    for (Eigen::Index j = 0; j < hidden; ++j) {
      const double c = a[hidden + j] * c_prev[j] + a[j] * a[2 * hidden + j];
      st.c(j, t) = c;
      st.h(j, t) = a[3 * hidden + j] * std::tanh(c);
    }
    h_prev = st.h.col(t);
    c_prev = st.c.col(t);
  }
  return st;
}

/// Backpropagation through time for one direction. dh holds loss gradients
/// w.r.t. every output state; dx receives input gradients (accumulated).
void lstm_backward(const MatrixXd& x, const DirState& st, bool reverse, const MatrixXd& dh,
                   const Eigen::Map<const MatrixXd>& w, const Eigen::Map<const MatrixXd>& u,
                   Eigen::Map<MatrixXd> dw, Eigen::Map<MatrixXd> du, Eigen::Map<MatrixXd> db,
                   double scale, MatrixXd& dx) {
  const Eigen::Index hidden = u.cols();
  const Eigen::Index steps = x.cols();
  VectorXd dh_next = VectorXd::Zero(hidden);
  VectorXd dc_next = VectorXd::Zero(hidden);
  VectorXd da(4 * hidden);
  const VectorXd zeros = VectorXd::Zero(hidden);
  for (Eigen::Index s = steps - 1; s >= 0; --s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    const bool first = s == 0;
    const Eigen::Index prev = reverse ? t + 1 : t - 1;
    const auto c_prev = first ? zeros : VectorXd(st.c.col(prev));
    const auto h_prev = first ? zeros : VectorXd(st.h.col(prev));
    for (Eigen::Index j = 0; j < hidden; ++j) {
      const double i = st.gates(j, t), f = st.gates(hidden + j, t);
      const double g = st.gates(2 * hidden + j, t), o = st.gates(3 * hidden + j, t);
      const double tc = std::tanh(st.c(j, t));
      const double dhj = dh(j, t) + dh_next[j];
      const double dc = dc_next[j] + dhj * o * (1.0 - tc * tc);
      da[j] = dc * g * i * (1.0 - i);
      da[hidden + j] = dc * c_prev[j] * f * (1.0 - f);
      da[2 * hidden + j] = dc * i * (1.0 - g * g);
      da[3 * hidden + j] = dhj * tc * o * (1.0 - o);
      dc_next[j] = dc * f;
    }
    dw.noalias() += scale * da * x.col(t).transpose();
    if (!first) du.noalias() += scale * da * h_prev.transpose();
    db.col(0) += scale * da;
    dx.col(t).noalias() += w.transpose() * da;
    dh_next.noalias() = u.transpose() * da;
  }
}

}  // namespace

int argmax_lowest(const VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// ---- ProbeModel ----------------------------------------------------------

ProbeModel::ProbeModel(const ProbeConfig& config, int span_count, int num_labels)
    : config_(config), span_count_(span_count), num_labels_(num_labels) {
  if (span_count < 1 || span_count > 2) throw ValidationError("probe takes one or two spans");
  if (num_labels < 1) throw ValidationError("probe needs at least one label");
  const int h = config.hidden;
  if (config.mode == ProbeMode::MIX) {
    layout_.add("mix.raw", config.layer + 1, 1);
    layout_.add("mix.gamma", 1, 1);
  }
  for (int l = 0; l < config.lstm_layers; ++l) {
    const int in = l == 0 ? config.input_width : 2 * h;
    for (int d = 0; d < 2; ++d) {
      layout_.add(lstm_name(l, d, "W"), 4 * h, in);
      layout_.add(lstm_name(l, d, "U"), 4 * h, h);
      layout_.add(lstm_name(l, d, "b"), 4 * h, 1);
    }
  }
  layout_.add("head.W1", h, 2 * h * span_count);
  layout_.add("head.b1", h, 1);
  layout_.add("head.W2", num_labels, h);
  layout_.add("head.b2", num_labels, 1);
  theta_ = VectorXd::Zero(layout_.total());
  if (config.mode == ProbeMode::MIX) param("mix.gamma")(0, 0) = 1.0;
}

Eigen::Map<MatrixXd> ProbeModel::param(const std::string& name) {
  const auto& s = layout_.at(name);
  return {theta_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const MatrixXd> ProbeModel::param(const std::string& name) const {
  const auto& s = layout_.at(name);
  return {theta_.data() + s.offset, s.rows, s.cols};
}

void ProbeModel::initialize(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1417));
  for (const auto& s : layout_.sections()) {
    auto block = theta_.segment(s.offset, s.size());
    if (s.name == "mix.raw") {
      block.setZero();
      continue;
    }
    if (s.name == "mix.gamma") {
      block.setConstant(1.0);
      continue;
    }
    double bound;
    if (s.name.starts_with("lstm.")) {
      bound = 1.0 / std::sqrt(static_cast<double>(config_.hidden));
    } else if (s.name == "head.W1" || s.name == "head.b1") {
      bound = 1.0 / std::sqrt(static_cast<double>(2 * config_.hidden * span_count_));
    } else {
      bound = 1.0 / std::sqrt(static_cast<double>(config_.hidden));
    }
    for (Eigen::Index i = 0; i < block.size(); ++i)
      block[i] = (2.0 * uniform_real(rng) - 1.0) * bound;
    if (config_.zero_head && (s.name == "head.W2" || s.name == "head.b2")) block.setZero();
  }
}

std::optional<MixWeights> ProbeModel::mix() const {
  if (config_.mode != ProbeMode::MIX) return std::nullopt;
  MixWeights m;
  const auto raw = param("mix.raw");
  m.raw.assign(raw.data(), raw.data() + raw.size());
  m.gamma = param("mix.gamma")(0, 0);
  m.normalize = config_.mix_normalize;
  return m;
}

std::vector<double> ProbeModel::mix_weights() const {
  auto m = mix();
  if (!m) throw ValidationError("a single-layer probe has no mixing weights");
  return m->normalized();
}

MatrixXd ProbeModel::mixed_input(const SpanInput& span) const {
  if (span.pieces() == 0) throw ValidationError("empty span");
  if (config_.mode == ProbeMode::SINGLE) {
    const int idx = config_.layer - span.first_layer;
    if (idx < 0 || idx >= static_cast<int>(span.layers.size()))
      throw ValidationError("span input lacks layer " + std::to_string(config_.layer));
    return span.layers[idx].cast<double>();
  }
  if (span.first_layer != 0 || static_cast<int>(span.layers.size()) < config_.layer + 1)
    throw ValidationError("mixing probe needs layers 0.." + std::to_string(config_.layer));
  const auto m = *mix();
  const auto w = m.normalized();
  MatrixXd x = MatrixXd::Zero(span.layers.front().rows(), span.layers.front().cols());
  for (int i = 0; i <= config_.layer; ++i) x += (m.gamma * w[i]) * span.layers[i].cast<double>();
  return x;
}

struct ProbeModel::Forward {
  struct Span {
    MatrixXd input_mask;
    std::vector<MatrixXd> inputs;      // per LSTM layer, after dropout
    std::vector<MatrixXd> masks;       // per LSTM layer (layer 0: input mask)
    std::vector<std::array<DirState, 2>> states;
  };
  std::vector<Span> spans;
  VectorXd z, z_mask, a, a_mask, probs;
};

VectorXd ProbeModel::pool_span(const SpanInput& span) const {
  MatrixXd x = mixed_input(span);
  const int h = config_.hidden;
  const Eigen::Index steps = x.cols();
  VectorXd pooled(2 * h);
  for (int l = 0; l < config_.lstm_layers; ++l) {
    std::array<DirState, 2> st;
    for (int d = 0; d < 2; ++d)
      st[d] = lstm_forward(x, d == 1, param(lstm_name(l, d, "W")), param(lstm_name(l, d, "U")),
                           param(lstm_name(l, d, "b")));
    if (l + 1 == config_.lstm_layers) {
      pooled << st[0].h.col(steps - 1), st[1].h.col(0);
    } else {
      x.resize(2 * h, steps);
      x << st[0].h, st[1].h;
    }
  }
  return pooled;
}

VectorXd ProbeModel::probabilities(const ProbeInput& input) const {
  if (static_cast<int>(input.spans.size()) != span_count_)
    throw ValidationError("probe expects " + std::to_string(span_count_) + " span(s)");
  const int h = config_.hidden;
  VectorXd z(2 * h * span_count_);
  for (int s = 0; s < span_count_; ++s) z.segment(2 * h * s, 2 * h) = pool_span(input.spans[s]);
  const VectorXd a = (param("head.W1") * z + param("head.b1").col(0)).array().tanh().matrix();
  const VectorXd logits = param("head.W2") * a + param("head.b2").col(0);
  const auto p = softmax(std::span<const double>(logits.data(), logits.size()));
  return Eigen::Map<const VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
}

double ProbeModel::loss_and_grad(const ProbeInput& input, int label, VectorXd* grad,
                                 double grad_scale, DropoutStream* dropout) const {
  if (static_cast<int>(input.spans.size()) != span_count_)
    throw ValidationError("probe expects " + std::to_string(span_count_) + " span(s)");
  if (label < 0 || label >= num_labels_) throw ValidationError("label index out of range");
  const int h = config_.hidden;
  const int layers = config_.lstm_layers;
  Forward fw;
  fw.spans.resize(span_count_);
  fw.z.resize(2 * h * span_count_);

  // Forward.
  for (int s = 0; s < span_count_; ++s) {
    auto& sp = fw.spans[s];
    MatrixXd x = mixed_input(input.spans[s]);
    const Eigen::Index steps = x.cols();
    for (int l = 0; l < layers; ++l) {
      MatrixXd mask;
      if (dropout)
        mask = dropout_mask(x.rows(), steps,
                            l == 0 ? dropout->config->dropout_input
                                   : dropout->config->dropout_recurrent,
                            dropout->rng);
      apply_mask(x, mask);
      sp.masks.push_back(std::move(mask));
      std::array<DirState, 2> st;
      for (int d = 0; d < 2; ++d)
        st[d] = lstm_forward(x, d == 1, param(lstm_name(l, d, "W")),
                             param(lstm_name(l, d, "U")), param(lstm_name(l, d, "b")));
      sp.inputs.push_back(std::move(x));
      if (l + 1 < layers) {
        x.resize(2 * h, steps);
        x << st[0].h, st[1].h;
      } else {
        fw.z.segment(2 * h * s, h) = st[0].h.col(steps - 1);
        fw.z.segment(2 * h * s + h, h) = st[1].h.col(0);
      }
      sp.states.push_back(std::move(st));
    }
  }
  const double p_other = dropout ? dropout->config->dropout_other : 0.0;
  VectorXd z = fw.z;
  if (dropout && p_other > 0.0) {
    fw.z_mask = dropout_mask(z.size(), 1, p_other, dropout->rng);
    z.array() *= fw.z_mask.array();
  }
  const auto w1 = param("head.W1");
  const auto w2 = param("head.W2");
  fw.a = (w1 * z + param("head.b1").col(0)).array().tanh().matrix();
  VectorXd a = fw.a;
  if (dropout && p_other > 0.0) {
    fw.a_mask = dropout_mask(a.size(), 1, p_other, dropout->rng);
    a.array() *= fw.a_mask.array();
  }
  const VectorXd logits = w2 * a + param("head.b2").col(0);
  const auto probs = softmax(std::span<const double>(logits.data(), logits.size()));
  const double loss = -std::log(std::max(probs[label], 1e-300));
  if (!grad) return loss;

  // Backward.
  auto g = [&](const std::string& name) {
    const auto& sec = layout_.at(name);
    return Eigen::Map<MatrixXd>(grad->data() + sec.offset, sec.rows, sec.cols);
  };
  const double scale = grad_scale;
  VectorXd dlogits = Eigen::Map<const VectorXd>(probs.data(), num_labels_);
  dlogits[label] -= 1.0;
  g("head.W2").noalias() += scale * dlogits * a.transpose();
  g("head.b2").col(0) += scale * dlogits;
  VectorXd da = w2.transpose() * dlogits;
  if (fw.a_mask.size() > 0) da.array() *= fw.a_mask.array();
  const VectorXd dpre = da.array() * (1.0 - fw.a.array().square());
  g("head.W1").noalias() += scale * dpre * z.transpose();
  g("head.b1").col(0) += scale * dpre;
  VectorXd dz = w1.transpose() * dpre;
  if (fw.z_mask.size() > 0) dz.array() *= fw.z_mask.array();

  std::vector<double> dmix;
  double dgamma = 0.0;
  if (config_.mode == ProbeMode::MIX) dmix.assign(config_.layer + 1, 0.0);

  for (int s = 0; s < span_count_; ++s) {
    auto& sp = fw.spans[s];
    const Eigen::Index steps = sp.inputs.front().cols();
    // Gradient w.r.t. each direction's output states of the current layer.
    MatrixXd dy = MatrixXd::Zero(2 * h, steps);
    dy.block(0, steps - 1, h, 1) = dz.segment(2 * h * s, h);
    dy.block(h, 0, h, 1) = dz.segment(2 * h * s + h, h);
    for (int l = layers - 1; l >= 0; --l) {
      const auto& x = sp.inputs[l];
      MatrixXd dx = MatrixXd::Zero(x.rows(), steps);
      for (int d = 0; d < 2; ++d) {
        const MatrixXd dh = dy.block(d * h, 0, h, steps);
        lstm_backward(x, sp.states[l][d], d == 1, dh, param(lstm_name(l, d, "W")),
                      param(lstm_name(l, d, "U")), g(lstm_name(l, d, "W")),
                      g(lstm_name(l, d, "U")), g(lstm_name(l, d, "b")), scale, dx);
      }
      apply_mask(dx, sp.masks[l]);
      dy = std::move(dx);
    }
    if (config_.mode == ProbeMode::MIX) {
      // dy now holds d loss / d mixed input.
      const auto& layers_in = input.spans[s].layers;
      for (int i = 0; i <= config_.layer; ++i)
        dmix[i] += (dy.array() * layers_in[i].cast<double>().array()).sum();
    }
  }

  if (config_.mode == ProbeMode::MIX) {
    const auto m = *mix();
    const auto w = m.normalized();
    // dmix[i] = <dX, layer_i>; X = gamma * sum_i w_i layer_i.
    std::vector<double> dw(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      dw[i] = m.gamma * dmix[i];
      dgamma += w[i] * dmix[i];
    }
    auto draw = g("mix.raw");
    if (config_.mix_normalize) {
      double dot = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) dot += w[i] * dw[i];
      for (std::size_t i = 0; i < w.size(); ++i) draw(i, 0) += scale * w[i] * (dw[i] - dot);
    } else {
      for (std::size_t i = 0; i < w.size(); ++i) draw(i, 0) += scale * dw[i];
    }
    if (config_.mix_gamma) g("mix.gamma")(0, 0) += scale * dgamma;
  }
  return loss;
}

}  // namespace probing
