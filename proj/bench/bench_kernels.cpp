// Parallel kernels against their serial references.
#include <benchmark/benchmark.h>

#include "probing/mix.hpp"
#include "probing/train.hpp"

using namespace probing;

namespace {

LayerStack random_stack(int layers, int pieces, int width) {
  Rng rng(1);
  LayerStack s(layers, pieces, width);
  for (auto& v : s.values()) v = static_cast<float>(standard_normal(rng));
  return s;
}

template <auto Mix>
void BM_mix(benchmark::State& state) {
  const int pieces = static_cast<int>(state.range(0));
  const auto stack = random_stack(13, pieces, 768);
  MixWeights w{std::vector<double>(13, 0.1), 1.0};
  for (auto _ : state) benchmark::DoNotOptimize(Mix(stack, w, 12));
  state.SetItemsProcessed(state.iterations() * pieces);
}

struct GradFixture {
  ProbeModel model;
  Dataset data;
  std::vector<std::size_t> batch;

  explicit GradFixture(int batch_size) {
    ProbeConfig cfg;
    cfg.mode = ProbeMode::MIX;
    cfg.layer = 4;
    cfg.input_width = 64;
    cfg.hidden = 32;
    model = ProbeModel(cfg, 1, 8);
    model.initialize(3);
    Rng rng(2);
    for (int i = 0; i < batch_size; ++i) {
      SpanInput span;
      const int pieces = 1 + static_cast<int>(uniform_index(rng, 3));
      for (int l = 0; l <= 4; ++l) {
        Eigen::MatrixXf m(64, pieces);
        for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = static_cast<float>(standard_normal(rng));
        span.layers.push_back(m);
      }
      data.inputs.push_back({{span}});
      data.labels.push_back(static_cast<int>(uniform_index(rng, 8)));
      batch.push_back(i);
    }
  }
};

template <auto Grad>
void BM_grad(benchmark::State& state) {
  GradFixture f(static_cast<int>(state.range(0)));
  Eigen::VectorXd g(f.model.params().size());
  for (auto _ : state) {
    g.setZero();
    benchmark::DoNotOptimize(Grad(f.model, f.data, f.batch, 7, true, g));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_mix<mix_layers>)->Name("mix_layers/parallel")->Arg(64)->Arg(512)->UseRealTime();
BENCHMARK(BM_mix<mix_layers_serial>)->Name("mix_layers/serial")->Arg(64)->Arg(512)->UseRealTime();
BENCHMARK(BM_grad<batch_gradient>)->Name("batch_gradient/parallel")->Arg(32)->Arg(256)->UseRealTime();
BENCHMARK(BM_grad<batch_gradient_serial>)->Name("batch_gradient/serial")->Arg(32)->Arg(256)->UseRealTime();

BENCHMARK_MAIN();
