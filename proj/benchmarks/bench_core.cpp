#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "auber/dqn.hpp"
#include "auber/matrix.hpp"
#include "auber/model.hpp"
#include "auber/state.hpp"
#include "auber/trainer.hpp"

using namespace auber;

namespace {

EncoderModel default_model() {
  Rng rng(11);
  return make_model(ModelDims{}, rng);
}

std::vector<int> tokens16() {
  std::vector<int> t;
  Rng rng(12);
  for (int i = 0; i < 16; ++i) t.push_back(static_cast<int>(rng.index(64)));
  return t;
}

Dataset dataset(std::size_t count) {
  Dataset data;
  Rng rng(13);
  for (std::size_t i = 0; i < count; ++i) {
    TrainExample ex;
    for (int t = 0; t < 16; ++t) ex.tokens.push_back(static_cast<int>(rng.index(64)));
    ex.label = static_cast<int>(rng.index(2));
    data.examples.push_back(std::move(ex));
  }
  return data;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(14);
  Matrix a(n, n), b(n, n);
  fill_uniform(a, rng, -1.0, 1.0);
  fill_uniform(b, rng, -1.0, 1.0);
  for (auto _ : state) {
    Matrix c = matmul(a, b);
    benchmark::DoNotOptimize(c.storage().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

static void BM_HeadForward(benchmark::State& state) {
  EncoderModel model = default_model();
  Rng rng(15);
  Matrix x(16, model.dims.embed_dim);
  fill_uniform(x, rng, -1.0, 1.0);
  const AttentionHead& head = model.layers[0].heads[0];
  for (auto _ : state) {
    HeadActivations acts = head_forward(head, x);
    benchmark::DoNotOptimize(acts.out.storage().data());
  }
}
BENCHMARK(BM_HeadForward);

static void BM_ModelForward(benchmark::State& state) {
  EncoderModel model = default_model();
  const std::vector<int> tokens = tokens16();
  for (auto _ : state) {
    ForwardResult res = model_forward(model, tokens);
    benchmark::DoNotOptimize(res.logits.data());
  }
}
BENCHMARK(BM_ModelForward);

static void BM_ModelBackward(benchmark::State& state) {
  EncoderModel model = default_model();
  const std::vector<int> tokens = tokens16();
  for (auto _ : state) {
    BackwardResult res = model_backward(model, tokens, 1);
    benchmark::DoNotOptimize(&res.loss);
  }
}
BENCHMARK(BM_ModelBackward);

static void BM_Evaluate(benchmark::State& state) {
  EncoderModel model = default_model();
  const Dataset data = dataset(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    EvalResult res = evaluate(model, data);
    benchmark::DoNotOptimize(&res.accuracy);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Evaluate)->Arg(50)->Arg(200);

static void BM_LayerState(benchmark::State& state) {
  EncoderModel model = default_model();
  for (auto _ : state) {
    LayerState s = layer_state(model, 0, StateRecipe{});
    benchmark::DoNotOptimize(s.values.data());
  }
}
BENCHMARK(BM_LayerState);

static void BM_QnetForwardBatch(benchmark::State& state) {
  Rng rng(16);
  QNet net = make_qnet(4, 512, rng);
  Matrix states(128, 4);
  fill_uniform(states, rng, 0.0, 1.0);
  for (auto _ : state) {
    Matrix q = qnet_forward_batch(net, states);
    benchmark::DoNotOptimize(q.storage().data());
  }
}
BENCHMARK(BM_QnetForwardBatch);

static void BM_OptimizeStep(benchmark::State& state) {
  AgentConfig cfg;
  cfg.memory = 512;
  Rng rng(17);
  QNet policy = make_qnet(4, cfg.hidden, rng);
  QNet target = make_qnet(4, cfg.hidden, rng);
  ReplayMemory memory(cfg.memory);
  for (int i = 0; i < 256; ++i) {
    Transition t;
    t.state = {0.25, 0.25, 0.25, 0.25};
    t.action = static_cast<int>(rng.index(4));
    t.next_state = std::vector<double>{0.25, 0.25, 0.25, 0.25};
    (*t.next_state)[static_cast<std::size_t>(t.action)] = 0.0;
    t.reward = rng.next_double() - 0.5;
    memory.push(std::move(t));
  }
  Adam opt(AdamConfig{cfg.lr});
  for (auto _ : state) {
    auto loss = optimize_step(policy, target, memory, cfg, opt, rng);
    benchmark::DoNotOptimize(&loss);
  }
}
BENCHMARK(BM_OptimizeStep);

BENCHMARK_MAIN();
