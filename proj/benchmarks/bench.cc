#include <benchmark/benchmark.h>

#include "seqdm/baselines.h"
#include "seqdm/harness.h"
#include "seqdm/rewards.h"

namespace seqdm {
namespace {

// Default-sized networks on the first pairs of the default copy task.
struct Fixture {
  Config cfg;
  ModelSet models;
  DmParams params;
  TaskData data;

  Fixture() : models(build_models(cfg)), params(init_params(models, 1)) {
    TaskSpec spec = cfg.task_spec();
    spec.train_size = 64;
    spec.dev_size = spec.test_size = 1;
    data = generate(spec);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_SeqModelLogProb(benchmark::State& state) {
  const Fixture& f = fixture();
  const Example& ex = f.data.train[0];
  for (auto _ : state) benchmark::DoNotOptimize(f.models.model->log_prob(f.params.beta, ex.source, ex.target));
}
BENCHMARK(BM_SeqModelLogProb);

void BM_MleLossGrad(benchmark::State& state) {
  const Fixture& f = fixture();
  const std::span<const Example> batch(f.data.train.data(), static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(mle_loss_grad(*f.models.model, f.params.beta, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MleLossGrad)->Arg(1)->Arg(16);

void BM_AugmenterSample(benchmark::State& state) {
  const Fixture& f = fixture();
  RngStream rng(7);
  const Source proto = f.data.train[0].source;
  for (auto _ : state) benchmark::DoNotOptimize(f.models.source->sample(f.params.theta, proto, rng));
}
BENCHMARK(BM_AugmenterSample);

void BM_BeamDecode(benchmark::State& state) {
  const Fixture& f = fixture();
  const Source src = f.data.train[0].source;
  const int width = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(f.models.model->beam_decode(f.params.beta, src, width));
}
BENCHMARK(BM_BeamDecode)->Arg(1)->Arg(4);

void BM_MatchGrads(benchmark::State& state) {
  const Fixture& f = fixture();
  const MatchOptions opts{.n = static_cast<int>(state.range(0))};
  std::uint64_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(match_grads(f.models.view(), f.params, f.data.train[0], opts, RngStream(++i)));
  }
}
BENCHMARK(BM_MatchGrads)->Arg(4)->Arg(16);

void BM_CombinedStep(benchmark::State& state) {
  const Fixture& f = fixture();
  CombinedConfig cc;
  cc.n = 4;
  cc.group = state.range(0) ? UpdateGroup::kSeqModel : UpdateGroup::kAugmenters;
  const std::span<const Example> batch(f.data.train.data(), 16);
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(combined_step(f.models.view(), f.params, batch, cc, RngStream(++i)));
}
BENCHMARK(BM_CombinedStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Bleu4(benchmark::State& state) {
  const TokenSeq a{{3, 4, 5, 6, 7, 8, 9, 10}, true}, b{{3, 4, 5, 7, 6, 8, 9, 11}, true};
  for (auto _ : state) benchmark::DoNotOptimize(bleu4(a, b));
}
BENCHMARK(BM_Bleu4);

void BM_RamlSample(benchmark::State& state) {
  const TokenSeq ref{{3, 4, 5, 6, 7, 8, 9, 10}, true};
  const RamlConfig cfg;
  RngStream rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(raml_sample(ref, cfg, 15, rng));
}
BENCHMARK(BM_RamlSample);

}  // namespace
}  // namespace seqdm
BENCHMARK_MAIN();
