#include <random>

#include <benchmark/benchmark.h>

#include "cosingan/augment.hpp"
#include "cosingan/data.hpp"
#include "cosingan/eval.hpp"
#include "cosingan/losses.hpp"
#include "cosingan/synth.hpp"
#include "cosingan/trainer.hpp"

using namespace cosingan;

namespace {

void BM_MsSsim(benchmark::State& state) {
  const auto n = state.range(0);
  torch::manual_seed(0);
  auto a = torch::rand({4, 1, n, n}) * 2 - 1;
  auto b = torch::rand({4, 1, n, n}) * 2 - 1;
  for (auto _ : state) benchmark::DoNotOptimize(losses::loss_ms_ssim(a, b).item<float>());
}
BENCHMARK(BM_MsSsim)->Arg(32)->Arg(128)->Arg(512);

void BM_MixedLossBackward(benchmark::State& state) {
  const auto n = state.range(0);
  torch::manual_seed(0);
  auto bb = eval::random_feature_backbones(1);
  losses::MixedLossSetup setup;
  setup.vgg = bb.vgg;
  setup.unet = bb.unet;
  auto labels = torch::randint(0, 3, {4, 1, n, n}, torch::kLong);
  auto real = torch::rand({4, 1, n, n}) * 2 - 1;
  for (auto _ : state) {
    auto gen = (torch::rand({4, 1, n, n}) * 2 - 1).requires_grad_(true);
    losses::loss_mixed(labels, gen, real, setup).total.backward();
    benchmark::DoNotOptimize(gen.grad().data_ptr());
  }
}
BENCHMARK(BM_MixedLossBackward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_AugmentDraw(benchmark::State& state) {
  const auto n = state.range(0);
  const auto sample = data::make_phantom({.size = n}, 0, 1);
  const auto policy = augment::strong_policy();
  std::mt19937_64 rng(0);
  for (auto _ : state) {
    const auto d = augment::sample_draw(policy, sample.image.shape(), rng);
    benchmark::DoNotOptimize(augment::apply_draw(d, sample.image, sample.mask));
  }
}
BENCHMARK(BM_AugmentDraw)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_GeneratorForward(benchmark::State& state) {
  const auto n = state.range(0);
  torch::manual_seed(0);
  const auto sched = build_scale_schedule(512, 9, ScheduleProfile::paper);
  int depth = 3;
  for (size_t i = 0; i < sched.size(); ++i) {
    if (sched.scales[i].height == n) depth = sched.gen_depths[i];
  }
  auto g = nets::build_generator({depth, 2, 32, 0.5});
  g->eval();
  auto x = torch::randn({1, 2, n, n});
  torch::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(g->forward(x).data_ptr());
}
BENCHMARK(BM_GeneratorForward)->Arg(32)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_DeskSynthesis(benchmark::State& state) {
  auto cfg = trainer::desk_config(1);
  nets::GeneratorStack stack;
  stack.schedule = cfg.schedule();
  stack.mode = cfg.mode;
  torch::manual_seed(0);
  for (int i = 0; i < static_cast<int>(stack.schedule.size()); ++i) {
    stack.levels.push_back(trainer::init_level(stack, cfg, i));
    stack.levels.back().g_restore = nets::clone_generator(stack.levels.back().g_super);
  }
  const auto mask = data::make_phantom({}, 0, 2).mask;
  uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(synth::synthesize(stack, {mask, false, synth::paper_deltas(), seed++}).data_ptr());
  }
}
BENCHMARK(BM_DeskSynthesis)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
