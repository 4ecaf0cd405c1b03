#include <benchmark/benchmark.h>

#include "sppe/features.hpp"
#include "sppe/patching.hpp"
#include "sppe/rng.hpp"
#include "sppe/synthdata.hpp"
#include "sppe/training.hpp"
#include "sppe/transformer.hpp"

namespace {

using sppe::Rng;

static void BM_StftOneSecond(benchmark::State& state) {
  sppe::AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(16000);
  Rng rng(1);
  for (double& s : clip.samples) s = 0.1 * rng.normal();
  const sppe::Stft stft;
  for (auto _ : state) {
    sppe::Spectrogram spec = stft.power(clip);
    benchmark::DoNotOptimize(spec.values.data());
  }
}
BENCHMARK(BM_StftOneSecond);

static void BM_MelLog(benchmark::State& state) {
  sppe::Spectrogram spec(201, 98, sppe::SpecDomain::LinearPower);
  Rng rng(1);
  for (double& v : spec.values) v = rng.uniform();
  const sppe::MelFilterbank mel;
  for (auto _ : state) {
    sppe::Spectrogram out = mel.apply_log(spec);
    benchmark::DoNotOptimize(out.values.data());
  }
}
BENCHMARK(BM_MelLog);

static void BM_DeskForward(benchmark::State& state) {
  const sppe::PatchLayout layout = sppe::PatchLayout::desk();
  sppe::ModelConfig cfg = sppe::ModelConfig::desk();
  cfg.pe = static_cast<sppe::PEVariant>(state.range(0));
  auto model = sppe::Model<float>::init(cfg, layout, 1);
  sppe::SynthTask task;
  task.count = 2;
  const auto specs = sppe::gen_task(task);
  const auto patches = sppe::patchify<float>(specs[0].spec, layout);
  for (auto _ : state) {
    auto out = sppe::encoder_forward<float>(nullptr, model, patches);
    benchmark::DoNotOptimize(out.logits.ptr());
  }
}
BENCHMARK(BM_DeskForward)
    ->Arg(static_cast<int>(sppe::PEVariant::None))
    ->Arg(static_cast<int>(sppe::PEVariant::Absolute))
    ->Arg(static_cast<int>(sppe::PEVariant::LearnedRelative))
    ->Arg(static_cast<int>(sppe::PEVariant::Conditional));

static void BM_DeskTrainStep(benchmark::State& state) {
  const sppe::PatchLayout layout = sppe::PatchLayout::desk();
  sppe::ModelConfig cfg = sppe::ModelConfig::desk();
  cfg.pe = sppe::PEVariant::Conditional;
  auto model = sppe::Model<float>::init(cfg, layout, 1);
  sppe::SynthTask task;
  task.count = 16;
  const auto specs = sppe::gen_task(task);
  std::vector<sppe::Sample<float>> samples;
  for (const auto& ls : specs) {
    samples.push_back({sppe::patchify<float>(ls.spec, layout), ls.label, {}, ""});
  }
  std::vector<const sppe::Sample<float>*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  std::vector<sppe::Tensor<float>> handles;
  for (auto& [name, t] : model.params.named) handles.push_back(t);
  sppe::Adam<float> opt(handles);
  sppe::TrainConfig tc;
  tc.batch_size = 16;
  long step = 0;
  for (auto _ : state) {
    const double loss = sppe::train_step(model, opt, batch, ++step, tc, nullptr);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_DeskTrainStep);

}  // namespace
