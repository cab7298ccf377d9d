#include <vector>

#include "basetts/gpt/speech_gpt.h"
#include "basetts/nn/tensor.h"
#include "benchmark/benchmark.h"

namespace {

using basetts::gpt::ModelConfig;

ModelConfig Toy() {
  ModelConfig c = ModelConfig::Preset("toy");
  c.text_vocab = 300;
  c.code_vocab = 320;
  c.ref_dim = 16;
  return c;
}

void BM_Forward(benchmark::State& state) {
  const ModelConfig c = Toy();
  basetts::nn::Rng rng(1);
  basetts::gpt::SpeechGpt lm(c, rng);
  const std::vector<double> ref(c.ref_dim, 0.25);
  const std::vector<int64_t> text(32, 7);
  const std::vector<int64_t> codes(state.range(0), 3);
  const auto seq = basetts::gpt::BuildSequence(ref, text, codes, c);
  basetts::nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(lm.Forward(seq));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(seq.length()));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Generate(benchmark::State& state) {
  const ModelConfig c = Toy();
  basetts::nn::Rng rng(1);
  basetts::gpt::SpeechGpt lm(c, rng);
  const std::vector<double> ref(c.ref_dim, 0.25);
  const std::vector<int64_t> text(16, 7);
  basetts::gpt::SamplingConfig s;
  s.max_codes = static_cast<int>(state.range(0));
  s.min_codes = s.max_codes;
  for (auto _ : state) benchmark::DoNotOptimize(lm.Generate(ref, text, s));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Generate)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
