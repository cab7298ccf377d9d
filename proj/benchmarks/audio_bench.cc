#include <cmath>
#include <numbers>

#include "basetts/audio/audio.h"
#include "basetts/audio/mel.h"
#include "benchmark/benchmark.h"

namespace {

basetts::audio::Waveform Tone(double seconds) {
  std::vector<double> x(static_cast<size_t>(seconds * basetts::audio::kSampleRate));
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = 0.3 * std::sin(2.0 * std::numbers::pi * 220.0 * i / basetts::audio::kSampleRate);
  }
  return basetts::audio::FromDouble(x);
}

void BM_Mel(benchmark::State& state) {
  const auto w = Tone(static_cast<double>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(basetts::audio::ComputeMel(w));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(w.samples.size()));
}
BENCHMARK(BM_Mel)->Arg(1)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace
