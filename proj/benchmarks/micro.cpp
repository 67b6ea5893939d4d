#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "motionood/conformal.hpp"
#include "motionood/nn.hpp"
#include "motionood/opticflow.hpp"
#include "motionood/synthdata.hpp"
#include "motionood/trainer.hpp"
#include "motionood/vae.hpp"

using namespace motionood;

namespace {

Episode two_frames(std::size_t size) {
    SceneConfig c;
    c.size = size;
    c.episode_length = 2;
    c.seed = 1;
    return gen_id_episode(c);
}

Grid random_input(const VaeArchitecture& arch) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Grid g(arch.input_channels, arch.input_size, arch.input_size);
    for (float& v : g.data()) v = u(rng);
    return g;
}

void BM_LucasKanade(benchmark::State& state) {
    const Episode ep = two_frames(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(lucas_kanade(ep.frames[0], ep.frames[1], FlowParams{}));
}
BENCHMARK(BM_LucasKanade)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
    const VaeArchitecture arch;
    const VaeWeights w = init_weights(arch, 1);
    const Grid x = random_input(arch);
    for (auto _ : state) benchmark::DoNotOptimize(encode(w, x));
}
BENCHMARK(BM_Encode)->Unit(benchmark::kMillisecond);

// One forward and backward pass of a single sample.
void BM_TrainSample(benchmark::State& state) {
    const VaeArchitecture arch;
    const VaeWeights w = init_weights(arch, 1);
    const Grid x = random_input(arch);
    const std::vector<float> noise(arch.latent_dim, 0.1f);
    BasicVaeWeights<float> grad = zero_weights<float>(arch);
    nn::ForwardTrace<float> tr;
    for (auto _ : state) {
        nn::vae_forward<float>(w, x.data(), noise, tr);
        benchmark::DoNotOptimize(nn::vae_backward<float>(w, tr, x.data(), 1.0f, grad));
    }
}
BENCHMARK(BM_TrainSample)->Unit(benchmark::kMillisecond);

void BM_Martingale(benchmark::State& state) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    std::vector<double> p(static_cast<std::size_t>(state.range(0)));
    for (double& v : p) v = u(rng);
    for (auto _ : state) benchmark::DoNotOptimize(log_mixture_martingale(p));
}
BENCHMARK(BM_Martingale)->Arg(10)->Arg(20);

void BM_DetectorStep(benchmark::State& state) {
    CalibrationSet cal;
    for (int i = 1; i <= 99; ++i) cal.scores.push_back(i);
    const DetectorConfig cfg;
    DetectorState s;
    double alpha = 0.0;
    for (auto _ : state) {
        s = step(s, alpha, cal, cfg).state;
        alpha = alpha > 120.0 ? 0.0 : alpha + 1.0;
    }
}
BENCHMARK(BM_DetectorStep);

}  // namespace
BENCHMARK_MAIN();
