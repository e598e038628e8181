#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "cbt/augment.hpp"
#include "cbt/bt_loss.hpp"
#include "cbt/continual.hpp"
#include "cbt/eval.hpp"
#include "cbt/model.hpp"
#include "cbt/rng.hpp"
#include "cbt/tape.hpp"
#include "cbt/taskgen.hpp"
#include "cbt/tensor.hpp"

using namespace cbt;

namespace {

Tensor random_tensor(Shape dims, std::uint64_t seed) {
    Tensor t(std::move(dims));
    Rng rng(Rng::key({seed, 0xbe7cu}));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform01();
    return t;
}

SampleSet random_set(int n, int c, int h, int w, std::uint64_t seed) {
    SampleSet s;
    for (int i = 0; i < n; ++i) {
        s.images.push_back(random_tensor({c, h, w}, seed + static_cast<std::uint64_t>(i)));
        s.ids.push_back(static_cast<std::uint64_t>(i));
    }
    return s;
}

EncoderConfig bench_encoder(int tile) {
    EncoderConfig cfg;
    cfg.input_shape = {3, tile, tile};
    cfg.kind = EncoderKind::tinyconv;
    cfg.hidden_widths = {8, 12};
    cfg.embed_dim = 16;
    cfg.projector_widths = {32, 32};
    cfg.init_seed = 1;
    return cfg;
}

void BM_RenderTile(benchmark::State& state) {
    const DomainSpec spec = droneoid_domain();
    const int tile = static_cast<int>(state.range(0));
    int index = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(render_tile(spec, tile, index++ % 64));
    }
}
BENCHMARK(BM_RenderTile)->Arg(16)->Arg(32)->Arg(64);

void BM_AugmentViews(benchmark::State& state) {
    const int tile = static_cast<int>(state.range(0));
    const SampleSet set = random_set(16, 3, tile, tile, 4);
    AugmentConfig cfg;
    cfg.seed = 11;
    std::uint64_t epoch = 0;
    for (auto _ : state) {
        AugmentationStream stream(set, cfg, 4, 7, 0, static_cast<int>(epoch++ % 1000));
        for (int b = 0; b < stream.batch_count(); ++b) {
            benchmark::DoNotOptimize(stream.batch(b));
        }
    }
}
BENCHMARK(BM_AugmentViews)->Arg(16)->Arg(32);

void BM_CrossCorrelation(benchmark::State& state) {
    const int d = static_cast<int>(state.range(0));
    const Tensor za = random_tensor({8, d}, 21);
    const Tensor zb = random_tensor({8, d}, 22);
    for (auto _ : state) {
        benchmark::DoNotOptimize(cross_correlation(za, zb, 1e-5));
    }
}
BENCHMARK(BM_CrossCorrelation)->Arg(16)->Arg(64)->Arg(256);

void BM_TwinLossBackward(benchmark::State& state) {
    const int tile = static_cast<int>(state.range(0));
    const EncoderConfig cfg = bench_encoder(tile);
    const ParameterVector params = init_params(cfg);
    const Tensor X = random_tensor({4, 3, tile, tile}, 31);
    const std::vector<std::uint64_t> ids{0, 1, 2, 3};
    AugmentConfig aug;
    aug.seed = 11;
    const BtLossConfig bt;
    for (auto _ : state) {
        auto [value, grad] = value_and_grad(
            [&](GradTape& t, const BoundParams& p) {
                return bt_loss_on_batch_graph(t, p, cfg, X, aug, bt, 3, ids).total;
            },
            params);
        benchmark::DoNotOptimize(value);
        benchmark::DoNotOptimize(grad);
    }
}
BENCHMARK(BM_TwinLossBackward)->Arg(16)->Arg(32);

void BM_FisherDiagonal(benchmark::State& state) {
    const EncoderConfig cfg = bench_encoder(16);
    const ParameterVector params = init_params(cfg);
    const SampleSet set = random_set(static_cast<int>(state.range(0)), 3, 16, 16, 5);
    AugmentConfig aug;
    aug.seed = 11;
    FisherPass pass;
    pass.batch_size = 4;
    pass.shuffle_seed = 7;
    pass.epoch_slot = 5;
    for (auto _ : state) {
        benchmark::DoNotOptimize(fisher_diagonal(params, cfg, set, aug, BtLossConfig{}, pass, "b"));
    }
}
BENCHMARK(BM_FisherDiagonal)->Arg(16)->Arg(32);

void BM_TrainEpoch(benchmark::State& state) {
    const EncoderConfig cfg = bench_encoder(16);
    const SampleSet set = random_set(16, 3, 16, 16, 6);
    AugmentConfig aug;
    aug.seed = 11;
    CbtConfig cc;
    cc.epochs = 1;
    cc.batch_size = 4;
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            train_task(init_params(cfg), cfg, set, aug, cc, nullptr, 0, "bench"));
    }
}
BENCHMARK(BM_TrainEpoch);

void BM_SegMetrics(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    LabelMask pred(side, side), truth(side, side);
    Rng rng(Rng::key({9, 0x5e9u}));
    for (auto& v : pred.ids) v = static_cast<std::int32_t>(rng.below(4));
    for (auto& v : truth.ids) v = static_cast<std::int32_t>(rng.below(4));
    for (auto _ : state) {
        benchmark::DoNotOptimize(compute_metrics(pred, truth, 4));
    }
}
BENCHMARK(BM_SegMetrics)->Arg(32)->Arg(256);

void BM_JaccardBackward(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0));
    ParameterVector pv;
    pv.add("probs", random_tensor({rows, 4}, 77));
    std::vector<LabelMask> masks(1, LabelMask(rows / 4, 4));
    Rng rng(Rng::key({3, 0x1a5u}));
    for (auto& v : masks[0].ids) v = static_cast<std::int32_t>(rng.below(4));
    const Tensor onehot = one_hot_rows(masks, 4);
    for (auto _ : state) {
        auto [value, grad] = value_and_grad(
            [&](GradTape& t, const BoundParams& p) {
                return jaccard_loss_graph(t, p["probs"], onehot);
            },
            pv);
        benchmark::DoNotOptimize(value);
        benchmark::DoNotOptimize(grad);
    }
}
BENCHMARK(BM_JaccardBackward)->Arg(256)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
