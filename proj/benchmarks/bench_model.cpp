#include <benchmark/benchmark.h>

#include "nextpoi/experiments.hpp"

using namespace nextpoi;

namespace {

struct Fixture {
    SyntheticWorld world;
    TrainConfig cfg;
    Dataset data;
    Model model;
    std::vector<Sample> samples;

    static TrainConfig bench_config() {
        TrainConfig cfg;
        cfg.embed_dim = 64;
        cfg.epochs = 1;
        cfg.batch_size = 8;
        cfg.leaf_capacity = 50;
        cfg.top_k = 8;
        cfg.dropout = 0.0;
        cfg.threads = 2;
        return cfg;
    }

    Fixture()
        : world(generate_synthetic_world(7, 300, 8, 5)),
          cfg(bench_config()),
          data(dataset_from_world(world, cfg)),
          model(make_model(data, cfg)),
          samples(expand_samples(data, Split::Train)) {}
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

} // namespace

static void BM_TileTableBuild(benchmark::State& state) {
    Fixture& f = fixture();
    for (auto _ : state) {
        ad::Mat table = f.model.build_tile_table(
            [&](int row) -> const TileImage& { return f.data.image_of_row(row); },
            f.data.n_tiles(), int(state.range(0)));
        benchmark::DoNotOptimize(table.sum());
    }
}
BENCHMARK(BM_TileTableBuild)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

static void BM_SampleForward(benchmark::State& state) {
    Fixture& f = fixture();
    ad::Mat table = f.model.build_tile_table(
        [&](int row) -> const TileImage& { return f.data.image_of_row(row); },
        f.data.n_tiles(), 2);
    size_t i = 0;
    for (auto _ : state) {
        const Sample& s = f.samples[i++ % f.samples.size()];
        SampleBinding b = bind_sample(f.data, s, f.cfg.embed_dim, true);
        ad::Tape tape;
        ad::Var tv = tape.constant(table);
        ForwardResult out = f.model.forward(tape, tv, b.seq, b.graph, false, nullptr);
        benchmark::DoNotOptimize(tape.val(out.h_poi).sum());
    }
}
BENCHMARK(BM_SampleForward)->Unit(benchmark::kMicrosecond);

static void BM_TrainStep(benchmark::State& state) {
    Fixture& f = fixture();
    Trainer trainer(f.model, f.data, f.cfg);
    for (auto _ : state) {
        const size_t n = std::min<size_t>(size_t(f.cfg.batch_size), f.samples.size());
        benchmark::DoNotOptimize(trainer.step({f.samples.data(), n}, 0));
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
