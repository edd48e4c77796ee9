#include <benchmark/benchmark.h>

#include "nextpoi/qrp_graph.hpp"
#include "nextpoi/quadtree.hpp"
#include "nextpoi/rng.hpp"

using namespace nextpoi;

namespace {

std::vector<Poi> make_pois(int n, uint64_t seed) {
    Rng rng = Rng::stream(seed, "bench-pois");
    std::vector<Poi> pois;
    pois.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        pois[size_t(i)].id = i;
        pois[size_t(i)].loc = {rng.uniform(0, 10), rng.uniform(0, 10)};
        pois[size_t(i)].cate = int32_t(rng.below(10));
    }
    return pois;
}

const RegionBBox kBox{0, 10, 0, 10};

} // namespace

static void BM_QuadTreeBuild(benchmark::State& state) {
    auto pois = make_pois(int(state.range(0)), 1);
    for (auto _ : state) {
        QuadTree t = QuadTree::build(pois, kBox, 8, 100);
        benchmark::DoNotOptimize(t.node_count());
    }
}
BENCHMARK(BM_QuadTreeBuild)->Arg(1000)->Arg(10000)->Arg(100000);

static void BM_LocateLeaf(benchmark::State& state) {
    auto pois = make_pois(20000, 2);
    QuadTree t = QuadTree::build(pois, kBox, 8, 100);
    Rng rng = Rng::stream(3, "bench-probe");
    for (auto _ : state) {
        GeoPoint p{rng.uniform(0, 10), rng.uniform(0, 10)};
        benchmark::DoNotOptimize(t.locate_leaf(p));
    }
}
BENCHMARK(BM_LocateLeaf);

static void BM_QrpGraphBuild(benchmark::State& state) {
    auto pois = make_pois(5000, 4);
    QuadTree t = QuadTree::build(pois, kBox, 8, 50);
    RoadNetwork road;
    for (int r = 0; r < 12; ++r)
        for (int c = 0; c < 12; ++c) {
            const int64_t id = r * 12 + c;
            road.nodes[id] = {10.0 * r / 11, 10.0 * c / 11};
            if (c + 1 < 12) road.edges.emplace_back(id, id + 1);
            if (r + 1 < 12) road.edges.emplace_back(id, id + 12);
        }
    Rng rng = Rng::stream(5, "bench-history");
    std::vector<int64_t> history;
    for (int i = 0; i < int(state.range(0)); ++i) history.push_back(int64_t(rng.below(5000)));
    for (auto _ : state) {
        QrpGraph g = build_qrp_graph(history, t, road);
        benchmark::DoNotOptimize(g.nodes.size());
    }
}
BENCHMARK(BM_QrpGraphBuild)->Arg(20)->Arg(100);
