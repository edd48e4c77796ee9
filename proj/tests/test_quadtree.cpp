#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "nextpoi/quadtree.hpp"
#include "nextpoi/rng.hpp"

using namespace nextpoi;

namespace {

const RegionBBox kUnit{0.0, 10.0, 0.0, 10.0};

std::vector<Poi> clustered_pois(uint64_t seed, int n, const RegionBBox& b = kUnit) {
    Rng rng = Rng::stream(seed, "test-clustered-pois");
    const int n_clusters = 5;
    std::vector<GeoPoint> centers(n_clusters);
    for (auto& c : centers) {
        c.lat = b.min_lat + b.lat_span() * (0.1 + 0.8 * rng.uniform());
        c.lon = b.min_lon + b.lon_span() * (0.1 + 0.8 * rng.uniform());
    }
    std::vector<Poi> pois(n);
    for (int i = 0; i < n; ++i) {
        const auto& c = centers[rng.below(n_clusters)];
        pois[i].id = i;
        pois[i].loc.lat = std::clamp(c.lat + 0.35 * rng.normal(), b.min_lat, b.max_lat);
        pois[i].loc.lon = std::clamp(c.lon + 0.35 * rng.normal(), b.min_lon, b.max_lon);
        pois[i].cate = int32_t(rng.below(7));
    }
    return pois;
}

// Exhaustive leaf scan under the half-open rule (global max edges closed).
bool bbox_holds(const RegionBBox& b, const GeoPoint& p, const RegionBBox& root) {
    const bool lat_hi = p.lat < b.max_lat || (b.max_lat == root.max_lat && p.lat == b.max_lat);
    const bool lon_hi = p.lon < b.max_lon || (b.max_lon == root.max_lon && p.lon == b.max_lon);
    return p.lat >= b.min_lat && lat_hi && p.lon >= b.min_lon && lon_hi;
}

void check_invariants(const QuadTree& t, const std::vector<Poi>& pois, int max_depth,
                      int capacity) {
    size_t poi_total = 0;
    double leaf_area = 0.0;
    const RegionBBox root = t.root_bbox();
    const double root_area = root.lat_span() * root.lon_span();

    for (size_t i = 0; i < t.node_count(); ++i) {
        const TileNode& nd = t.node_at(i);
        CHECK(nd.depth <= max_depth);
        CHECK(QuadTree::depth_of_id(nd.tile_id) == nd.depth);
        if (nd.is_leaf()) {
            poi_total += nd.poi_ids.size();
            leaf_area += nd.bbox.lat_span() * nd.bbox.lon_span();
            if (nd.depth < max_depth) CHECK(int(nd.poi_ids.size()) <= capacity);
        } else {
            CHECK(nd.poi_ids.empty());
            for (int k = 0; k < 4; ++k) {
                REQUIRE(nd.children[k] >= 0);
                const TileNode& ch = t.node_at(size_t(nd.children[k]));
                CHECK(ch.tile_id == QuadTree::child_id(nd.tile_id, k));
                CHECK(ch.depth == nd.depth + 1);
            }
        }
    }
    CHECK(poi_total == pois.size());
    CHECK(std::abs(leaf_area / root_area - 1.0) < 1e-9);

    // Tile ids injective.
    std::set<int64_t> ids;
    for (size_t i = 0; i < t.node_count(); ++i) ids.insert(t.node_at(i).tile_id);
    CHECK(ids.size() == t.node_count());

    // Every POI locates into the leaf that owns it.
    for (const Poi& p : pois) {
        const int64_t leaf = t.locate_leaf(p.loc);
        CHECK(leaf == t.leaf_of_poi(p.id));
        const auto& owned = t.node(leaf).poi_ids;
        CHECK(std::find(owned.begin(), owned.end(), p.id) != owned.end());
        CHECK(bbox_holds(t.node(leaf).bbox, p.loc, root));
    }
}

} // namespace

TEST_CASE("small POI set stays a single root leaf") {
    auto pois = clustered_pois(7, 30);
    QuadTree t = QuadTree::build(pois, kUnit, 8, 100);
    CHECK(t.node_count() == 1);
    CHECK(t.leaf_tiles() == std::vector<int64_t>{0});
    for (const Poi& p : pois) CHECK(t.locate_leaf(p.loc) == 0);
}

TEST_CASE("capacity cap holds below the depth limit") {
    auto pois = clustered_pois(11, 2000);
    QuadTree t = QuadTree::build(pois, kUnit, 8, 100);
    for (size_t i = 0; i < t.node_count(); ++i) {
        const TileNode& nd = t.node_at(i);
        if (nd.is_leaf() && nd.depth < 8) CHECK(int(nd.poi_ids.size()) <= 100);
    }
    CHECK(t.stats().leaf_nodes + t.stats().internal_nodes == int64_t(t.node_count()));
}

TEST_CASE("invariant suite over seeds and configs") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto pois = clustered_pois(seed, 1000);
        QuadTree t = QuadTree::build(pois, kUnit, 10, 50);
        check_invariants(t, pois, 10, 50);
    }
}

TEST_CASE("points on internal split lines go east / north") {
    // Force a root split with capacity 1.
    std::vector<Poi> pois = {{0, {2.0, 2.0}, 0}, {1, {8.0, 8.0}, 0}};
    QuadTree t = QuadTree::build(pois, kUnit, 4, 1);
    REQUIRE(t.node_count() >= 5);
    // Vertical split line at lon = 5: assigned to the eastern child.
    CHECK(t.locate_leaf({2.0, 5.0}) == QuadTree::child_id(0, kSouthEast));
    // Horizontal split line at lat = 5: assigned to the northern child.
    CHECK(t.locate_leaf({5.0, 2.0}) == QuadTree::child_id(0, kNorthWest));
    // Both lines: north-east.
    CHECK(t.locate_leaf({5.0, 5.0}) == QuadTree::child_id(0, kNorthEast));
    // Global max edges are closed.
    CHECK(t.has_tile(t.locate_leaf({10.0, 10.0})));
}

TEST_CASE("leaf ordering is ascending and matches the child-id formula") {
    std::vector<Poi> pois = {{0, {2.0, 2.0}, 0}, {1, {8.0, 8.0}, 0}};
    QuadTree t = QuadTree::build(pois, kUnit, 1, 1);
    CHECK(t.leaf_tiles() == std::vector<int64_t>{1, 2, 3, 4});

    // Depth-2 fixture: recursive enumeration oracle.
    auto deep = clustered_pois(3, 300);
    QuadTree t2 = QuadTree::build(deep, kUnit, 2, 40);
    std::vector<int64_t> oracle;
    std::function<void(int64_t)> walk = [&](int64_t tid) {
        const TileNode& nd = t2.node(tid);
        if (nd.is_leaf()) {
            oracle.push_back(tid);
            return;
        }
        for (int k = 0; k < 4; ++k) walk(QuadTree::child_id(tid, k));
    };
    walk(0);
    std::sort(oracle.begin(), oracle.end());
    CHECK(t2.leaf_tiles() == oracle);
}

TEST_CASE("locate agrees with a brute-force leaf scan") {
    auto pois = clustered_pois(5, 800);
    QuadTree t = QuadTree::build(pois, kUnit, 6, 30);
    Rng rng = Rng::stream(5, "locate-probe");
    for (int i = 0; i < 500; ++i) {
        GeoPoint p{kUnit.min_lat + kUnit.lat_span() * rng.uniform(),
                   kUnit.min_lon + kUnit.lon_span() * rng.uniform()};
        int64_t expected = -1;
        for (int64_t leaf : t.leaf_tiles())
            if (bbox_holds(t.node(leaf).bbox, p, t.root_bbox())) {
                expected = leaf;
                break;
            }
        REQUIRE(expected >= 0);
        CHECK(t.locate_leaf(p) == expected);
    }
}

TEST_CASE("minimal subtree equals the exhaustive minimal covering subtree") {
    Rng rng = Rng::stream(17, "minimal-subtree");
    int ran = 0;
    for (int rep = 0; rep < 40; ++rep) {
        // Small trees so that subset enumeration stays feasible.
        auto pois = clustered_pois(100 + rep, 12);
        QuadTree t = QuadTree::build(pois, kUnit, 4, 2);
        if (t.node_count() > 21) continue;
        ++ran;

        std::vector<int64_t> chosen;
        const int n_chosen = 1 + int(rng.below(6));
        for (int i = 0; i < n_chosen; ++i) chosen.push_back(int64_t(rng.below(pois.size())));

        MinimalSubtree sub = t.minimal_subtree(chosen);

        // Oracle: smallest root-containing connected node subset whose
        // leaves cover all chosen POIs.
        std::vector<int64_t> all = t.all_tiles();
        const size_t n = all.size();
        std::set<int64_t> want_leaves;
        for (int64_t pid : chosen) want_leaves.insert(t.leaf_of_poi(pid));

        size_t best_size = SIZE_MAX;
        std::set<int64_t> best;
        REQUIRE(n <= 22);
        for (uint64_t mask = 0; mask < (1ull << n); ++mask) {
            std::set<int64_t> subset;
            for (size_t b = 0; b < n; ++b)
                if (mask & (1ull << b)) subset.insert(all[b]);
            if (!subset.count(0)) continue;
            if (subset.size() >= best_size) continue;
            bool connected = true;
            for (int64_t tid : subset)
                if (tid != 0 && !subset.count(QuadTree::parent_id(tid))) {
                    connected = false;
                    break;
                }
            if (!connected) continue;
            bool covers = true;
            for (int64_t leaf : want_leaves)
                if (!subset.count(leaf)) {
                    covers = false;
                    break;
                }
            if (!covers) continue;
            best_size = subset.size();
            best = subset;
        }
        REQUIRE(best_size != SIZE_MAX);
        CHECK(std::vector<int64_t>(best.begin(), best.end()) == sub.tiles);
    }
    CHECK(ran >= 10); // the oracle must actually exercise cases
}

TEST_CASE("minimal subtree trivia") {
    auto pois = clustered_pois(23, 60);
    QuadTree t = QuadTree::build(pois, kUnit, 6, 10);

    // All chosen POIs in one leaf: the subtree is exactly the root path.
    const int64_t leaf = t.leaf_of_poi(pois[0].id);
    std::vector<int64_t> one{pois[0].id};
    MinimalSubtree sub = t.minimal_subtree(one);
    std::vector<int64_t> path;
    for (int64_t cur = leaf;; cur = QuadTree::parent_id(cur)) {
        path.push_back(cur);
        if (cur == 0) break;
    }
    std::sort(path.begin(), path.end());
    CHECK(sub.tiles == path);
    CHECK(sub.leaves == std::vector<int64_t>{leaf});

    // Closed under parent; leaves equal the hosting leaves.
    std::vector<int64_t> many;
    for (int i = 0; i < 10; ++i) many.push_back(pois[size_t(i)].id);
    MinimalSubtree sub2 = t.minimal_subtree(many);
    std::set<int64_t> tiles(sub2.tiles.begin(), sub2.tiles.end());
    for (int64_t tid : sub2.tiles)
        if (tid != 0) CHECK(tiles.count(QuadTree::parent_id(tid)));
    std::set<int64_t> expect_leaves;
    for (int64_t pid : many) expect_leaves.insert(t.leaf_of_poi(pid));
    CHECK(std::vector<int64_t>(expect_leaves.begin(), expect_leaves.end()) == sub2.leaves);

    CHECK_THROWS_AS(t.minimal_subtree(std::vector<int64_t>{}), ConfigError);
}

TEST_CASE("serialization round-trips and rebuilds identically") {
    auto pois = clustered_pois(29, 400);
    QuadTree t = QuadTree::build(pois, kUnit, 6, 25);

    std::ostringstream first;
    t.serialize(first);
    QuadTree t2 = QuadTree::build(pois, kUnit, 6, 25);
    std::ostringstream second;
    t2.serialize(second);
    CHECK(first.str() == second.str()); // stable under rebuild

    std::istringstream in(first.str());
    QuadTree parsed = QuadTree::deserialize(in);
    std::ostringstream third;
    parsed.serialize(third);
    CHECK(third.str() == first.str());

    Rng rng = Rng::stream(31, "roundtrip-probe");
    for (int i = 0; i < 200; ++i) {
        GeoPoint p{rng.uniform(0, 10), rng.uniform(0, 10)};
        CHECK(parsed.locate_leaf(p) == t.locate_leaf(p));
    }
}

TEST_CASE("depth-capped overflow leaves are flagged") {
    std::vector<Poi> pois;
    for (int i = 0; i < 10; ++i) pois.push_back({i, {1.0 + 0.01 * i, 1.0 + 0.01 * i}, 0});
    QuadTree t = QuadTree::build(pois, kUnit, 1, 1);
    CHECK(t.stats().overflow_leaves >= 1);
}

TEST_CASE("build rejects bad input") {
    std::vector<Poi> pois = {{0, {2.0, 2.0}, 0}};
    CHECK_THROWS_AS(QuadTree::build(pois, kUnit, 0, 10), ConfigError);
    CHECK_THROWS_AS(QuadTree::build(pois, kUnit, 4, 0), ConfigError);
    std::vector<Poi> outside = {{42, {11.0, 2.0}, 0}};
    CHECK_THROWS_WITH_AS(QuadTree::build(outside, kUnit, 4, 10), doctest::Contains("42"),
                         ConfigError);
}
