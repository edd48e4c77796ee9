#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "nextpoi/geodata.hpp"
#include "nextpoi/qrp_graph.hpp"
#include "nextpoi/rng.hpp"

using namespace nextpoi;

namespace {

const RegionBBox kBox{0.0, 10.0, 0.0, 10.0};

size_t count_arcs(const QrpGraph& g, EdgeType t) {
    size_t n = 0;
    for (const QrpArc& a : g.arcs) n += a.type == t;
    return n;
}

// Quadratic reference: leaf pairs linked by any segment with one endpoint
// located in each.
std::set<std::pair<int64_t, int64_t>> road_edges_oracle(const QuadTree& tree,
                                                        const std::set<int64_t>& leaves,
                                                        const RoadNetwork& road) {
    std::set<std::pair<int64_t, int64_t>> out;
    for (int64_t a : leaves)
        for (int64_t b : leaves) {
            if (a >= b) continue;
            for (const auto& [u, v] : road.edges) {
                const int64_t lu = tree.locate_leaf(road.nodes.at(u));
                const int64_t lv = tree.locate_leaf(road.nodes.at(v));
                if ((lu == a && lv == b) || (lu == b && lv == a)) {
                    out.insert({a, b});
                    break;
                }
            }
        }
    return out;
}

void check_type_discipline(const QrpGraph& g, const QuadTree& tree) {
    std::map<int32_t, int> contain_per_poi;
    for (const QrpArc& a : g.arcs) {
        const QrpNode& s = g.nodes[size_t(a.src)];
        const QrpNode& d = g.nodes[size_t(a.dst)];
        switch (a.type) {
            case EdgeType::Branch: {
                REQUIRE(s.type == NodeType::Tile);
                REQUIRE(d.type == NodeType::Tile);
                const bool parent_child = QuadTree::parent_id(d.key) == s.key ||
                                          QuadTree::parent_id(s.key) == d.key;
                CHECK(parent_child);
                break;
            }
            case EdgeType::Road: {
                REQUIRE(s.type == NodeType::Tile);
                REQUIRE(d.type == NodeType::Tile);
                CHECK(g.leaf_tile[size_t(a.src)] == 1);
                CHECK(g.leaf_tile[size_t(a.dst)] == 1);
                CHECK(tree.node(s.key).is_leaf());
                CHECK(tree.node(d.key).is_leaf());
                break;
            }
            case EdgeType::Contain: {
                const bool tile_to_poi = s.type == NodeType::Tile && d.type == NodeType::Poi;
                const bool poi_to_tile = s.type == NodeType::Poi && d.type == NodeType::Tile;
                CHECK(tile_to_poi != poi_to_tile);
                if (poi_to_tile) ++contain_per_poi[a.src];
                break;
            }
        }
    }
    // Every POI node has exactly one contain edge (one outgoing arc).
    for (size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].type == NodeType::Poi)
            CHECK(contain_per_poi[int32_t(i)] == 1);

    // Branch arcs restricted to tiles form a tree rooted at tile 0.
    std::set<int64_t> tiles;
    for (const QrpNode& nd : g.nodes)
        if (nd.type == NodeType::Tile) tiles.insert(nd.key);
    if (!tiles.empty()) {
        CHECK(tiles.count(0) == 1);
        CHECK(count_arcs(g, EdgeType::Branch) == 2 * (tiles.size() - 1));
        // Reachability from the root over branch arcs.
        std::set<int64_t> seen{0};
        bool grew = true;
        while (grew) {
            grew = false;
            for (const QrpArc& a : g.arcs) {
                if (a.type != EdgeType::Branch) continue;
                const int64_t sk = g.nodes[size_t(a.src)].key;
                const int64_t dk = g.nodes[size_t(a.dst)].key;
                if (seen.count(sk) && !seen.count(dk)) {
                    seen.insert(dk);
                    grew = true;
                }
            }
        }
        CHECK(seen == tiles);
    }
}

} // namespace

TEST_CASE("single-POI history is a root path with one contain edge") {
    std::vector<Poi> pois;
    for (int i = 0; i < 12; ++i)
        pois.push_back({i, {0.3 + 0.02 * i, 0.4 + 0.02 * i}, 0}); // one deep corner cluster
    QuadTree tree = QuadTree::build(pois, kBox, 3, 4);
    RoadNetwork road;
    road.nodes[0] = {0.1, 0.1};

    std::vector<int64_t> history{3};
    QrpGraph g = build_qrp_graph(history, tree, road);

    const int64_t leaf = tree.leaf_of_poi(3);
    const int depth = QuadTree::depth_of_id(leaf);
    CHECK(g.tile_count() == size_t(depth) + 1); // root path
    CHECK(g.poi_count() == 1);
    CHECK(count_arcs(g, EdgeType::Branch) == 2 * size_t(depth));
    CHECK(count_arcs(g, EdgeType::Contain) == 2);
    CHECK(count_arcs(g, EdgeType::Road) == 0);
    check_type_discipline(g, tree);
}

TEST_CASE("three leaves under two internal nodes: hand-built counts") {
    // Root splits; its NW child splits again. History touches two NW
    // grandchildren and one other root child, giving tile nodes:
    // root + NW + 2 grandchildren + SE child = 5, two of them "internal".
    std::vector<Poi> pois;
    // NW quadrant (lat in [5,10), lon in [0,5)): two sub-quadrants.
    pois.push_back({0, {8.75, 1.25}, 0}); // NW of NW
    pois.push_back({1, {6.25, 3.75}, 0}); // SE of NW
    pois.push_back({2, {2.5, 7.5}, 0});   // SE of root
    // One filler so the root and NW split while NW-of-NW stays at capacity.
    pois.push_back({3, {8.8, 1.3}, 0});
    QuadTree tree = QuadTree::build(pois, kBox, 4, 2);

    RoadNetwork road; // one segment linking POI 1's and POI 2's leaves
    road.nodes[1] = {6.25, 3.75};
    road.nodes[2] = {2.5, 7.5};
    road.edges.push_back({1, 2});

    std::vector<int64_t> history{0, 1, 2};
    QrpGraph g = build_qrp_graph(history, tree, road);

    CHECK(g.poi_count() == 3);
    CHECK(g.tile_count() == 5);
    CHECK(count_arcs(g, EdgeType::Branch) == 2 * 4); // 4 tree edges
    CHECK(count_arcs(g, EdgeType::Contain) == 2 * 3);
    CHECK(count_arcs(g, EdgeType::Road) == 2 * 1);
    check_type_discipline(g, tree);
}

TEST_CASE("repeated visits collapse to one POI node") {
    std::vector<Poi> pois;
    for (int i = 0; i < 8; ++i) pois.push_back({i, {1.0 + i, 1.0 + 0.5 * i}, 0});
    QuadTree tree = QuadTree::build(pois, kBox, 4, 2);
    RoadNetwork road;
    road.nodes[0] = {0.1, 0.1};

    std::vector<int64_t> history{5, 5, 5, 5, 5};
    QrpGraph g = build_qrp_graph(history, tree, road);
    CHECK(g.poi_count() == 1);
    CHECK(count_arcs(g, EdgeType::Contain) == 2);

    // Multiset-vs-set oracle: the graph over repeats equals the graph over
    // the distinct set.
    std::vector<int64_t> dedup{5};
    QrpGraph g2 = build_qrp_graph(dedup, tree, road);
    std::ostringstream a, b;
    g.dump(a);
    g2.dump(b);
    CHECK(a.str() == b.str());
}

TEST_CASE("road edges: within-tile segments contribute nothing") {
    std::vector<Poi> pois;
    for (int i = 0; i < 6; ++i) pois.push_back({i, {1.0 + 1.5 * i, 1.0 + 1.4 * i}, 0});
    QuadTree tree = QuadTree::build(pois, kBox, 3, 2);
    const auto leaves = tree.leaf_tiles();

    RoadNetwork inside;
    inside.nodes[0] = {0.5, 0.5};
    inside.nodes[1] = {0.6, 0.6}; // same deep leaf
    inside.edges.push_back({0, 1});
    CHECK(road_edges(tree, leaves, inside).empty());

    RoadNetwork crossing;
    crossing.nodes[0] = {2.0, 2.0};
    crossing.nodes[1] = {8.0, 8.0};
    crossing.edges.push_back({0, 1});
    auto edges = road_edges(tree, leaves, crossing);
    REQUIRE(edges.size() == 1);
    const int64_t la = tree.locate_leaf({2.0, 2.0});
    const int64_t lb = tree.locate_leaf({8.0, 8.0});
    CHECK(edges[0] == std::make_pair(std::min(la, lb), std::max(la, lb)));

    RoadNetwork empty_net;
    CHECK(road_edges(tree, leaves, empty_net).empty());
}

TEST_CASE("road edges match the quadratic oracle on a grid network") {
    SyntheticWorld w = generate_synthetic_world(11, 180, 3, 5);
    QuadTree tree = QuadTree::build(w.pois, w.bbox, 2, 30);
    const auto leaf_list = tree.leaf_tiles();
    const std::set<int64_t> leaves(leaf_list.begin(), leaf_list.end());

    auto got = road_edges(tree, leaf_list, w.road);
    auto expect = road_edges_oracle(tree, leaves, w.road);
    CHECK(std::set<std::pair<int64_t, int64_t>>(got.begin(), got.end()) == expect);
    CHECK(!got.empty()); // the grid must actually cross tiles
}

TEST_CASE("type discipline holds over random histories") {
    Rng rng = Rng::stream(21, "qrp-random");
    for (int rep = 0; rep < 30; ++rep) {
        SyntheticWorld w = generate_synthetic_world(100 + rep, 120, 3, 4);
        QuadTree tree = QuadTree::build(w.pois, w.bbox, 5, 10);
        std::vector<int64_t> history;
        const int n = 1 + int(rng.below(12));
        for (int i = 0; i < n; ++i) history.push_back(int64_t(rng.below(w.pois.size())));
        QrpGraph g = build_qrp_graph(history, tree, w.road);
        check_type_discipline(g, tree);

        // Leaf set equals the minimal subtree's leaves.
        std::set<int64_t> leaf_keys;
        for (size_t i = 0; i < g.nodes.size(); ++i)
            if (g.nodes[i].type == NodeType::Tile && g.leaf_tile[i]) leaf_keys.insert(g.nodes[i].key);
        std::set<int64_t> expect;
        for (int64_t pid : history) expect.insert(tree.leaf_of_poi(pid));
        CHECK(leaf_keys == expect);
    }
}

TEST_CASE("empty history yields the zero-node sentinel") {
    std::vector<Poi> pois = {{0, {5.0, 5.0}, 0}};
    QuadTree tree = QuadTree::build(pois, kBox, 3, 4);
    RoadNetwork road;
    road.nodes[0] = {0.1, 0.1};
    QrpGraph g = build_qrp_graph({}, tree, road);
    CHECK(g.empty());
    CHECK(g.nodes.empty());
    CHECK(g.arcs.empty());
}

TEST_CASE("rebuild determinism and dump format") {
    SyntheticWorld w = generate_synthetic_world(31, 150, 4, 5);
    QuadTree tree = QuadTree::build(w.pois, w.bbox, 5, 20);
    std::vector<int64_t> history;
    for (int i = 0; i < 25; ++i) history.push_back(w.checkins[size_t(i) * 3].poi_id);

    QrpGraph a = build_qrp_graph(history, tree, w.road);
    QrpGraph b = build_qrp_graph(history, tree, w.road);
    std::ostringstream da, db;
    a.dump(da);
    b.dump(db);
    CHECK(da.str() == db.str());

    // Dump shape: V lines first with type names, then E lines.
    std::istringstream in(da.str());
    std::string line;
    bool seen_edge = false;
    while (std::getline(in, line)) {
        REQUIRE(!line.empty());
        if (line[0] == 'V') {
            CHECK(!seen_edge);
            CHECK((line.find("tile") != std::string::npos ||
                   line.find("POI") != std::string::npos));
        } else {
            REQUIRE(line[0] == 'E');
            seen_edge = true;
            CHECK((line.find("branch") != std::string::npos ||
                   line.find("road") != std::string::npos ||
                   line.find("contain") != std::string::npos));
        }
    }
    CHECK(seen_edge);

    // Edge-flag options drop the corresponding arc types.
    QrpBuildOptions opts;
    opts.include_road = false;
    QrpGraph no_road = build_qrp_graph(history, tree, w.road, opts);
    CHECK(count_arcs(no_road, EdgeType::Road) == 0);
    CHECK(count_arcs(no_road, EdgeType::Contain) > 0);
    opts.include_road = true;
    opts.include_contain = false;
    QrpGraph no_contain = build_qrp_graph(history, tree, w.road, opts);
    CHECK(count_arcs(no_contain, EdgeType::Contain) == 0);
}
