#include "nextpoi/qrp_graph.hpp"

#include <algorithm>
#include <ostream>
#include <set>
#include <unordered_map>

#include "nextpoi/common.hpp"

namespace nextpoi {

const char* to_string(NodeType t) { return t == NodeType::Tile ? "tile" : "POI"; }

const char* to_string(EdgeType t) {
    switch (t) {
        case EdgeType::Branch: return "branch";
        case EdgeType::Road: return "road";
        default: return "contain";
    }
}

size_t QrpGraph::tile_count() const {
    size_t n = 0;
    for (const QrpNode& nd : nodes) n += nd.type == NodeType::Tile;
    return n;
}

size_t QrpGraph::poi_count() const { return nodes.size() - tile_count(); }

int32_t QrpGraph::index_of(NodeType type, int64_t key) const {
    // Nodes are stored tiles-first, each section ascending by key.
    const size_t tiles = tile_count();
    const size_t lo = type == NodeType::Tile ? 0 : tiles;
    const size_t hi = type == NodeType::Tile ? tiles : nodes.size();
    auto begin = nodes.begin() + lo, end = nodes.begin() + hi;
    auto it = std::lower_bound(begin, end, key,
                               [](const QrpNode& n, int64_t k) { return n.key < k; });
    if (it == end || it->key != key) return -1;
    return static_cast<int32_t>(it - nodes.begin());
}

void QrpGraph::dump(std::ostream& out) const {
    for (const QrpNode& nd : nodes)
        out << "V " << (nd.type == NodeType::Tile ? 't' : 'p') << nd.key << ' '
            << to_string(nd.type) << '\n';
    for (const QrpArc& a : arcs) {
        const QrpNode& s = nodes[a.src];
        const QrpNode& d = nodes[a.dst];
        out << "E " << (s.type == NodeType::Tile ? 't' : 'p') << s.key << ' '
            << (d.type == NodeType::Tile ? 't' : 'p') << d.key << ' ' << to_string(a.type)
            << '\n';
    }
}

std::vector<std::pair<int64_t, int64_t>> road_edges(const QuadTree& tree,
                                                    std::span<const int64_t> leaf_ids,
                                                    const RoadNetwork& road) {
    const std::set<int64_t> leaves(leaf_ids.begin(), leaf_ids.end());
    std::set<std::pair<int64_t, int64_t>> pairs;
    for (const auto& [a, b] : road.edges) {
        const int64_t la = tree.locate_leaf(road.nodes.at(a));
        const int64_t lb = tree.locate_leaf(road.nodes.at(b));
        if (la == lb) continue;
        if (!leaves.count(la) || !leaves.count(lb)) continue;
        pairs.insert({std::min(la, lb), std::max(la, lb)});
    }
    return {pairs.begin(), pairs.end()};
}

QrpGraph build_qrp_graph(std::span<const int64_t> history_poi_ids, const QuadTree& tree,
                         const RoadNetwork& road, const QrpBuildOptions& opts) {
    QrpGraph g;
    if (history_poi_ids.empty()) return g; // empty-history sentinel

    // Distinct POIs; repeated visits collapse to one node.
    std::vector<int64_t> pois(history_poi_ids.begin(), history_poi_ids.end());
    std::sort(pois.begin(), pois.end());
    pois.erase(std::unique(pois.begin(), pois.end()), pois.end());

    const MinimalSubtree sub = tree.minimal_subtree(pois);

    g.nodes.reserve(sub.tiles.size() + pois.size());
    for (int64_t tid : sub.tiles) g.nodes.push_back(QrpNode{tid, NodeType::Tile});
    for (int64_t pid : pois) g.nodes.push_back(QrpNode{pid, NodeType::Poi});

    const std::set<int64_t> leaf_set(sub.leaves.begin(), sub.leaves.end());
    g.leaf_tile.assign(g.nodes.size(), 0);
    for (size_t i = 0; i < sub.tiles.size(); ++i)
        g.leaf_tile[i] = leaf_set.count(g.nodes[i].key) ? 1 : 0;

    auto must_index = [&](NodeType t, int64_t key) {
        const int32_t idx = g.index_of(t, key);
        if (idx < 0) throw LookupError("graph node lookup failed for key " + std::to_string(key));
        return idx;
    };

    std::vector<QrpArc> arcs;
    // Branch arcs: every non-root subtree tile to its parent (the parent is
    // in the subtree by path closure).
    for (int64_t tid : sub.tiles) {
        if (tid == 0) continue;
        const int32_t child = must_index(NodeType::Tile, tid);
        const int32_t parent = must_index(NodeType::Tile, QuadTree::parent_id(tid));
        arcs.push_back(QrpArc{parent, child, EdgeType::Branch});
        arcs.push_back(QrpArc{child, parent, EdgeType::Branch});
    }
    if (opts.include_road) {
        for (const auto& [a, b] : road_edges(tree, sub.leaves, road)) {
            const int32_t ia = must_index(NodeType::Tile, a);
            const int32_t ib = must_index(NodeType::Tile, b);
            arcs.push_back(QrpArc{ia, ib, EdgeType::Road});
            arcs.push_back(QrpArc{ib, ia, EdgeType::Road});
        }
    }
    if (opts.include_contain) {
        for (int64_t pid : pois) {
            const int32_t ip = must_index(NodeType::Poi, pid);
            const int32_t it = must_index(NodeType::Tile, tree.leaf_of_poi(pid));
            arcs.push_back(QrpArc{it, ip, EdgeType::Contain});
            arcs.push_back(QrpArc{ip, it, EdgeType::Contain});
        }
    }

    std::sort(arcs.begin(), arcs.end(), [](const QrpArc& x, const QrpArc& y) {
        if (x.type != y.type) return x.type < y.type;
        if (x.src != y.src) return x.src < y.src;
        return x.dst < y.dst;
    });
    g.arcs = std::move(arcs);
    return g;
}

} // namespace nextpoi
