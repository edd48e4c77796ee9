#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "nextpoi/quadtree.hpp"
#include "nextpoi/types.hpp"

namespace nextpoi {

enum class NodeType : uint8_t { Poi = 0, Tile = 1 };
enum class EdgeType : uint8_t { Branch = 0, Road = 1, Contain = 2 };

const char* to_string(NodeType t);
const char* to_string(EdgeType t);

struct QrpNode {
    int64_t key = 0; // tile id or POI id, per type
    NodeType type = NodeType::Poi;
};

// Directed arc between node indices. Semantically undirected edges are
// stored as two arcs so neighbor sets are defined in both directions.
struct QrpArc {
    int32_t src = 0;
    int32_t dst = 0;
    EdgeType type = EdgeType::Branch;
};

// Heterogeneous graph over the minimal quad-tree subtree of a user's
// history plus the distinct POIs it visits. Branch arcs connect
// parent/child tiles, road arcs connect leaf tiles linked by a road
// segment, contain arcs connect each POI to its hosting leaf.
struct QrpGraph {
    std::vector<QrpNode> nodes; // tiles ascending by id, then POIs ascending by id
    std::vector<QrpArc> arcs;   // sorted by (type, src, dst)
    std::vector<uint8_t> leaf_tile; // parallel to nodes; 1 for leaf-tile nodes

    bool empty() const { return nodes.empty(); }
    size_t tile_count() const;
    size_t poi_count() const;
    int32_t index_of(NodeType type, int64_t key) const; // -1 when absent

    // "V <t|p><key> <tile|POI>" lines then "E <src> <dst> <type>" lines,
    // in stored (sorted) order, for fixture diffing.
    void dump(std::ostream& out) const;
};

struct QrpBuildOptions {
    bool include_road = true;
    bool include_contain = true;
};

// Undirected leaf-tile adjacency induced by the road network: a pair of
// distinct leaves is linked iff some road segment has one endpoint located
// in each. Pairs are returned as (low id, high id), sorted, deduplicated.
std::vector<std::pair<int64_t, int64_t>> road_edges(const QuadTree& tree,
                                                    std::span<const int64_t> leaf_ids,
                                                    const RoadNetwork& road);

// Empty history yields the designated empty-graph sentinel (zero nodes).
// Repeated visits to one POI yield a single POI node.
QrpGraph build_qrp_graph(std::span<const int64_t> history_poi_ids, const QuadTree& tree,
                         const RoadNetwork& road, const QrpBuildOptions& opts = {});

} // namespace nextpoi
