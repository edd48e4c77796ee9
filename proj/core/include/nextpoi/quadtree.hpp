#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nextpoi/types.hpp"

namespace nextpoi {

// Quadrant order of a node's children. Child k of tile v has the
// deterministic id 4*v + k + 1, so ids are stable across rebuilds and
// identify a cell independently of any particular tree instance.
enum Quadrant : int { kNorthWest = 0, kNorthEast = 1, kSouthWest = 2, kSouthEast = 3 };

struct TileNode {
    int64_t tile_id = 0;
    RegionBBox bbox;
    int depth = 0;
    std::array<int32_t, 4> children{-1, -1, -1, -1}; // arena indices, -1 for leaves
    std::vector<int64_t> poi_ids;                    // leaves only

    bool is_leaf() const { return children[0] < 0; }
};

// Root-to-leaf path union covering a POI set. Tiles and leaves are sorted
// ascending by tile id; the tile set is closed under parent.
struct MinimalSubtree {
    std::vector<int64_t> tiles;
    std::vector<int64_t> leaves;
};

struct QuadTreeStats {
    int64_t internal_nodes = 0;
    int64_t leaf_nodes = 0;
    int64_t overflow_leaves = 0; // depth-capped leaves holding more than the capacity
};

// Region quad-tree over a POI set. Splits any cell holding more than
// `leaf_capacity` POIs until the cap is met or `max_depth` is reached.
// Cell membership is half-open ([min, max) on both axes) with the global
// max edges closed, so every point of the root region belongs to exactly
// one leaf. Immutable after build.
class QuadTree {
public:
    static QuadTree build(std::span<const Poi> pois, const RegionBBox& bbox,
                          int max_depth, int leaf_capacity);

    // Builds the full uniform tree of the given depth (every leaf at
    // `depth`), ignoring capacity. Used by the fixed-granularity grid
    // ablation; tile ids stay compatible with the adaptive tree.
    static QuadTree build_uniform(std::span<const Poi> pois, const RegionBBox& bbox, int depth);

    const RegionBBox& root_bbox() const { return nodes_[0].bbox; }
    int max_depth() const { return max_depth_; }
    int leaf_capacity() const { return leaf_capacity_; }
    const QuadTreeStats& stats() const { return stats_; }

    size_t node_count() const { return nodes_.size(); }
    const TileNode& node_at(size_t arena_index) const { return nodes_[arena_index]; }
    const TileNode& node(int64_t tile_id) const;
    bool has_tile(int64_t tile_id) const { return index_of_.count(tile_id) > 0; }

    // Leaf containing the point. Points outside the root region are
    // clamped onto it first.
    int64_t locate_leaf(const GeoPoint& loc) const;

    // All leaf tile ids, ascending.
    std::vector<int64_t> leaf_tiles() const;
    // Every tile id in the tree (internal and leaf), ascending.
    std::vector<int64_t> all_tiles() const;

    // Union of root-to-leaf paths for the leaves hosting the given POIs.
    MinimalSubtree minimal_subtree(std::span<const int64_t> poi_ids) const;

    // Leaf tile hosting a POI that was part of the build input.
    int64_t leaf_of_poi(int64_t poi_id) const;

    // Pure tile-id arithmetic; no tree instance required.
    static int64_t child_id(int64_t tile_id, int quadrant) { return 4 * tile_id + quadrant + 1; }
    static int64_t parent_id(int64_t tile_id) { return (tile_id - 1) / 4; }
    static int depth_of_id(int64_t tile_id);
    // Cell of an arbitrary tile id relative to a root region.
    static RegionBBox bbox_of_id(const RegionBBox& root, int64_t tile_id);
    static RegionBBox quadrant_bbox(const RegionBBox& b, int quadrant);

    // Flat record format: one line per tile,
    //   <tile_id> <depth> <min_lat> <max_lat> <min_lon> <max_lon> <leaf|internal> [poi_ids...]
    // ordered by tile id.
    void serialize(std::ostream& out) const;
    static QuadTree deserialize(std::istream& in);

private:
    QuadTree() = default;
    int32_t index_of(int64_t tile_id) const;
    void rebuild_index();

    std::vector<TileNode> nodes_; // nodes_[0] is the root
    std::unordered_map<int64_t, int32_t> index_of_;
    std::unordered_map<int64_t, int64_t> poi_leaf_;
    int max_depth_ = 0;
    int leaf_capacity_ = 0;
    QuadTreeStats stats_;
};

} // namespace nextpoi
