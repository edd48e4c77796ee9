#include "nextpoi/quadtree.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace nextpoi {

namespace {

int quadrant_of(const RegionBBox& b, const GeoPoint& p) {
    const double mid_lat = 0.5 * (b.min_lat + b.max_lat);
    const double mid_lon = 0.5 * (b.min_lon + b.max_lon);
    const bool north = p.lat >= mid_lat;
    const bool east = p.lon >= mid_lon;
    if (north) return east ? kNorthEast : kNorthWest;
    return east ? kSouthEast : kSouthWest;
}

} // namespace

RegionBBox QuadTree::quadrant_bbox(const RegionBBox& b, int quadrant) {
    const double mid_lat = 0.5 * (b.min_lat + b.max_lat);
    const double mid_lon = 0.5 * (b.min_lon + b.max_lon);
    switch (quadrant) {
        case kNorthWest: return {mid_lat, b.max_lat, b.min_lon, mid_lon};
        case kNorthEast: return {mid_lat, b.max_lat, mid_lon, b.max_lon};
        case kSouthWest: return {b.min_lat, mid_lat, b.min_lon, mid_lon};
        default:         return {b.min_lat, mid_lat, mid_lon, b.max_lon};
    }
}

int QuadTree::depth_of_id(int64_t tile_id) {
    int d = 0;
    while (tile_id > 0) {
        tile_id = parent_id(tile_id);
        ++d;
    }
    return d;
}

RegionBBox QuadTree::bbox_of_id(const RegionBBox& root, int64_t tile_id) {
    // Recover the root-to-tile quadrant path, then descend.
    std::vector<int> path;
    while (tile_id > 0) {
        path.push_back(static_cast<int>((tile_id - 1) % 4));
        tile_id = parent_id(tile_id);
    }
    RegionBBox b = root;
    for (auto it = path.rbegin(); it != path.rend(); ++it) b = quadrant_bbox(b, *it);
    return b;
}

QuadTree QuadTree::build(std::span<const Poi> pois, const RegionBBox& bbox,
                         int max_depth, int leaf_capacity) {
    if (max_depth < 1) throw ConfigError("quad-tree max depth must be >= 1");
    if (leaf_capacity < 1) throw ConfigError("quad-tree leaf capacity must be >= 1");
    if (!bbox.valid()) throw ConfigError("quad-tree bbox is degenerate");
    for (const Poi& p : pois) {
        if (!bbox.contains(p.loc))
            throw ConfigError("POI " + std::to_string(p.id) + " lies outside the region bbox");
    }

    QuadTree t;
    t.max_depth_ = max_depth;
    t.leaf_capacity_ = leaf_capacity;

    TileNode root;
    root.tile_id = 0;
    root.bbox = bbox;
    root.depth = 0;
    root.poi_ids.reserve(pois.size());
    for (const Poi& p : pois) root.poi_ids.push_back(p.id);
    t.nodes_.push_back(std::move(root));

    std::unordered_map<int64_t, GeoPoint> loc_of;
    loc_of.reserve(pois.size());
    for (const Poi& p : pois) loc_of[p.id] = p.loc;

    // Iterative split; arena order is deterministic (FIFO by creation).
    std::vector<size_t> pending{0};
    while (!pending.empty()) {
        const size_t idx = pending.back();
        pending.pop_back();
        TileNode& nd = t.nodes_[idx];
        if (static_cast<int64_t>(nd.poi_ids.size()) <= leaf_capacity) continue;
        if (nd.depth >= max_depth) {
            ++t.stats_.overflow_leaves;
            continue;
        }

        std::array<std::vector<int64_t>, 4> buckets;
        for (int64_t pid : nd.poi_ids)
            buckets[quadrant_of(nd.bbox, loc_of.at(pid))].push_back(pid);
        nd.poi_ids.clear();
        nd.poi_ids.shrink_to_fit();

        for (int k = 0; k < 4; ++k) {
            TileNode child;
            child.tile_id = child_id(t.nodes_[idx].tile_id, k);
            child.bbox = quadrant_bbox(t.nodes_[idx].bbox, k);
            child.depth = t.nodes_[idx].depth + 1;
            child.poi_ids = std::move(buckets[k]);
            t.nodes_[idx].children[k] = static_cast<int32_t>(t.nodes_.size());
            t.nodes_.push_back(std::move(child));
            pending.push_back(t.nodes_.size() - 1);
        }
    }

    t.rebuild_index();
    return t;
}

QuadTree QuadTree::build_uniform(std::span<const Poi> pois, const RegionBBox& bbox, int depth) {
    if (depth < 0) throw ConfigError("uniform grid depth must be >= 0");
    if (!bbox.valid()) throw ConfigError("grid bbox is degenerate");
    for (const Poi& p : pois) {
        if (!bbox.contains(p.loc))
            throw ConfigError("POI " + std::to_string(p.id) + " lies outside the region bbox");
    }

    QuadTree t;
    t.max_depth_ = depth;
    t.leaf_capacity_ = 0;

    TileNode root;
    root.tile_id = 0;
    root.bbox = bbox;
    root.depth = 0;
    t.nodes_.push_back(root);

    std::vector<size_t> pending{0};
    while (!pending.empty()) {
        const size_t idx = pending.back();
        pending.pop_back();
        if (t.nodes_[idx].depth >= depth) continue;
        for (int k = 0; k < 4; ++k) {
            TileNode child;
            child.tile_id = child_id(t.nodes_[idx].tile_id, k);
            child.bbox = quadrant_bbox(t.nodes_[idx].bbox, k);
            child.depth = t.nodes_[idx].depth + 1;
            t.nodes_[idx].children[k] = static_cast<int32_t>(t.nodes_.size());
            t.nodes_.push_back(std::move(child));
            pending.push_back(t.nodes_.size() - 1);
        }
    }
    t.rebuild_index();

    // Distribute POIs onto leaves via the same membership rule as build().
    for (const Poi& p : pois) {
        const int64_t leaf = t.locate_leaf(p.loc);
        t.nodes_[t.index_of(leaf)].poi_ids.push_back(p.id);
        t.poi_leaf_[p.id] = leaf;
    }
    for (const TileNode& nd : t.nodes_) {
        if (!nd.is_leaf()) continue;
        ++t.stats_.leaf_nodes;
    }
    t.stats_.internal_nodes = static_cast<int64_t>(t.nodes_.size()) - t.stats_.leaf_nodes;
    return t;
}

void QuadTree::rebuild_index() {
    index_of_.clear();
    index_of_.reserve(nodes_.size());
    poi_leaf_.clear();
    stats_.internal_nodes = 0;
    stats_.leaf_nodes = 0;
    for (size_t i = 0; i < nodes_.size(); ++i) {
        index_of_[nodes_[i].tile_id] = static_cast<int32_t>(i);
        if (nodes_[i].is_leaf()) {
            ++stats_.leaf_nodes;
            for (int64_t pid : nodes_[i].poi_ids) poi_leaf_[pid] = nodes_[i].tile_id;
        } else {
            ++stats_.internal_nodes;
        }
    }
}

int32_t QuadTree::index_of(int64_t tile_id) const {
    auto it = index_of_.find(tile_id);
    if (it == index_of_.end())
        throw LookupError("unknown tile id " + std::to_string(tile_id));
    return it->second;
}

const TileNode& QuadTree::node(int64_t tile_id) const { return nodes_[index_of(tile_id)]; }

int64_t QuadTree::locate_leaf(const GeoPoint& loc) const {
    const RegionBBox& rb = nodes_[0].bbox;
    GeoPoint p = loc;
    p.lat = std::clamp(p.lat, rb.min_lat, rb.max_lat);
    p.lon = std::clamp(p.lon, rb.min_lon, rb.max_lon);

    const TileNode* nd = &nodes_[0];
    while (!nd->is_leaf()) nd = &nodes_[nd->children[quadrant_of(nd->bbox, p)]];
    return nd->tile_id;
}

std::vector<int64_t> QuadTree::leaf_tiles() const {
    std::vector<int64_t> out;
    out.reserve(stats_.leaf_nodes);
    for (const TileNode& nd : nodes_)
        if (nd.is_leaf()) out.push_back(nd.tile_id);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int64_t> QuadTree::all_tiles() const {
    std::vector<int64_t> out;
    out.reserve(nodes_.size());
    for (const TileNode& nd : nodes_) out.push_back(nd.tile_id);
    std::sort(out.begin(), out.end());
    return out;
}

int64_t QuadTree::leaf_of_poi(int64_t poi_id) const {
    auto it = poi_leaf_.find(poi_id);
    if (it == poi_leaf_.end())
        throw LookupError("POI " + std::to_string(poi_id) + " was not part of the tree build");
    return it->second;
}

MinimalSubtree QuadTree::minimal_subtree(std::span<const int64_t> poi_ids) const {
    if (poi_ids.empty())
        throw ConfigError("minimal subtree of an empty POI set is undefined");

    std::set<int64_t> leaves;
    for (int64_t pid : poi_ids) leaves.insert(leaf_of_poi(pid));

    std::set<int64_t> tiles;
    for (int64_t leaf : leaves) {
        int64_t cur = leaf;
        while (true) {
            if (!tiles.insert(cur).second) break; // ancestors already present
            if (cur == 0) break;
            cur = parent_id(cur);
        }
    }

    MinimalSubtree out;
    out.tiles.assign(tiles.begin(), tiles.end());
    out.leaves.assign(leaves.begin(), leaves.end());
    return out;
}

void QuadTree::serialize(std::ostream& out) const {
    std::vector<int64_t> order = all_tiles();
    out.precision(17);
    for (int64_t tid : order) {
        const TileNode& nd = node(tid);
        out << nd.tile_id << ' ' << nd.depth << ' ' << nd.bbox.min_lat << ' ' << nd.bbox.max_lat
            << ' ' << nd.bbox.min_lon << ' ' << nd.bbox.max_lon << ' '
            << (nd.is_leaf() ? "leaf" : "internal");
        if (nd.is_leaf()) {
            std::vector<int64_t> pids = nd.poi_ids;
            std::sort(pids.begin(), pids.end());
            for (int64_t pid : pids) out << ' ' << pid;
        }
        out << '\n';
    }
}

QuadTree QuadTree::deserialize(std::istream& in) {
    struct Rec {
        int64_t tile_id;
        int depth;
        RegionBBox bbox;
        bool leaf;
        std::vector<int64_t> pois;
    };
    std::vector<Rec> recs;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Rec r;
        std::string kind;
        if (!(ls >> r.tile_id >> r.depth >> r.bbox.min_lat >> r.bbox.max_lat >> r.bbox.min_lon >>
              r.bbox.max_lon >> kind))
            throw ParseError("malformed quad-tree record", lineno);
        if (kind != "leaf" && kind != "internal")
            throw ParseError("unknown tile kind '" + kind + "'", lineno);
        r.leaf = (kind == "leaf");
        int64_t pid;
        while (ls >> pid) r.pois.push_back(pid);
        recs.push_back(std::move(r));
    }
    if (recs.empty()) throw ParseError("empty quad-tree file");

    QuadTree t;
    int max_depth = 0;
    std::unordered_map<int64_t, size_t> rec_of;
    for (size_t i = 0; i < recs.size(); ++i) {
        rec_of[recs[i].tile_id] = i;
        max_depth = std::max(max_depth, recs[i].depth);
    }
    if (!rec_of.count(0)) throw ParseError("quad-tree file has no root tile");
    t.max_depth_ = max_depth;

    // Rebuild the arena in breadth-first order from the root.
    std::vector<int64_t> frontier{0};
    while (!frontier.empty()) {
        std::vector<int64_t> next;
        for (int64_t tid : frontier) {
            const Rec& r = recs[rec_of.at(tid)];
            TileNode nd;
            nd.tile_id = r.tile_id;
            nd.bbox = r.bbox;
            nd.depth = r.depth;
            nd.poi_ids = r.pois;
            t.nodes_.push_back(std::move(nd));
            if (!r.leaf)
                for (int k = 0; k < 4; ++k) next.push_back(child_id(tid, k));
        }
        frontier = std::move(next);
    }
    for (TileNode& nd : t.nodes_) {
        const Rec& r = recs[rec_of.at(nd.tile_id)];
        if (!r.leaf) {
            for (int k = 0; k < 4; ++k) {
                const int64_t cid = child_id(nd.tile_id, k);
                auto it = rec_of.find(cid);
                if (it == rec_of.end())
                    throw ParseError("internal tile " + std::to_string(nd.tile_id) +
                                     " is missing child " + std::to_string(cid));
            }
        }
    }
    // Children arena indices.
    std::unordered_map<int64_t, int32_t> pos;
    for (size_t i = 0; i < t.nodes_.size(); ++i) pos[t.nodes_[i].tile_id] = static_cast<int32_t>(i);
    for (TileNode& nd : t.nodes_) {
        const Rec& r = recs[rec_of.at(nd.tile_id)];
        if (!r.leaf)
            for (int k = 0; k < 4; ++k) nd.children[k] = pos.at(child_id(nd.tile_id, k));
    }
    t.rebuild_index();
    return t;
}

} // namespace nextpoi
