#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nextpoi/types.hpp"

namespace nextpoi {

// Column layout of a check-in file. Tab-separated columns, one record per
// line: user_id  venue_id  category_id  lat  lon  iso8601_timestamp.
struct CheckinSchema {
    int user_col = 0;
    int venue_col = 1;
    int cate_col = 2;
    int lat_col = 3;
    int lon_col = 4;
    int time_col = 5;
    bool has_header = false;
};

// Ingested check-in stream. Users, venues, and categories are re-indexed
// densely from 0; the original tokens are retained for provenance.
struct CheckinData {
    std::vector<CheckIn> checkins; // sorted by (user, timestamp), stable in file order
    std::vector<Poi> pois;         // indexed by dense poi id
    std::vector<std::string> user_keys;
    std::vector<std::string> venue_keys;
    std::vector<std::string> category_keys;
    std::vector<std::string> warnings; // record-level problems, with line numbers
    size_t skipped_rows = 0;

    size_t n_users() const { return user_keys.size(); }
    size_t n_categories() const { return category_keys.size(); }
};

// Parses "YYYY-MM-DD[T ]HH:MM:SS[.frac][Z|±HH:MM]" to UTC epoch seconds.
int64_t parse_iso8601_utc(const std::string& text, long line = -1);
std::string format_iso8601_utc(int64_t epoch_seconds);

CheckinData load_checkins(const std::string& path, const CheckinSchema& schema = {});

// Cuts each user's time-sorted stream into windows: a new window starts
// whenever the gap to the previous check-in reaches `delta_t_hours`.
// Windows shorter than 2 records are dropped.
std::vector<Trajectory> split_trajectories(std::span<const CheckIn> sorted_checkins,
                                           double delta_t_hours);

struct NormalizedXY {
    double x = 0.0; // longitude mapped to [0, 1]
    double y = 0.0; // latitude mapped to [0, 1]
    bool clamped = false;
};

NormalizedXY normalize_coords(const GeoPoint& loc, const RegionBBox& bbox);

// Tight bbox over a POI set (max edges closed by the quad-tree rule).
RegionBBox compute_bbox(std::span<const Poi> pois);

struct RoadLoadResult {
    RoadNetwork network;
    size_t dropped_edges = 0; // dangling references and self-edges
};

// Two-section text format: "N <node_id> <lat> <lon>" lines, then
// "E <node_id> <node_id>" lines.
RoadLoadResult load_road_network(const std::string& path);
void save_road_network(const std::string& path, const RoadNetwork& net);

struct TileImageLoadResult {
    std::map<int64_t, TileImage> images;
    std::vector<int64_t> placeholder_ids; // tiles that had no file on disk
    size_t resampled = 0;                 // tiles decoded at a non-256 resolution
};

// Loads "<tile_id>.png" per tile. Missing files are replaced by a flagged
// deterministic placeholder so downstream stages never stall on coverage
// gaps.
TileImageLoadResult load_tile_images(const std::string& dir, std::span<const int64_t> tile_ids);

// Content-free stand-in for a missing tile image: hash noise keyed by the
// tile id, no density signal.
TileImage placeholder_tile_image(int64_t tile_id);

// --- synthetic worlds -------------------------------------------------

struct SynthConfig {
    uint64_t seed = 0;
    int n_pois = 500;
    int n_users = 20;
    int grid_size = 5; // road lattice nodes per side
    int n_categories = 10;
    int n_clusters = 8;
    int visits_per_user = 60;
    int max_depth = 8;     // tree config used to emit imagery
    int leaf_capacity = 50;
};

struct SyntheticWorld {
    RegionBBox bbox;
    std::vector<Poi> pois;
    std::vector<CheckIn> checkins; // sorted by (user, timestamp)
    RoadNetwork road;
    std::map<int64_t, TileImage> images;      // one per tile of the emitted tree
    std::vector<int32_t> planted_category;    // per user
    std::vector<int32_t> home_cluster;        // per user
    int n_categories = 0;
};

// Pure function of its config: same config, byte-identical world.
SyntheticWorld generate_synthetic_world(const SynthConfig& cfg);
SyntheticWorld generate_synthetic_world(uint64_t seed, int n_pois, int n_users, int grid_size);

// Procedural texture for a tile: low-frequency pattern keyed by the tile
// id plus per-POI splats, so brightness and structure track local POI
// density and category mix.
TileImage render_tile_image(uint64_t seed, int64_t tile_id, const RegionBBox& tile_bbox,
                            std::span<const Poi> pois, int n_categories);

} // namespace nextpoi
