#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "nextpoi/common.hpp"

namespace nextpoi {

struct GeoPoint {
    double lat = 0.0;
    double lon = 0.0;
};

// A venue users check into: dense integer id, coordinates, dense category id.
struct Poi {
    int64_t id = 0;
    GeoPoint loc;
    int32_t cate = 0;
};

struct CheckIn {
    int64_t user = 0;
    int64_t poi_id = 0;
    int64_t timestamp = 0; // seconds since epoch, UTC
};

// Axis-aligned region. Membership is half-open on both axes: [min, max),
// except that the global max edges of a root region are treated as closed
// by the quad-tree (see quadtree.hpp).
struct RegionBBox {
    double min_lat = 0.0, max_lat = 0.0;
    double min_lon = 0.0, max_lon = 0.0;

    bool valid() const { return min_lat < max_lat && min_lon < max_lon; }
    bool contains(const GeoPoint& p) const {
        return p.lat >= min_lat && p.lat <= max_lat && p.lon >= min_lon && p.lon <= max_lon;
    }
    double lat_span() const { return max_lat - min_lat; }
    double lon_span() const { return max_lon - min_lon; }
    GeoPoint center() const { return {0.5 * (min_lat + max_lat), 0.5 * (min_lon + max_lon)}; }
};

struct VisitRecord {
    int64_t poi_id = 0;
    int64_t timestamp = 0;
};

// One time window of a user's visits: gaps between consecutive records are
// all below the windowing threshold, length >= 2.
struct Trajectory {
    int64_t user = 0;
    std::vector<VisitRecord> records;
    int64_t t_begin = 0; // inclusive
    int64_t t_end = 0;   // exclusive

    size_t size() const { return records.size(); }
};

struct RoadNetwork {
    std::map<int64_t, GeoPoint> nodes;
    std::vector<std::pair<int64_t, int64_t>> edges; // undirected, endpoints exist, no self-edges
};

// 256x256 RGB raster with channel values in [0, 1], row-major HWC layout.
struct TileImage {
    static constexpr int kSize = 256;
    static constexpr int kChannels = 3;

    int64_t tile_id = 0;
    std::vector<float> pixels; // kSize * kSize * kChannels

    static size_t pixel_count() { return size_t(kSize) * kSize * kChannels; }

    float at(int y, int x, int c) const {
        return pixels[(size_t(y) * kSize + x) * kChannels + c];
    }
    float& at(int y, int x, int c) {
        return pixels[(size_t(y) * kSize + x) * kChannels + c];
    }
};

} // namespace nextpoi
