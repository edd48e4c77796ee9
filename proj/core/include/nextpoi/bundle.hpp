#pragma once

#include <string>
#include <vector>

#include "nextpoi/training.hpp"

namespace nextpoi {

// Materialized ingest output: POI set, windowed trajectories, splits, road
// network, and provenance meta. Imagery lives beside it in `imagery/`.
struct Bundle {
    std::vector<Poi> pois;
    int n_categories = 0;
    std::vector<std::string> venue_keys;    // dense poi id -> source token
    std::vector<std::string> category_keys; // dense cate id -> source token
    std::vector<std::string> user_keys;     // dense user id -> source token
    std::vector<Trajectory> trajectories;   // sorted by (user, t_begin)
    std::vector<Split> splits;              // per trajectory
    RoadNetwork road;
    std::string meta_json;
};

void write_bundle(const std::string& dir, const Bundle& bundle);
Bundle read_bundle(const std::string& dir);

} // namespace nextpoi
