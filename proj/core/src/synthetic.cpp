#include <algorithm>
#include <cmath>

#include "nextpoi/common.hpp"
#include "nextpoi/geodata.hpp"
#include "nextpoi/quadtree.hpp"
#include "nextpoi/rng.hpp"

namespace nextpoi {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int64_t kEpoch2015 = 1420070400; // 2015-01-01T00:00:00Z

// Deterministic category palette: evenly spaced hues at full saturation.
void category_color(int cate, int n_categories, float rgb[3]) {
    const double h = 6.0 * double(cate) / double(std::max(1, n_categories));
    const int i = int(h) % 6;
    const double f = h - std::floor(h);
    const double q = 1.0 - f;
    double r = 0, g = 0, b = 0;
    switch (i) {
        case 0: r = 1; g = f; break;
        case 1: r = q; g = 1; break;
        case 2: g = 1; b = f; break;
        case 3: g = q; b = 1; break;
        case 4: r = f; b = 1; break;
        default: r = 1; b = q; break;
    }
    rgb[0] = float(r);
    rgb[1] = float(g);
    rgb[2] = float(b);
}

size_t weighted_pick(Rng& rng, std::span<const double> weights, double total) {
    double r = rng.uniform() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
        r -= weights[i];
        if (r <= 0.0) return i;
    }
    return weights.size() - 1;
}

} // namespace

TileImage render_tile_image(uint64_t seed, int64_t tile_id, const RegionBBox& tile_bbox,
                            std::span<const Poi> pois, int n_categories) {
    TileImage img;
    img.tile_id = tile_id;
    img.pixels.resize(TileImage::pixel_count());
    const int N = TileImage::kSize;

    std::vector<const Poi*> inside;
    for (const Poi& p : pois)
        if (tile_bbox.contains(p.loc)) inside.push_back(&p);

    // Brightness tracks local density; the low-frequency phase pattern is
    // keyed by the tile id so distinct tiles stay distinguishable even at
    // equal density.
    const double density = double(inside.size());
    const float base_g = float(std::clamp(0.10 + 0.085 * std::log2(1.0 + density), 0.0, 0.85));
    const float base_b = float(std::clamp(0.15 + 0.015 * density, 0.0, 0.85));

    Rng trng = Rng::stream(seed, "tile-texture", uint64_t(tile_id));
    const double fx = 1.0 + trng.below(3);
    const double fy = 1.0 + trng.below(3);
    const double px = trng.uniform() * 2.0 * kPi;
    const double py = trng.uniform() * 2.0 * kPi;

    for (int y = 0; y < N; ++y) {
        const double v = double(y) / N;
        for (int x = 0; x < N; ++x) {
            const double u = double(x) / N;
            const float wave =
                float(0.08 * std::sin(2.0 * kPi * fx * u + px) * std::sin(2.0 * kPi * fy * v + py));
            img.at(y, x, 0) = 0.22f + wave;
            img.at(y, x, 1) = base_g + wave;
            img.at(y, x, 2) = base_b - wave;
        }
    }

    // Category splats at POI positions (image row 0 = north edge).
    const int radius = 5;
    for (const Poi* p : inside) {
        const double ux = (p->loc.lon - tile_bbox.min_lon) / tile_bbox.lon_span();
        const double uy = (p->loc.lat - tile_bbox.min_lat) / tile_bbox.lat_span();
        const int cx = std::clamp(int(ux * N), 0, N - 1);
        const int cy = std::clamp(int((1.0 - uy) * N), 0, N - 1);
        float color[3];
        category_color(p->cate, n_categories, color);
        for (int dy = -radius; dy <= radius; ++dy) {
            for (int dx = -radius; dx <= radius; ++dx) {
                const int yy = cy + dy, xx = cx + dx;
                if (yy < 0 || yy >= N || xx < 0 || xx >= N) continue;
                const double d2 = double(dx * dx + dy * dy);
                const float w = float(0.55 * std::exp(-d2 / 8.0));
                for (int c = 0; c < 3; ++c)
                    img.at(yy, xx, c) = std::min(1.0f, img.at(yy, xx, c) + w * color[c]);
            }
        }
    }

    for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

SyntheticWorld generate_synthetic_world(const SynthConfig& cfg) {
    if (cfg.n_pois < 1) throw ConfigError("synthetic world needs at least one POI");
    if (cfg.n_users < 1) throw ConfigError("synthetic world needs at least one user");
    if (cfg.grid_size < 2) throw ConfigError("road grid needs at least 2 nodes per side");
    if (cfg.n_categories < 1 || cfg.n_clusters < 1)
        throw ConfigError("category/cluster counts must be positive");

    SyntheticWorld w;
    w.bbox = RegionBBox{40.0, 41.0, -74.0, -73.0};
    w.n_categories = cfg.n_categories;

    const int n_clusters = std::min(cfg.n_clusters, cfg.n_pois);
    Rng wrng = Rng::stream(cfg.seed, "synthetic-world");

    std::vector<GeoPoint> centers(n_clusters);
    std::vector<double> sigma(n_clusters);
    std::vector<int32_t> dominant(n_clusters);
    std::vector<double> weight(n_clusters);
    double weight_total = 0.0;
    for (int c = 0; c < n_clusters; ++c) {
        centers[c].lat = w.bbox.min_lat + w.bbox.lat_span() * (0.08 + 0.84 * wrng.uniform());
        centers[c].lon = w.bbox.min_lon + w.bbox.lon_span() * (0.08 + 0.84 * wrng.uniform());
        sigma[c] = 0.015 + 0.02 * wrng.uniform();
        dominant[c] = int32_t(c % cfg.n_categories);
        weight[c] = 1.0 / double(1 + c);
        weight_total += weight[c];
    }

    // Clustered POIs with category mix tied to the cluster.
    w.pois.reserve(cfg.n_pois);
    std::vector<int> poi_cluster(cfg.n_pois);
    for (int i = 0; i < cfg.n_pois; ++i) {
        const int c = int(weighted_pick(wrng, weight, weight_total));
        GeoPoint loc;
        loc.lat = std::clamp(centers[c].lat + sigma[c] * wrng.normal(), w.bbox.min_lat, w.bbox.max_lat);
        loc.lon = std::clamp(centers[c].lon + sigma[c] * wrng.normal(), w.bbox.min_lon, w.bbox.max_lon);
        const int32_t cate = wrng.uniform() < 0.75 ? dominant[c]
                                                   : int32_t(wrng.below(uint64_t(cfg.n_categories)));
        w.pois.push_back(Poi{int64_t(i), loc, cate});
        poi_cluster[i] = c;
    }

    // Road lattice spanning the region.
    const int G = cfg.grid_size;
    for (int r = 0; r < G; ++r) {
        for (int c = 0; c < G; ++c) {
            const int64_t id = int64_t(r) * G + c;
            GeoPoint loc;
            loc.lat = w.bbox.min_lat + w.bbox.lat_span() * double(r) / double(G - 1);
            loc.lon = w.bbox.min_lon + w.bbox.lon_span() * double(c) / double(G - 1);
            w.road.nodes[id] = loc;
            if (c + 1 < G) w.road.edges.emplace_back(id, id + 1);
            if (r + 1 < G) w.road.edges.emplace_back(id, id + G);
        }
    }

    // Users: favorite rotation within a home cluster plus occasional
    // exploration. The rotation makes the next visit largely predictable
    // from the current one, and the favorite sets make users predictable
    // from their history.
    w.planted_category.resize(cfg.n_users);
    w.home_cluster.resize(cfg.n_users);
    const int n_fav = 10;
    for (int u = 0; u < cfg.n_users; ++u) {
        Rng urng = Rng::stream(cfg.seed, "synthetic-user", uint64_t(u));
        const int home = u % n_clusters;
        const int32_t pref = dominant[home];
        w.planted_category[u] = pref;
        w.home_cluster[u] = int32_t(home);

        std::vector<int64_t> home_pref_pool, home_pool;
        for (int i = 0; i < cfg.n_pois; ++i) {
            if (poi_cluster[i] != home) continue;
            home_pool.push_back(i);
            if (w.pois[i].cate == pref) home_pref_pool.push_back(i);
        }

        std::vector<int64_t> favorites;
        while (int(favorites.size()) < std::min(n_fav, cfg.n_pois)) {
            int64_t pick;
            const double r = urng.uniform();
            if (r < 0.8 && !home_pref_pool.empty())
                pick = home_pref_pool[urng.below(home_pref_pool.size())];
            else if (r < 0.9 && !home_pool.empty())
                pick = home_pool[urng.below(home_pool.size())];
            else
                pick = int64_t(urng.below(uint64_t(cfg.n_pois)));
            if (std::find(favorites.begin(), favorites.end(), pick) == favorites.end())
                favorites.push_back(pick);
        }

        int64_t t = kEpoch2015 + int64_t(u) * 3600;
        size_t cur = 0;
        for (int v = 0; v < cfg.visits_per_user; ++v) {
            int64_t poi;
            const double r = urng.uniform();
            if (r < 0.70) {
                cur = (cur + 1) % favorites.size();
                poi = favorites[cur];
            } else if (r < 0.88) {
                cur = urng.below(favorites.size());
                poi = favorites[cur];
            } else {
                poi = int64_t(urng.below(uint64_t(cfg.n_pois)));
            }
            w.checkins.push_back(CheckIn{int64_t(u), poi, t});
            const double gap_hours = urng.uniform() < 0.16 ? 80.0 + 64.0 * urng.uniform()
                                                           : 1.0 + 7.0 * urng.uniform();
            t += int64_t(gap_hours * 3600.0);
        }
    }

    // Imagery for every tile of the reference tree over these POIs.
    QuadTree tree = QuadTree::build(w.pois, w.bbox, cfg.max_depth, cfg.leaf_capacity);
    for (int64_t tid : tree.all_tiles())
        w.images[tid] =
            render_tile_image(cfg.seed, tid, tree.node(tid).bbox, w.pois, cfg.n_categories);
    return w;
}

SyntheticWorld generate_synthetic_world(uint64_t seed, int n_pois, int n_users, int grid_size) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.n_pois = n_pois;
    cfg.n_users = n_users;
    cfg.grid_size = grid_size;
    return generate_synthetic_world(cfg);
}

} // namespace nextpoi
