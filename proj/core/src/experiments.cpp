#include "nextpoi/experiments.hpp"

#include <algorithm>
#include <set>

#include "nextpoi/common.hpp"

namespace nextpoi {

Dataset dataset_from_world(const SyntheticWorld& world, const TrainConfig& cfg,
                           const AblationConfig& ab, const std::vector<Split>* fixed_splits) {
    std::vector<Trajectory> trajs = split_trajectories(world.checkins, cfg.delta_t_hours);
    Dataset d = build_dataset(world.pois, world.n_categories, std::move(trajs), world.road,
                              world.images, cfg, ab);
    if (fixed_splits) {
        if (fixed_splits->size() != d.trajectories.size())
            throw ConfigError("fixed split list length mismatch");
        d.split_of = *fixed_splits;
    }
    return d;
}

Model make_model(const Dataset& data, const TrainConfig& cfg, const AblationConfig& ab) {
    ModelConfig mc;
    mc.embed_dim = cfg.embed_dim;
    mc.conv_channels = cfg.conv_channels;
    mc.hgat_layers = cfg.hgat_layers;
    mc.fusion_blocks = cfg.fusion_blocks;
    mc.alpha = cfg.alpha;
    mc.dropout = cfg.dropout;
    mc.use_imagery = !ab.no_imagery;
    mc.use_st_encoder = !ab.no_st_encoder;
    mc.use_poi_category = !ab.no_poi_category;
    mc.n_pois = data.n_pois();
    mc.n_categories = data.n_categories;
    mc.n_tiles = data.n_tiles();
    return Model(mc, cfg.seed);
}

std::vector<SweepRow> sweep_top_k(Model& model, const Dataset& data, Split split,
                                  const TrainConfig& cfg, std::span<const int> k_values) {
    if (k_values.empty()) throw ConfigError("sweep needs at least one K");
    for (size_t i = 1; i < k_values.size(); ++i)
        if (k_values[i] <= k_values[i - 1]) throw ConfigError("sweep K values must ascend");
    const int n_leaves = static_cast<int>(data.leaf_tiles.size());
    for (int k : k_values)
        if (k < 1 || k > n_leaves) throw ConfigError("sweep K out of [1, leaves]");

    const std::vector<Sample> samples = expand_samples(data, split);
    if (samples.empty()) throw ConfigError("sweep split holds no samples");

    ad::Mat table;
    if (model.config().use_imagery) {
        table = model.build_tile_table([&data](int row) -> const TileImage& {
            return data.image_of_row(row);
        }, data.n_tiles(), cfg.threads);
    } else {
        table = model.params().value(model.tile_table_param());
    }
    ad::Mat leaf_mat(data.leaf_rows.size(), cfg.embed_dim);
    for (size_t r = 0; r < data.leaf_rows.size(); ++r)
        leaf_mat.row(Eigen::Index(r)) = table.row(data.leaf_rows[r]);

    // Whole-catalog POI embedding values, shared across samples.
    ad::Mat poi_rows(data.n_pois(), cfg.embed_dim);
    {
        ad::Tape tape;
        std::vector<int> ids(size_t(data.n_pois())), cates(size_t(data.n_pois()));
        for (int p = 0; p < data.n_pois(); ++p) {
            ids[size_t(p)] = p;
            cates[size_t(p)] = data.pois[size_t(p)].cate;
        }
        poi_rows = tape.val(model.poi_embedder().embed(tape, model.params(), ids, cates));
    }

    std::vector<SweepRow> rows(k_values.size());
    for (size_t i = 0; i < k_values.size(); ++i) rows[i].k = k_values[i];

    for (const Sample& s : samples) {
        const SampleBinding b = bind_sample(data, s, cfg.embed_dim, model.config().use_st_encoder);
        ad::Tape tape;
        ad::Var tv = tape.constant(table);
        ForwardResult fwd = model.forward(tape, tv, b.seq, b.graph, false, nullptr);
        const Eigen::RowVectorXd h_tile = tape.val(fwd.h_tile).row(0);
        const Eigen::RowVectorXd h_poi = tape.val(fwd.h_poi).row(0);

        auto tiles = rank_tiles(h_tile, leaf_mat, data.leaf_tiles);
        int target_tile_rank = rank_of_target(tiles, b.target_tile);

        // POI scores against the whole catalog, computed once.
        const double hn = h_poi.norm();
        std::vector<double> score(size_t(data.n_pois()));
        for (int p = 0; p < data.n_pois(); ++p) {
            const double rn = poi_rows.row(p).norm();
            score[size_t(p)] = rn == 0.0 ? -1.0 : poi_rows.row(p).dot(h_poi) / (rn * hn);
        }
        const double target_score = score[size_t(b.target_poi)];

        // Walk the tile ranking once, growing the candidate set.
        size_t vi = 0;
        int ahead = 0; // candidates strictly ranked before the target
        int n_cand = 0;
        bool target_in = false;
        int next_tile = 0;
        for (size_t ki = 0; ki < k_values.size(); ++ki) {
            for (; next_tile < k_values[ki]; ++next_tile) {
                const TileNode& nd = data.quadtree().node(tiles[size_t(next_tile)].id);
                for (int64_t pid : nd.poi_ids) {
                    ++n_cand;
                    if (pid == b.target_poi) {
                        target_in = true;
                        continue;
                    }
                    const double sc = score[size_t(pid)];
                    if (sc > target_score || (sc == target_score && pid < b.target_poi)) ++ahead;
                }
            }
            const int rank = target_in ? ahead + 1 : n_cand + 1;
            rows[ki].tile_recall += target_tile_rank <= k_values[ki] ? 1.0 : 0.0;
            rows[ki].poi_recall5 += rank <= 5 ? 1.0 : 0.0;
            rows[ki].mean_candidates += double(n_cand);
        }
        (void)vi;
    }

    const double n = double(samples.size());
    for (SweepRow& r : rows) {
        r.tile_recall /= n;
        r.poi_recall5 /= n;
        r.mean_candidates /= n;
    }
    return rows;
}

AblationOutcome run_ablation(const SyntheticWorld& world, const TrainConfig& cfg,
                             const AblationConfig& ab) {
    AblationOutcome out;

    Dataset full_data = dataset_from_world(world, cfg, AblationConfig{});
    Model full_model = make_model(full_data, cfg, AblationConfig{});
    fit(full_model, full_data, cfg, AblationConfig{});
    out.full = evaluate_model(full_model, full_data, Split::Valid, cfg, AblationConfig{});

    Dataset ab_data = dataset_from_world(world, cfg, ab, &full_data.split_of);
    Model ab_model = make_model(ab_data, cfg, ab);
    fit(ab_model, ab_data, cfg, ab);
    out.ablated = evaluate_model(ab_model, ab_data, Split::Valid, cfg, ab);

    out.delta_recall5 = out.ablated.recall5 - out.full.recall5;
    out.delta_ndcg5 = out.ablated.ndcg5 - out.full.ndcg5;
    out.delta_mrr = out.ablated.mrr - out.full.mrr;
    return out;
}

} // namespace nextpoi
