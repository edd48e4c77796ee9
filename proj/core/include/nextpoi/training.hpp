#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nextpoi/evaluation.hpp"
#include "nextpoi/geodata.hpp"
#include "nextpoi/model.hpp"
#include "nextpoi/qrp_graph.hpp"
#include "nextpoi/quadtree.hpp"

namespace nextpoi {

struct TrainConfig {
    int batch_size = 8;
    double learning_rate = 2e-5;
    double lr_decay = 0.95; // per epoch
    double dropout = 0.1;
    int epochs = 40;
    int embed_dim = 512;
    int max_depth = 8;       // quad-tree depth cap
    int leaf_capacity = 100; // quad-tree split threshold
    int top_k = 15;          // tiles kept by the first prediction step
    double alpha = 0.5;      // id/category merge ratio
    double beta = 1.0;       // tile-loss weight
    double loss_scale = 64.0;
    double loss_margin = 0.5;
    int hgat_layers = 2;
    int fusion_blocks = 2;
    uint64_t seed = 0;

    double delta_t_hours = 72.0;
    std::array<int, 3> conv_channels = {8, 16, 4};
    int threads = 2;
    double train_frac = 0.8, valid_frac = 0.1;
    int eval_every = 1;              // validation cadence, epochs
    bool eval_train_split = false;   // also log training-split metrics
    double stop_train_recall5 = -1;  // early stop once reached (< 0: off)

    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;

    void validate() const;
};

enum class Split : uint8_t { Train = 0, Valid = 1, Test = 2 };
const char* to_string(Split s);

// One training/evaluation example: a trajectory position j >= 2 whose
// prefix is everything before it and whose history is the user's strictly
// earlier windows.
struct Sample {
    int32_t traj_index = 0;
    int32_t prefix_len = 0; // j - 1 records

    int64_t target_poi(const std::vector<Trajectory>& trajs) const {
        return trajs[traj_index].records[prefix_len].poi_id;
    }
};

// History graph plus its table-row bindings, shared by every sample of one
// (user, window) pair.
struct GraphBundle {
    QrpGraph graph;
    GraphAttentionPlan plan;
    std::vector<int> tile_rows;
    std::vector<int> poi_ids;
    std::vector<int> poi_cates;

    GraphInput input() const;
};

// Immutable, fully materialized training substrate: windowed trajectories,
// spatial index, per-trajectory history graphs, imagery.
struct Dataset {
    std::vector<Poi> pois;
    int n_categories = 0;
    RegionBBox bbox;
    RoadNetwork road;
    std::vector<Trajectory> trajectories; // sorted by (user, t_begin)
    std::vector<Split> split_of;          // per trajectory
    std::map<int64_t, std::vector<int>> user_trajs; // per user, time order

    std::optional<QuadTree> tree;
    std::vector<int64_t> all_tiles;  // ascending; tile table row order
    std::vector<int64_t> leaf_tiles; // ascending
    std::vector<int> leaf_rows;      // table row per leaf (aligned with leaf_tiles)
    std::map<int64_t, int> tile_row; // tile id -> table row
    std::map<int64_t, int> leaf_pos; // leaf id -> position in leaf_tiles

    std::map<int64_t, TileImage> images; // keyed by tile id
    std::vector<std::unique_ptr<GraphBundle>> history; // per trajectory

    const QuadTree& quadtree() const { return *tree; }
    int n_pois() const { return static_cast<int>(pois.size()); }
    int n_tiles() const { return static_cast<int>(all_tiles.size()); }
    const TileImage& image_of_row(int row) const;
};

// Random split at trajectory granularity.
std::vector<Split> assign_splits(size_t n_trajectories, uint64_t seed, double train_frac,
                                 double valid_frac);

// Builds the substrate from raw world pieces. Ablation flags control the
// index (uniform grid) and graph edges; `no_graph` swaps in the
// empty-history sentinel everywhere. A prebuilt index (from a serialized
// artifact) can be injected instead of rebuilding.
Dataset build_dataset(std::vector<Poi> pois, int n_categories,
                      std::vector<Trajectory> trajectories, RoadNetwork road,
                      std::map<int64_t, TileImage> images, const TrainConfig& cfg,
                      const AblationConfig& ab = {}, const QuadTree* prebuilt_tree = nullptr);

// One sample per (trajectory in split, position j >= 2).
std::vector<Sample> expand_samples(const Dataset& data, std::optional<Split> split = {});

// Table-row view of one sample, ready for Model::forward.
struct SampleBinding {
    SequenceInput seq;
    GraphInput graph;
    int target_leaf_pos = -1;  // position of the target tile in leaf_tiles
    int64_t target_tile = -1;
    int64_t target_poi = -1;
};

SampleBinding bind_sample(const Dataset& data, const Sample& s, int embed_dim,
                          bool with_spatial);

// Training-time POI candidates: POIs of the top-K ranked tiles, with the
// target tile unioned in so the loss denominator always holds the target.
std::vector<int64_t> training_candidates(std::span<const ScoredId> tile_ranking, int top_k,
                                         int64_t target_tile, const QuadTree& tree);

// Adam-driven optimizer over all model parameters.
class Trainer {
public:
    Trainer(Model& model, const Dataset& data, const TrainConfig& cfg,
            const AblationConfig& ab = {});

    // One optimizer step over a batch; returns the mean combined loss.
    double step(std::span<const Sample> batch, int epoch);

    int64_t steps_taken() const { return adam_.step; }
    AdamState& adam() { return adam_; }
    const ad::Mat& tile_table() const { return table_ctx_.table; }
    void refresh_tile_table(); // recompute from current encoder parameters

private:
    void apply_adam(ad::GradBuffer& grads, double lr);

    Model& model_;
    const Dataset& data_;
    TrainConfig cfg_;
    AblationConfig ab_;
    AdamState adam_;
    Model::TileTableContext table_ctx_;
};

struct FitResult {
    std::vector<std::string> log_lines; // config header + per-epoch rows
    int best_epoch = -1;
    double best_valid_mrr = -1.0;
    MetricsReport best_valid;
    int epochs_run = 0;
    double final_train_loss = 0.0;
};

// Full optimization loop: per-epoch shuffled batches, per-epoch decayed
// learning rate, validation cadence, best-validation-MRR snapshot (the
// model is left holding the best parameters).
FitResult fit(Model& model, const Dataset& data, const TrainConfig& cfg,
              const AblationConfig& ab = {});

// Forward-only metrics over a split. Per-sample ranks are appended to
// `ranks_out` when given (one entry per sample, sentinel when missed).
MetricsReport evaluate_model(Model& model, const Dataset& data, Split split,
                             const TrainConfig& cfg, const AblationConfig& ab = {},
                             std::vector<int>* ranks_out = nullptr,
                             std::vector<Sample>* samples_out = nullptr);

} // namespace nextpoi
