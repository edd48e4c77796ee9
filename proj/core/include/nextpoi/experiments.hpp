#pragma once

#include <span>
#include <string>
#include <vector>

#include "nextpoi/training.hpp"

namespace nextpoi {

// Dataset straight from a synthetic world (windows the check-in stream,
// builds the index and history graphs).
Dataset dataset_from_world(const SyntheticWorld& world, const TrainConfig& cfg,
                           const AblationConfig& ab = {},
                           const std::vector<Split>* fixed_splits = nullptr);

// Model shaped for a dataset, with the ablation switches applied.
Model make_model(const Dataset& data, const TrainConfig& cfg, const AblationConfig& ab = {});

struct SweepRow {
    int k = 0;
    double tile_recall = 0.0;     // target tile within the top-K tiles
    double poi_recall5 = 0.0;     // POI recall@5 under the K-tile candidate set
    double mean_candidates = 0.0; // mean candidate-set size
};

// Interaction between the two prediction steps: metrics as a function of
// the number of tiles kept by the first step. k_values must be ascending.
std::vector<SweepRow> sweep_top_k(Model& model, const Dataset& data, Split split,
                                  const TrainConfig& cfg, std::span<const int> k_values);

struct AblationOutcome {
    MetricsReport full;
    MetricsReport ablated;
    double delta_recall5 = 0.0; // ablated - full
    double delta_ndcg5 = 0.0;
    double delta_mrr = 0.0;
};

// Trains the full model and one ablated variant under identical budgets,
// seeds, and splits, then compares validation metrics.
AblationOutcome run_ablation(const SyntheticWorld& world, const TrainConfig& cfg,
                             const AblationConfig& ab);

} // namespace nextpoi
