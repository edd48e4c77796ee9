#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nextpoi/predictor.hpp"

namespace nextpoi {

struct MetricsReport {
    double recall5 = 0, recall10 = 0, recall20 = 0;
    double ndcg5 = 0, ndcg10 = 0, ndcg20 = 0;
    double mrr = 0;
    size_t n_samples = 0;

    // Enforces range, recall monotonicity in K, and ndcg@k <= recall@k.
    void validate() const;

    // "epoch  split  recall@5 ... mrr  loss" row of the training log.
    std::string log_line(int epoch, const std::string& split, double loss) const;
    // Self-describing key-value block.
    std::string key_value() const;
};

// 1-based position of the target under the deterministic tie-break, or
// |ranking| + 1 when absent.
int rank_of_target(std::span<const ScoredId> ranking, int64_t target);

// recall@k = mean[r <= k]; ndcg@k = mean[r <= k ? 1/log2(r+1) : 0]
// (single-relevant-item reduction); mrr = mean[1/r].
MetricsReport metrics_from_ranks(std::span<const int> ranks);

// Model variants for the ablation experiments. no_graph subsumes the
// individual edge switches.
struct AblationConfig {
    int grid_replace_quadtree = 0; // 0 = off; >0: uniform tree of this depth
    bool no_two_step = false;
    bool no_graph = false;
    bool no_contain_edges = false;
    bool no_road_edges = false;
    bool no_imagery = false;
    bool no_st_encoder = false;
    bool no_poi_category = false;

    bool any() const {
        return grid_replace_quadtree > 0 || no_two_step || no_graph || no_contain_edges ||
               no_road_edges || no_imagery || no_st_encoder || no_poi_category;
    }
};

} // namespace nextpoi
