#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nextpoi/ad.hpp"
#include "nextpoi/quadtree.hpp"

namespace nextpoi {

struct ScoredId {
    int64_t id = 0;
    double score = 0.0;
};

struct LossConfig {
    double scale_s = 64.0;   // logit scale
    double margin_m = 0.5;   // additive angle margin, radians
    double beta = 1.0;       // tile-loss weight in the combined loss

    void validate() const;
};

// Descending cosine similarity between a query vector and table rows, ties
// broken by ascending id. Rows and ids are aligned. Zero-norm rows score
// -1; the count of such rows is reported through `zero_norm_rows` when
// given.
std::vector<ScoredId> rank_by_cosine(const Eigen::RowVectorXd& query, const ad::Mat& rows,
                                     std::span<const int64_t> ids,
                                     size_t* zero_norm_rows = nullptr);

// Tile step: full descending ranking of all leaf candidates.
std::vector<ScoredId> rank_tiles(const Eigen::RowVectorXd& h_out, const ad::Mat& leaf_rows,
                                 std::span<const int64_t> leaf_ids,
                                 size_t* zero_norm_rows = nullptr);

// POI candidates hosted by the first K ranked tiles, ascending ids.
std::vector<int64_t> candidate_pois(std::span<const ScoredId> tile_ranking, int top_k,
                                    const QuadTree& tree);

// POI step: descending ranking over the candidate set. An empty candidate
// set yields an empty ranking (the caller decides the fallback).
std::vector<ScoredId> rank_pois(const Eigen::RowVectorXd& h_out, const ad::Mat& candidate_rows,
                                std::span<const int64_t> candidate_ids,
                                size_t* zero_norm_rows = nullptr);

// Cosine column (n x 1) between a (possibly unnormalized) query row and
// table rows, built on the tape so gradients flow into both sides.
ad::Var cosine_scores(ad::Tape& tape, ad::Var query_row, ad::Var rows);

// Additive angular-margin softmax loss over a candidate table; target is a
// row index into `candidate_rows`.
ad::Var angular_margin_loss(ad::Tape& tape, ad::Var h_out_row, ad::Var candidate_rows, int target,
                            const LossConfig& cfg);

// Plain-number convenience for tests and diagnostics.
double angular_margin_loss_value(const Eigen::RowVectorXd& h_out, const ad::Mat& candidate_rows,
                                 int target, double scale_s, double margin_m);

inline double total_loss(double loss_tile, double loss_poi, double beta) {
    return beta * loss_tile + loss_poi;
}

} // namespace nextpoi
