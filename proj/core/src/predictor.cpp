#include "nextpoi/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "nextpoi/common.hpp"

namespace nextpoi {

void LossConfig::validate() const {
    if (!(scale_s > 0.0) || !std::isfinite(scale_s))
        throw ConfigError("loss scale must be positive and finite");
    if (margin_m < 0.0 || margin_m >= 1.5707963267948966)
        throw ConfigError("loss margin must be in [0, pi/2)");
    if (beta < 0.0) throw ConfigError("tile loss weight must be >= 0");
}

std::vector<ScoredId> rank_by_cosine(const Eigen::RowVectorXd& query, const ad::Mat& rows,
                                     std::span<const int64_t> ids, size_t* zero_norm_rows) {
    if (rows.rows() != static_cast<Eigen::Index>(ids.size()))
        throw ConfigError("ranking rows/ids length mismatch");
    const double qn = query.norm();
    if (qn == 0.0) throw ConfigError("ranking query vector has zero norm");

    size_t zeros = 0;
    std::vector<ScoredId> out(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        const double rn = rows.row(static_cast<Eigen::Index>(i)).norm();
        double score;
        if (rn == 0.0) {
            score = -1.0;
            ++zeros;
        } else {
            score = rows.row(static_cast<Eigen::Index>(i)).dot(query) / (rn * qn);
        }
        out[i] = ScoredId{ids[i], score};
    }
    if (zero_norm_rows) *zero_norm_rows = zeros;

    std::sort(out.begin(), out.end(), [](const ScoredId& a, const ScoredId& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    return out;
}

std::vector<ScoredId> rank_tiles(const Eigen::RowVectorXd& h_out, const ad::Mat& leaf_rows,
                                 std::span<const int64_t> leaf_ids, size_t* zero_norm_rows) {
    return rank_by_cosine(h_out, leaf_rows, leaf_ids, zero_norm_rows);
}

std::vector<int64_t> candidate_pois(std::span<const ScoredId> tile_ranking, int top_k,
                                    const QuadTree& tree) {
    if (top_k < 1 || top_k > static_cast<int>(tile_ranking.size()))
        throw ConfigError("top-K must be in [1, number of ranked tiles]");
    std::set<int64_t> out;
    for (int i = 0; i < top_k; ++i) {
        const TileNode& nd = tree.node(tile_ranking[i].id);
        out.insert(nd.poi_ids.begin(), nd.poi_ids.end());
    }
    return {out.begin(), out.end()};
}

std::vector<ScoredId> rank_pois(const Eigen::RowVectorXd& h_out, const ad::Mat& candidate_rows,
                                std::span<const int64_t> candidate_ids, size_t* zero_norm_rows) {
    if (candidate_ids.empty()) return {};
    return rank_by_cosine(h_out, candidate_rows, candidate_ids, zero_norm_rows);
}

ad::Var cosine_scores(ad::Tape& tape, ad::Var query_row, ad::Var rows) {
    ad::Var qn = tape.l2_normalize_rows(query_row);
    ad::Var rn = tape.l2_normalize_rows(rows);
    return tape.matmul_nt(rn, qn); // n x 1
}

ad::Var angular_margin_loss(ad::Tape& tape, ad::Var h_out_row, ad::Var candidate_rows, int target,
                            const LossConfig& cfg) {
    cfg.validate();
    if (target < 0 || target >= tape.val(candidate_rows).rows())
        throw ConfigError("loss target must be one of the candidates");
    ad::Var cos = cosine_scores(tape, h_out_row, candidate_rows);
    return tape.margin_cos_loss(cos, target, cfg.scale_s, cfg.margin_m);
}

double angular_margin_loss_value(const Eigen::RowVectorXd& h_out, const ad::Mat& candidate_rows,
                                 int target, double scale_s, double margin_m) {
    ad::Tape tape;
    LossConfig cfg;
    cfg.scale_s = scale_s;
    cfg.margin_m = margin_m;
    ad::Var q = tape.constant(h_out);
    ad::Var rows = tape.constant(candidate_rows);
    ad::Var loss = angular_margin_loss(tape, q, rows, target, cfg);
    return tape.val(loss)(0, 0);
}

} // namespace nextpoi
