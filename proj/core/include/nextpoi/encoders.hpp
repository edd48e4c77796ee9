#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "nextpoi/ad.hpp"
#include "nextpoi/types.hpp"

namespace nextpoi {

using ad::Mat;

// --- spatial encoder ---------------------------------------------------
//
// Parameter-free sinusoid encoding of a unit-square position. For
// i < d/4 dimensions (2i, 2i+1) hold (sin, cos)(x / 10000^(2i/d)); the
// remaining i >= d/4 pairs hold the same expression over y, keeping the
// printed exponent 2i/d (the y frequencies continue where x left off).
Mat spatial_encoding(double x, double y, int embed_dim);
Mat spatial_encoding_rows(std::span<const std::pair<double, double>> xy, int embed_dim);

// --- temporal slots -----------------------------------------------------

constexpr int kTemporalSlots = 48; // half-hour slots per day

// floor(minute-of-day / 30) in UTC; negative epochs floor-wrap correctly.
int temporal_slot(int64_t epoch_seconds);

// Learnable half-hour slot table.
class TemporalEncoder {
public:
    TemporalEncoder(ad::ParamStore& store, const std::string& name, int embed_dim, Rng& init);
    ad::Var rows(ad::Tape& tape, const ad::ParamStore& store,
                 std::span<const int> slots) const;
    int table_index() const { return table_; }

private:
    int table_ = -1;
};

// --- POI embedder --------------------------------------------------------

// id/category tables merged by ratio alpha:
//   E_P(p) = alpha * id_row + (1 - alpha) * category_row.
// With use_category off, the id row is used alone.
class PoiEmbedder {
public:
    PoiEmbedder(ad::ParamStore& store, int n_pois, int n_categories, int embed_dim,
                double alpha, bool use_category, Rng& init);

    ad::Var embed(ad::Tape& tape, const ad::ParamStore& store, std::span<const int> poi_ids,
                  std::span<const int> cate_ids) const;

    int id_table_index() const { return id_table_; }
    int category_table_index() const { return cate_table_; }
    double alpha() const { return alpha_; }
    int n_pois() const { return n_pois_; }

private:
    int id_table_ = -1;
    int cate_table_ = -1;
    double alpha_ = 0.5;
    bool use_category_ = true;
    int n_pois_ = 0;
    int n_categories_ = 0;
};

// --- image encoder ----------------------------------------------------------

struct ImageEncoderConfig {
    int embed_dim = 512;
    std::array<int, 3> channels = {8, 16, 4}; // strides are fixed at (2, 2, 1)
};

// Three strided 3x3 conv stages (256 -> 128 -> 64 -> 64 spatial), flatten,
// one affine projection to embed_dim, L2 normalization.
class ImageEncoder {
public:
    ImageEncoder(ad::ParamStore& store, const ImageEncoderConfig& cfg, Rng& init);

    // 1 x embed_dim unit-norm row. Throws NumericError naming the stage if
    // activations go non-finite.
    ad::Var encode(ad::Tape& tape, const ad::ParamStore& store, const TileImage& image) const;
    Eigen::RowVectorXd encode_value(const ad::ParamStore& store, const TileImage& image) const;

    // Pre-normalization projection (the table pipeline normalizes across
    // the whole tile set instead of per image).
    ad::Var encode_raw(ad::Tape& tape, const ad::ParamStore& store, const TileImage& image) const;

    static Mat image_to_mat(const TileImage& image); // 3 x 65536

    const ImageEncoderConfig& config() const { return cfg_; }
    std::vector<int> param_indices() const;

private:
    ImageEncoderConfig cfg_;
    int w1_ = -1, b1_ = -1, w2_ = -1, b2_ = -1, w3_ = -1, b3_ = -1;
    int proj_w_ = -1, proj_b_ = -1;
};

// --- parameter initializers ----------------------------------------------------

// Zero-mean uniform at scale 1/sqrt(dim) for embedding tables.
Mat init_table(int rows, int cols, Rng& rng);
// Fan-based uniform (Glorot) for projections and conv kernels.
Mat init_projection(int rows, int cols, Rng& rng);

} // namespace nextpoi
