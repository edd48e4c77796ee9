#include "nextpoi/encoders.hpp"

#include <cmath>

#include "nextpoi/common.hpp"

namespace nextpoi {

Mat spatial_encoding(double x, double y, int embed_dim) {
    const std::pair<double, double> xy[] = {{x, y}};
    return spatial_encoding_rows(xy, embed_dim);
}

Mat spatial_encoding_rows(std::span<const std::pair<double, double>> xy, int embed_dim) {
    if (embed_dim % 4 != 0)
        throw ConfigError("spatial encoding needs embed_dim divisible by 4");
    Mat out(static_cast<Eigen::Index>(xy.size()), embed_dim);
    const int half_pairs = embed_dim / 4; // pairs assigned to x; the rest to y
    for (size_t r = 0; r < xy.size(); ++r) {
        for (int i = 0; i < embed_dim / 2; ++i) {
            const double coord = i < half_pairs ? xy[r].first : xy[r].second;
            const double freq = std::pow(10000.0, 2.0 * double(i) / double(embed_dim));
            const double arg = coord / freq;
            out(static_cast<Eigen::Index>(r), 2 * i) = std::sin(arg);
            out(static_cast<Eigen::Index>(r), 2 * i + 1) = std::cos(arg);
        }
    }
    return out;
}

int temporal_slot(int64_t epoch_seconds) {
    int64_t sec_of_day = epoch_seconds % 86400;
    if (sec_of_day < 0) sec_of_day += 86400;
    return static_cast<int>(sec_of_day / 60 / 30);
}

TemporalEncoder::TemporalEncoder(ad::ParamStore& store, const std::string& name, int embed_dim,
                                 Rng& init) {
    table_ = store.add(name, init_table(kTemporalSlots, embed_dim, init));
}

ad::Var TemporalEncoder::rows(ad::Tape& tape, const ad::ParamStore& store,
                              std::span<const int> slots) const {
    for (int s : slots)
        if (s < 0 || s >= kTemporalSlots) throw LookupError("temporal slot out of range");
    return tape.gather_rows(tape.param(store, table_), {slots.begin(), slots.end()});
}

PoiEmbedder::PoiEmbedder(ad::ParamStore& store, int n_pois, int n_categories, int embed_dim,
                         double alpha, bool use_category, Rng& init)
    : alpha_(alpha), use_category_(use_category), n_pois_(n_pois), n_categories_(n_categories) {
    if (n_pois < 1) throw ConfigError("POI embedder needs at least one POI");
    if (n_categories < 1) throw ConfigError("POI embedder needs at least one category");
    id_table_ = store.add("poi.id_table", init_table(n_pois, embed_dim, init));
    cate_table_ = store.add("poi.category_table", init_table(n_categories, embed_dim, init));
}

ad::Var PoiEmbedder::embed(ad::Tape& tape, const ad::ParamStore& store,
                           std::span<const int> poi_ids, std::span<const int> cate_ids) const {
    if (poi_ids.size() != cate_ids.size()) throw ConfigError("poi/category id length mismatch");
    for (int id : poi_ids)
        if (id < 0 || id >= n_pois_) throw LookupError("POI id out of range: " + std::to_string(id));
    for (int c : cate_ids)
        if (c < 0 || c >= n_categories_)
            throw LookupError("category id out of range: " + std::to_string(c));

    ad::Var ids = tape.gather_rows(tape.param(store, id_table_), {poi_ids.begin(), poi_ids.end()});
    if (!use_category_) return ids;
    ad::Var cates =
        tape.gather_rows(tape.param(store, cate_table_), {cate_ids.begin(), cate_ids.end()});
    return tape.add(tape.scale(ids, alpha_), tape.scale(cates, 1.0 - alpha_));
}

Mat init_table(int rows, int cols, Rng& rng) {
    const double scale = 1.0 / std::sqrt(double(cols));
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-scale, scale);
    return m;
}

Mat init_projection(int rows, int cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / double(rows + cols));
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
    return m;
}

ImageEncoder::ImageEncoder(ad::ParamStore& store, const ImageEncoderConfig& cfg, Rng& init)
    : cfg_(cfg) {
    const auto [c1, c2, c3] = cfg.channels;
    if (c1 < 1 || c2 < 1 || c3 < 1) throw ConfigError("conv channel widths must be positive");
    // Biases carry a small random init so degenerate inputs (an all-zero
    // raster) still produce a nonzero pre-normalization vector.
    auto bias = [&init](int n) {
        Mat b(n, 1);
        for (int i = 0; i < n; ++i) b(i, 0) = init.uniform(-0.05, 0.05);
        return b;
    };
    w1_ = store.add("img.conv1.w", init_projection(c1, 3 * 9, init));
    b1_ = store.add("img.conv1.b", bias(c1));
    w2_ = store.add("img.conv2.w", init_projection(c2, c1 * 9, init));
    b2_ = store.add("img.conv2.b", bias(c2));
    w3_ = store.add("img.conv3.w", init_projection(c3, c2 * 9, init));
    b3_ = store.add("img.conv3.b", bias(c3));
    proj_w_ = store.add("img.proj.w", init_projection(cfg.embed_dim, c3 * 64 * 64, init));
    proj_b_ = store.add("img.proj.b", init_table(1, cfg.embed_dim, init));
}

std::vector<int> ImageEncoder::param_indices() const {
    return {w1_, b1_, w2_, b2_, w3_, b3_, proj_w_, proj_b_};
}

Mat ImageEncoder::image_to_mat(const TileImage& image) {
    if (image.pixels.size() != TileImage::pixel_count())
        throw ConfigError("tile image is not 256x256x3");
    const int n = TileImage::kSize;
    Mat m(3, int64_t(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int c = 0; c < 3; ++c) m(c, int64_t(y) * n + x) = image.at(y, x, c);
    return m;
}

ad::Var ImageEncoder::encode_raw(ad::Tape& tape, const ad::ParamStore& store,
                                 const TileImage& image) const {
    auto check = [&](ad::Var v, int stage) {
        if (!tape.val(v).allFinite())
            throw NumericError("image encoder stage " + std::to_string(stage) +
                               " produced non-finite activations (tile " +
                               std::to_string(image.tile_id) + ")");
        return v;
    };

    ad::Var x = tape.constant(image_to_mat(image));
    ad::Var a1 = check(
        tape.relu(tape.conv2d_3x3(x, tape.param(store, w1_), tape.param(store, b1_), 256, 256, 2)),
        1);
    ad::Var a2 = check(
        tape.relu(tape.conv2d_3x3(a1, tape.param(store, w2_), tape.param(store, b2_), 128, 128, 2)),
        2);
    ad::Var a3 = check(
        tape.relu(tape.conv2d_3x3(a2, tape.param(store, w3_), tape.param(store, b3_), 64, 64, 1)),
        3);
    ad::Var flat = tape.reshape(a3, 1, cfg_.channels[2] * 64 * 64);
    ad::Var proj = tape.add(tape.matmul_nt(flat, tape.param(store, proj_w_)),
                            tape.param(store, proj_b_));
    return check(proj, 4);
}

ad::Var ImageEncoder::encode(ad::Tape& tape, const ad::ParamStore& store,
                             const TileImage& image) const {
    return tape.l2_normalize_rows(encode_raw(tape, store, image));
}

Eigen::RowVectorXd ImageEncoder::encode_value(const ad::ParamStore& store,
                                              const TileImage& image) const {
    ad::Tape tape;
    ad::Var out = encode(tape, store, image);
    return tape.val(out).row(0);
}

} // namespace nextpoi
