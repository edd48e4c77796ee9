#include "nextpoi/model.hpp"

#include <atomic>
#include <cstring>
#include <fstream>
#include <thread>

#include "nextpoi/common.hpp"

namespace nextpoi {

namespace {
// Fixed chunk count for imagery passes: keeps results independent of the
// worker count while bounding live activation memory.
constexpr int kImageChunks = 8;
} // namespace

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.embed_dim % 4 != 0) throw ConfigError("embed_dim must be divisible by 4");
    if (cfg.n_pois < 1 || cfg.n_categories < 1 || cfg.n_tiles < 1)
        throw ConfigError("model needs positive POI/category/tile counts");

    Rng init = Rng::stream(seed, "model-init");
    if (cfg.use_imagery) {
        ImageEncoderConfig ic;
        ic.embed_dim = cfg.embed_dim;
        ic.channels = cfg.conv_channels;
        image_encoder_.emplace(params_, ic, init);
    } else {
        tile_table_param_ = params_.add("tile.free_table",
                                        init_table(cfg.n_tiles, cfg.embed_dim, init));
    }
    poi_.emplace(params_, cfg.n_pois, cfg.n_categories, cfg.embed_dim, cfg.alpha,
                 cfg.use_poi_category, init);
    if (cfg.use_st_encoder) {
        temporal_tile_.emplace(params_, "tile.temporal_slots", cfg.embed_dim, init);
        temporal_poi_.emplace(params_, "poi.temporal_slots", cfg.embed_dim, init);
    }
    HgatConfig hc;
    hc.embed_dim = cfg.embed_dim;
    hc.layers = cfg.hgat_layers;
    hgat_.emplace(params_, hc, init);

    FusionConfig fc;
    fc.embed_dim = cfg.embed_dim;
    fc.blocks = cfg.fusion_blocks;
    fc.dropout = cfg.dropout;
    fuse_tile_.emplace(params_, "fuse_tile", fc, init);
    fuse_poi_.emplace(params_, "fuse_poi", fc, init);
}

size_t Model::parameter_bytes() const {
    size_t total = 0;
    for (size_t i = 0; i < params_.size(); ++i)
        total += sizeof(double) * size_t(params_.value(int(i)).size());
    return total;
}

namespace {
constexpr double kStandardizeEps = 1e-8;
} // namespace

Model::TileTableContext Model::build_tile_table_ctx(const ImageProvider& images, int n_rows,
                                                    int n_threads) const {
    if (!cfg_.use_imagery) throw ConfigError("tile table build requires the image encoder");
    ad::Mat raw(n_rows, cfg_.embed_dim);

    const int chunk = (n_rows + kImageChunks - 1) / kImageChunks;
    std::atomic<int> next{0};
    auto worker = [&]() {
        while (true) {
            const int c = next.fetch_add(1);
            if (c >= kImageChunks) break;
            const int begin = c * chunk;
            const int end = std::min(n_rows, begin + chunk);
            for (int r = begin; r < end; ++r) {
                ad::Tape tape;
                ad::Var out = image_encoder_->encode_raw(tape, params_, images(r));
                raw.row(r) = tape.val(out).row(0);
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    // Standardize each feature across the tile set, then bring every row
    // back to unit norm. The standardization keeps tiles separated even
    // when the raw projections share a dominant common component.
    TileTableContext ctx;
    ctx.inv_sigma.resize(cfg_.embed_dim);
    ctx.z.resize(n_rows, cfg_.embed_dim);
    if (n_rows == 1) {
        ctx.inv_sigma.setOnes();
        ctx.z = raw;
    } else {
        for (int f = 0; f < cfg_.embed_dim; ++f) {
            const double mean = raw.col(f).mean();
            const double var = (raw.col(f).array() - mean).square().mean();
            ctx.inv_sigma(f) = 1.0 / std::sqrt(var + kStandardizeEps);
            ctx.z.col(f) = (raw.col(f).array() - mean) * ctx.inv_sigma(f);
        }
    }
    ctx.row_inv_norm.resize(n_rows);
    ctx.table.resize(n_rows, cfg_.embed_dim);
    for (int r = 0; r < n_rows; ++r) {
        ctx.row_inv_norm(r) = 1.0 / std::sqrt(ctx.z.row(r).squaredNorm() + 1e-12);
        ctx.table.row(r) = ctx.z.row(r) * ctx.row_inv_norm(r);
    }
    return ctx;
}

ad::Mat Model::build_tile_table(const ImageProvider& images, int n_rows, int n_threads) const {
    return build_tile_table_ctx(images, n_rows, n_threads).table;
}

void Model::backprop_tile_table(const ImageProvider& images, const TileTableContext& ctx,
                                const ad::Mat& dtable, ad::GradBuffer& grads,
                                int n_threads) const {
    if (!cfg_.use_imagery) throw ConfigError("tile table backprop requires the image encoder");
    const int n_rows = static_cast<int>(dtable.rows());

    // Row L2 normalization backward: dz_i = (dT_i - (dT_i . t_i) t_i) / |z_i|.
    ad::Mat dz(n_rows, cfg_.embed_dim);
    for (int r = 0; r < n_rows; ++r) {
        const double dot = dtable.row(r).dot(ctx.table.row(r));
        dz.row(r) = (dtable.row(r) - dot * ctx.table.row(r)) * ctx.row_inv_norm(r);
    }

    // Feature standardization backward (per column):
    // draw = inv_sigma * (dz - mean(dz) - z * mean(dz .* z)).
    ad::Mat draw(n_rows, cfg_.embed_dim);
    if (n_rows == 1) {
        draw = dz;
    } else {
        for (int f = 0; f < cfg_.embed_dim; ++f) {
            const double mean_dz = dz.col(f).mean();
            const double mean_dz_z = dz.col(f).dot(ctx.z.col(f)) / double(n_rows);
            draw.col(f) = ctx.inv_sigma(f) *
                          (dz.col(f).array() - mean_dz - ctx.z.col(f).array() * mean_dz_z);
        }
    }

    const int chunk = (n_rows + kImageChunks - 1) / kImageChunks;
    std::vector<ad::GradBuffer> partial(kImageChunks, ad::GradBuffer(params_.size()));
    std::atomic<int> next{0};
    auto worker = [&]() {
        while (true) {
            const int c = next.fetch_add(1);
            if (c >= kImageChunks) break;
            const int begin = c * chunk;
            const int end = std::min(n_rows, begin + chunk);
            for (int r = begin; r < end; ++r) {
                if (draw.row(r).isZero(0.0)) continue;
                ad::Tape tape;
                ad::Var out = image_encoder_->encode_raw(tape, params_, images(r));
                // Seed the raw-row gradient and pull it through the encoder.
                ad::Var dotted = tape.matmul_nt(out, tape.constant(ad::Mat(draw.row(r))));
                tape.backward(dotted);
                tape.add_param_grads_to(partial[c]);
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    for (int c = 0; c < kImageChunks; ++c) grads.add_scaled(partial[c], 1.0);
}

ad::Var Model::bind_tile_table(ad::Tape& tape, const ad::Mat& table) const {
    if (cfg_.use_imagery) return tape.input(table);
    return tape.param(params_, tile_table_param_);
}

ForwardResult Model::forward(ad::Tape& tape, ad::Var tile_table, const SequenceInput& seq,
                             const GraphInput& graph, bool training, Rng* dropout_rng) const {
    const size_t L = seq.length();
    if (L < 1) throw ConfigError("forward needs a non-empty prefix");
    if (seq.poi_ids.size() != L || seq.slots.size() != L || seq.poi_cates.size() != L)
        throw ConfigError("sequence input lengths disagree");

    // Tile sequence: table rows, enhanced with location and time signals.
    ad::Var tiles = tape.gather_rows(tile_table, seq.tile_rows);
    if (cfg_.use_st_encoder) {
        if (seq.hloc.rows() != static_cast<Eigen::Index>(L) || seq.hloc.cols() != cfg_.embed_dim)
            throw ConfigError("spatial encoding shape mismatch");
        tiles = tape.add(tiles, tape.constant(seq.hloc));
        tiles = tape.add(tiles, temporal_tile_->rows(tape, params_, seq.slots));
    }

    // POI sequence: id/category mix plus the time signal (no spatial term).
    ad::Var pois = poi_->embed(tape, params_, seq.poi_ids, seq.poi_cates);
    if (cfg_.use_st_encoder) pois = tape.add(pois, temporal_poi_->rows(tape, params_, seq.slots));

    // Historical knowledge from the QR-P graph.
    HistoricalKnowledge knowledge;
    if (!graph.empty()) {
        ad::Var init;
        ad::Var tile_init = tape.gather_rows(tile_table, graph.tile_rows);
        if (!graph.poi_ids.empty()) {
            ad::Var poi_init = poi_->embed(tape, params_, graph.poi_ids, graph.poi_cates);
            init = tape.concat_rows(tile_init, poi_init);
        } else {
            init = tile_init;
        }
        knowledge = encode_history(tape, params_, *hgat_, *graph.graph, *graph.plan, init);
    }

    ForwardResult out;
    out.h_tile = fuse_tile_->fuse(tape, params_, tiles, knowledge.tiles, training, dropout_rng);
    out.h_poi = fuse_poi_->fuse(tape, params_, pois, knowledge.pois, training, dropout_rng);
    return out;
}

// --- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'N', 'P', 'O', 'I', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("truncated checkpoint file");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint64_t>(out, s.size());
    out.write(s.data(), std::streamsize(s.size()));
}

std::string read_string(std::istream& in) {
    const uint64_t n = read_pod<uint64_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), std::streamsize(n));
    if (!in) throw ParseError("truncated checkpoint string");
    return s;
}

void write_mat(std::ostream& out, const ad::Mat& m) {
    write_pod<uint64_t>(out, uint64_t(m.rows()));
    write_pod<uint64_t>(out, uint64_t(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              std::streamsize(sizeof(double) * size_t(m.size())));
}

ad::Mat read_mat(std::istream& in) {
    const auto rows = static_cast<Eigen::Index>(read_pod<uint64_t>(in));
    const auto cols = static_cast<Eigen::Index>(read_pod<uint64_t>(in));
    ad::Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            std::streamsize(sizeof(double) * size_t(m.size())));
    if (!in) throw ParseError("truncated checkpoint tensor");
    return m;
}

} // namespace

void save_checkpoint(const std::string& path, const ad::ParamStore& params,
                     const std::string& meta_json, const AdamState* adam) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<uint32_t>(out, kVersion);
    write_string(out, meta_json);
    write_pod<uint32_t>(out, uint32_t(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        write_string(out, params.name(int(i)));
        write_mat(out, params.value(int(i)));
    }
    write_pod<uint8_t>(out, adam ? 1 : 0);
    if (adam) {
        write_pod<int64_t>(out, adam->step);
        for (size_t i = 0; i < params.size(); ++i) {
            write_mat(out, adam->m[i]);
            write_mat(out, adam->v[i]);
        }
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ParseError("not a checkpoint file: " + path);
    const uint32_t version = read_pod<uint32_t>(in);
    if (version != kVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));

    LoadedCheckpoint ckpt;
    ckpt.meta_json = read_string(in);
    const uint32_t n = read_pod<uint32_t>(in);
    ckpt.tensors.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = read_string(in);
        ckpt.tensors.emplace_back(std::move(name), read_mat(in));
    }
    if (read_pod<uint8_t>(in)) {
        AdamState adam;
        adam.step = read_pod<int64_t>(in);
        adam.m.reserve(n);
        adam.v.reserve(n);
        for (uint32_t i = 0; i < n; ++i) {
            adam.m.push_back(read_mat(in));
            adam.v.push_back(read_mat(in));
        }
        ckpt.adam = std::move(adam);
    }
    return ckpt;
}

void apply_checkpoint(ad::ParamStore& params, const LoadedCheckpoint& ckpt) {
    if (ckpt.tensors.size() != params.size())
        throw ConfigError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model has " + std::to_string(params.size()));
    for (const auto& [name, mat] : ckpt.tensors) {
        const int idx = params.require(name);
        ad::Mat& dst = params.value(idx);
        if (dst.rows() != mat.rows() || dst.cols() != mat.cols())
            throw ConfigError("checkpoint tensor shape mismatch for " + name);
        dst = mat;
    }
}

} // namespace nextpoi
