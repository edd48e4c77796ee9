#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nextpoi/ad.hpp"
#include "nextpoi/encoders.hpp"
#include "nextpoi/fusion.hpp"
#include "nextpoi/hgat.hpp"

namespace nextpoi {

struct ModelConfig {
    int embed_dim = 512;
    std::array<int, 3> conv_channels = {8, 16, 4};
    int hgat_layers = 2;
    int fusion_blocks = 2;
    double alpha = 0.5;   // id/category merge ratio
    double dropout = 0.1;

    // Ablation switches. With use_imagery off, tile vectors come from a
    // free learnable table instead of the image encoder.
    bool use_imagery = true;
    bool use_st_encoder = true;
    bool use_poi_category = true;

    int n_pois = 0;
    int n_categories = 0;
    int n_tiles = 0; // rows of the tile table: every tree node, sorted by id
};

// Prefix sequences in table-row space, prepared by the data pipeline.
struct SequenceInput {
    std::vector<int> tile_rows; // leaf tile row per position
    ad::Mat hloc;               // L x d spatial encodings; ignored when st encoder is off
    std::vector<int> slots;     // half-hour slot per position
    std::vector<int> poi_ids;
    std::vector<int> poi_cates;

    size_t length() const { return tile_rows.size(); }
};

// History graph bound to table rows. Null graph = empty-history sentinel.
struct GraphInput {
    const QrpGraph* graph = nullptr;
    const GraphAttentionPlan* plan = nullptr;
    std::vector<int> tile_rows; // per graph tile node
    std::vector<int> poi_ids;   // per graph POI node
    std::vector<int> poi_cates;

    bool empty() const { return graph == nullptr || graph->empty(); }
};

struct ForwardResult {
    ad::Var h_tile; // 1 x d prediction vector of the tile stack
    ad::Var h_poi;  // 1 x d prediction vector of the POI stack
};

// All learnable state plus the module wiring.
class Model {
public:
    Model(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }

    const ImageEncoder& image_encoder() const { return *image_encoder_; }
    const PoiEmbedder& poi_embedder() const { return *poi_; }
    int tile_table_param() const { return tile_table_param_; } // -1 when imagery is on

    using ImageProvider = std::function<const TileImage&(int row)>;

    // Forward-only tile table (n_rows x d), processed in fixed chunks so
    // peak activation memory stays bounded; threads share the chunk queue.
    // Raw per-tile projections are standardized per feature across the
    // tile set, then L2-normalized per row.
    ad::Mat build_tile_table(const ImageProvider& images, int n_rows, int n_threads) const;

    // As above, but keeps the normalization context needed for backprop.
    struct TileTableContext {
        ad::Mat table; // finalized rows (unit norm)
        ad::Mat z;     // standardized, pre-row-norm
        Eigen::VectorXd inv_sigma;    // per feature
        Eigen::VectorXd row_inv_norm; // per row
    };
    TileTableContext build_tile_table_ctx(const ImageProvider& images, int n_rows,
                                          int n_threads) const;

    // Chain rule from finalized-table gradients through the normalization
    // layers into the encoder parameters. Deterministic for a given
    // chunking regardless of thread count.
    void backprop_tile_table(const ImageProvider& images, const TileTableContext& ctx,
                             const ad::Mat& dtable, ad::GradBuffer& grads, int n_threads) const;

    // Binds the tile table on a tape: a tracked input when imagery is on
    // (its gradient is later pushed through the encoder), the free table
    // parameter otherwise.
    ad::Var bind_tile_table(ad::Tape& tape, const ad::Mat& table) const;

    ForwardResult forward(ad::Tape& tape, ad::Var tile_table, const SequenceInput& seq,
                          const GraphInput& graph, bool training = false,
                          Rng* dropout_rng = nullptr) const;

    // Approximate parameter + activation accounting for resource tests.
    size_t parameter_bytes() const;

private:
    ModelConfig cfg_;
    ad::ParamStore params_;
    std::optional<ImageEncoder> image_encoder_;
    int tile_table_param_ = -1;
    std::optional<PoiEmbedder> poi_;
    std::optional<TemporalEncoder> temporal_tile_;
    std::optional<TemporalEncoder> temporal_poi_;
    std::optional<HgatStack> hgat_;
    std::optional<FusionStack> fuse_tile_;
    std::optional<FusionStack> fuse_poi_;
};

// --- checkpoints -----------------------------------------------------------

struct AdamState {
    std::vector<ad::Mat> m; // aligned with ParamStore entries
    std::vector<ad::Mat> v;
    int64_t step = 0;
};

// Single binary archive: version, free-form JSON meta, named tensors with
// shape metadata, optional optimizer state.
void save_checkpoint(const std::string& path, const ad::ParamStore& params,
                     const std::string& meta_json, const AdamState* adam = nullptr);

struct LoadedCheckpoint {
    std::vector<std::pair<std::string, ad::Mat>> tensors;
    std::string meta_json;
    std::optional<AdamState> adam;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies tensors into the store by name; shapes must match exactly.
void apply_checkpoint(ad::ParamStore& params, const LoadedCheckpoint& ckpt);

} // namespace nextpoi
