#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nextpoi/ad.hpp"
#include "nextpoi/qrp_graph.hpp"

namespace nextpoi {

// Edge channels seen by the attention layers: the three graph relations
// plus a per-node self loop so every node keeps its own signal.
constexpr int kHgatEdgeTypes = 4;
constexpr int kHgatSelfLoop = 3;

// Arcs regrouped for attention: per edge type, (dst, src) pairs sorted by
// destination with contiguous [begin, end) segments per destination.
// Owns the arrays the tape ops reference, so it must outlive any tape
// built against it.
struct GraphAttentionPlan {
    struct TypePlan {
        std::vector<std::pair<int32_t, int32_t>> arcs;     // (dst, src)
        std::vector<std::pair<int32_t, int32_t>> segments; // [begin, end) per dst with arcs
    };
    std::array<TypePlan, kHgatEdgeTypes> types;
    int n_nodes = 0;

    static GraphAttentionPlan build(const QrpGraph& graph);
};

struct HgatConfig {
    int embed_dim = 512;
    int layers = 2;
    double leaky_slope = 0.2;
};

// Stacked heterogeneous graph attention. Per layer and edge type k:
//   logits(i<-j) = LeakyReLU(a_k . [W_k h_i || W_k h_j])
//   A_k[i, .]    = softmax over j in N_k(i)
//   h_i'         = ELU(sum_k sum_j A_k[i,j] W_k h_j)
class HgatStack {
public:
    HgatStack(ad::ParamStore& store, const HgatConfig& cfg, Rng& init);

    ad::Var forward_layer(ad::Tape& tape, const ad::ParamStore& store, ad::Var h,
                          const GraphAttentionPlan& plan, int layer) const;
    ad::Var forward(ad::Tape& tape, const ad::ParamStore& store, ad::Var h0,
                    const GraphAttentionPlan& plan) const;

    const HgatConfig& config() const { return cfg_; }

private:
    HgatConfig cfg_;
    // [layer][edge type]
    std::vector<std::array<int, kHgatEdgeTypes>> w_;
    std::vector<std::array<int, kHgatEdgeTypes>> a_;
};

// Final-layer vectors for the graph's leaf-tile and POI nodes, with the
// ids they map back to.
struct HistoricalKnowledge {
    std::optional<ad::Var> tiles; // |leaf tiles| x d
    std::optional<ad::Var> pois;  // |POIs| x d
    std::vector<int64_t> tile_ids;
    std::vector<int64_t> poi_ids;

    bool empty() const { return !tiles.has_value() && !pois.has_value(); }
};

// Runs the stack over initial node embeddings (tile rows gathered from the
// tile table, POI rows from the POI embedder) and splits the result by
// node type, keeping leaf tiles only on the tile side. The empty-graph
// sentinel yields empty knowledge.
HistoricalKnowledge encode_history(ad::Tape& tape, const ad::ParamStore& store,
                                   const HgatStack& stack, const QrpGraph& graph,
                                   const GraphAttentionPlan& plan, ad::Var node_init);

} // namespace nextpoi
