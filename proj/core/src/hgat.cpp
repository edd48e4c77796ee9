#include "nextpoi/hgat.hpp"

#include <algorithm>

#include "nextpoi/common.hpp"
#include "nextpoi/encoders.hpp"

namespace nextpoi {

GraphAttentionPlan GraphAttentionPlan::build(const QrpGraph& graph) {
    GraphAttentionPlan plan;
    plan.n_nodes = static_cast<int>(graph.nodes.size());

    for (const QrpArc& a : graph.arcs)
        plan.types[static_cast<int>(a.type)].arcs.push_back({a.dst, a.src});
    for (int i = 0; i < plan.n_nodes; ++i)
        plan.types[kHgatSelfLoop].arcs.push_back({i, i});

    for (TypePlan& tp : plan.types) {
        std::sort(tp.arcs.begin(), tp.arcs.end());
        size_t e = 0;
        while (e < tp.arcs.size()) {
            size_t begin = e;
            while (e < tp.arcs.size() && tp.arcs[e].first == tp.arcs[begin].first) ++e;
            tp.segments.push_back({int32_t(begin), int32_t(e)});
        }
    }
    return plan;
}

HgatStack::HgatStack(ad::ParamStore& store, const HgatConfig& cfg, Rng& init) : cfg_(cfg) {
    static const char* kTypeNames[kHgatEdgeTypes] = {"branch", "road", "contain", "self"};
    w_.resize(cfg.layers);
    a_.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
        for (int k = 0; k < kHgatEdgeTypes; ++k) {
            const std::string base =
                "hgat.layer" + std::to_string(l) + "." + kTypeNames[k];
            w_[l][k] = store.add(base + ".w",
                                 init_projection(cfg.embed_dim, cfg.embed_dim, init));
            a_[l][k] = store.add(base + ".a",
                                 init_projection(2 * cfg.embed_dim, 1, init));
        }
    }
}

ad::Var HgatStack::forward_layer(ad::Tape& tape, const ad::ParamStore& store, ad::Var h,
                                 const GraphAttentionPlan& plan, int layer) const {
    const int d = cfg_.embed_dim;
    ad::Var sum;
    for (int k = 0; k < kHgatEdgeTypes; ++k) {
        const auto& tp = plan.types[k];
        if (tp.arcs.empty()) continue;

        ad::Var u = tape.matmul_nt(h, tape.param(store, w_[layer][k])); // n x d rows = W h_j
        ad::Var att = tape.param(store, a_[layer][k]);                  // 2d x 1
        ad::Var s_dst = tape.matmul(u, tape.slice_rows(att, 0, d));     // n x 1
        ad::Var s_src = tape.matmul(u, tape.slice_rows(att, d, d));
        ad::Var logits = tape.arc_logits(s_dst, s_src, tp.arcs, cfg_.leaky_slope);
        if (!tape.val(logits).allFinite())
            throw NumericError("HGAT layer " + std::to_string(layer) +
                               " produced non-finite attention logits");
        ad::Var weights = tape.segment_softmax(logits, tp.segments);
        ad::Var msg = tape.weighted_scatter_rows(weights, u, tp.arcs, plan.n_nodes);
        sum = sum.valid() ? tape.add(sum, msg) : msg;
    }
    return tape.elu(sum);
}

ad::Var HgatStack::forward(ad::Tape& tape, const ad::ParamStore& store, ad::Var h0,
                           const GraphAttentionPlan& plan) const {
    ad::Var h = h0;
    for (int l = 0; l < cfg_.layers; ++l) h = forward_layer(tape, store, h, plan, l);
    return h;
}

HistoricalKnowledge encode_history(ad::Tape& tape, const ad::ParamStore& store,
                                   const HgatStack& stack, const QrpGraph& graph,
                                   const GraphAttentionPlan& plan, ad::Var node_init) {
    HistoricalKnowledge out;
    if (graph.empty()) return out;

    ad::Var h = stack.forward(tape, store, node_init, plan);

    std::vector<int> tile_rows, poi_rows;
    for (size_t i = 0; i < graph.nodes.size(); ++i) {
        if (graph.nodes[i].type == NodeType::Tile) {
            if (graph.leaf_tile[i]) {
                tile_rows.push_back(static_cast<int>(i));
                out.tile_ids.push_back(graph.nodes[i].key);
            }
        } else {
            poi_rows.push_back(static_cast<int>(i));
            out.poi_ids.push_back(graph.nodes[i].key);
        }
    }
    if (!tile_rows.empty()) out.tiles = tape.gather_rows(h, tile_rows);
    if (!poi_rows.empty()) out.pois = tape.gather_rows(h, poi_rows);
    return out;
}

} // namespace nextpoi
