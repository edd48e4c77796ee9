#include "nextpoi/fusion.hpp"

#include <cmath>

#include "nextpoi/common.hpp"
#include "nextpoi/encoders.hpp"

namespace nextpoi {

namespace {
constexpr double kMaskValue = -1e30;
}

ad::Mat FusionStack::causal_mask(int length) {
    ad::Mat m = ad::Mat::Zero(length, length);
    for (int q = 0; q < length; ++q)
        for (int k = q + 1; k < length; ++k) m(q, k) = kMaskValue;
    return m;
}

FusionStack::FusionStack(ad::ParamStore& store, const std::string& name, const FusionConfig& cfg,
                         Rng& init)
    : cfg_(cfg) {
    const int d = cfg.embed_dim;
    blocks_.reserve(cfg.blocks);
    for (int i = 0; i < cfg.blocks; ++i) {
        const std::string base = name + ".block" + std::to_string(i);
        BlockParams bp;
        bp.wq0 = store.add(base + ".self.wq", init_projection(d, d, init));
        bp.wk0 = store.add(base + ".self.wk", init_projection(d, d, init));
        bp.wv0 = store.add(base + ".self.wv", init_projection(d, d, init));
        bp.wq1 = store.add(base + ".cross.wq", init_projection(d, d, init));
        bp.wk1 = store.add(base + ".cross.wk", init_projection(d, d, init));
        bp.wv1 = store.add(base + ".cross.wv", init_projection(d, d, init));
        bp.wf = store.add(base + ".ff.w", init_projection(d, d, init));
        bp.bf = store.add(base + ".ff.b", ad::Mat::Zero(1, d));
        bp.ln0_g = store.add(base + ".ln0.gain", ad::Mat::Ones(1, d));
        bp.ln0_b = store.add(base + ".ln0.bias", ad::Mat::Zero(1, d));
        bp.ln1_g = store.add(base + ".ln1.gain", ad::Mat::Ones(1, d));
        bp.ln1_b = store.add(base + ".ln1.bias", ad::Mat::Zero(1, d));
        bp.ln2_g = store.add(base + ".ln2.gain", ad::Mat::Ones(1, d));
        bp.ln2_b = store.add(base + ".ln2.bias", ad::Mat::Zero(1, d));
        blocks_.push_back(bp);
    }
}

ad::Var FusionStack::block_forward(ad::Tape& tape, const ad::ParamStore& store, ad::Var h,
                                   std::optional<ad::Var> knowledge, const BlockParams& bp,
                                   bool training, Rng* dropout_rng) const {
    const int L = static_cast<int>(tape.val(h).rows());
    const double inv_sqrt_d = 1.0 / std::sqrt(double(cfg_.embed_dim));
    const bool drop = training && cfg_.dropout > 0.0 && dropout_rng;

    // Masked self-attention.
    ad::Var q0 = tape.matmul_nt(h, tape.param(store, bp.wq0));
    ad::Var k0 = tape.matmul_nt(h, tape.param(store, bp.wk0));
    ad::Var v0 = tape.matmul_nt(h, tape.param(store, bp.wv0));
    ad::Var scores = tape.scale(tape.matmul_nt(q0, k0), inv_sqrt_d);
    ad::Var attn = tape.softmax_rows_masked(scores, causal_mask(L));
    if (drop) attn = tape.dropout(attn, cfg_.dropout, *dropout_rng);
    ad::Var z_m = tape.matmul(attn, v0);
    ad::Var h1 = tape.layer_norm_rows(tape.add(h, z_m), tape.param(store, bp.ln0_g),
                                      tape.param(store, bp.ln0_b));

    // Cross-attention over the knowledge set; empty set contributes zero.
    ad::Var z_h;
    if (knowledge && tape.val(*knowledge).rows() > 0) {
        ad::Var q1 = tape.matmul_nt(h1, tape.param(store, bp.wq1));
        ad::Var k1 = tape.matmul_nt(*knowledge, tape.param(store, bp.wk1));
        ad::Var v1 = tape.matmul_nt(*knowledge, tape.param(store, bp.wv1));
        ad::Var cscores = tape.scale(tape.matmul_nt(q1, k1), inv_sqrt_d);
        ad::Var cattn = tape.softmax_rows(cscores);
        if (drop) cattn = tape.dropout(cattn, cfg_.dropout, *dropout_rng);
        z_h = tape.matmul(cattn, v1);
    } else {
        z_h = tape.constant(ad::Mat::Zero(L, cfg_.embed_dim));
    }
    ad::Var h2 = tape.layer_norm_rows(tape.add(h1, z_h), tape.param(store, bp.ln1_g),
                                      tape.param(store, bp.ln1_b));

    // Feed-forward.
    ad::Var z_f = tape.relu(
        tape.add_row_broadcast(tape.matmul_nt(h2, tape.param(store, bp.wf)),
                               tape.param(store, bp.bf)));
    if (drop) z_f = tape.dropout(z_f, cfg_.dropout, *dropout_rng);
    return tape.layer_norm_rows(tape.add(h2, z_f), tape.param(store, bp.ln2_g),
                                tape.param(store, bp.ln2_b));
}

ad::Var FusionStack::forward(ad::Tape& tape, const ad::ParamStore& store, ad::Var seq,
                             std::optional<ad::Var> knowledge, bool training,
                             Rng* dropout_rng) const {
    if (tape.val(seq).rows() < 1) throw ConfigError("fusion needs a non-empty sequence");
    ad::Var h = seq;
    for (const BlockParams& bp : blocks_)
        h = block_forward(tape, store, h, knowledge, bp, training, dropout_rng);
    return h;
}

ad::Var FusionStack::fuse(ad::Tape& tape, const ad::ParamStore& store, ad::Var seq,
                          std::optional<ad::Var> knowledge, bool training,
                          Rng* dropout_rng) const {
    ad::Var out = forward(tape, store, seq, knowledge, training, dropout_rng);
    const int L = static_cast<int>(tape.val(out).rows());
    return tape.slice_rows(out, L - 1, 1);
}

} // namespace nextpoi
