#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nextpoi/ad.hpp"

namespace nextpoi {

struct FusionConfig {
    int embed_dim = 512;
    int blocks = 2;
    double dropout = 0.1; // attention weights and FF output, training only
};

// N attention blocks fusing a prefix sequence with a historical knowledge
// set. Per block: masked self-attention, add&norm, cross-attention over
// the knowledge set, add&norm, ReLU feed-forward, add&norm. Every block
// re-attends to the same knowledge set. An absent/empty knowledge set
// degrades cross-attention to zero.
class FusionStack {
public:
    FusionStack(ad::ParamStore& store, const std::string& name, const FusionConfig& cfg,
                Rng& init);

    // seq: L x d (rows are positions). Returns the full L x d output of the
    // last block; callers take the last row for next-step prediction.
    ad::Var forward(ad::Tape& tape, const ad::ParamStore& store, ad::Var seq,
                    std::optional<ad::Var> knowledge, bool training = false,
                    Rng* dropout_rng = nullptr) const;

    // Last row of forward(), the prediction vector.
    ad::Var fuse(ad::Tape& tape, const ad::ParamStore& store, ad::Var seq,
                 std::optional<ad::Var> knowledge, bool training = false,
                 Rng* dropout_rng = nullptr) const;

    const FusionConfig& config() const { return cfg_; }

    // Additive causal mask: 0 where key position <= query position, a large
    // negative value elsewhere.
    static ad::Mat causal_mask(int length);

private:
    struct BlockParams {
        int wq0, wk0, wv0;
        int wq1, wk1, wv1;
        int wf, bf;
        int ln0_g, ln0_b, ln1_g, ln1_b, ln2_g, ln2_b;
    };

    ad::Var block_forward(ad::Tape& tape, const ad::ParamStore& store, ad::Var h,
                          std::optional<ad::Var> knowledge, const BlockParams& bp, bool training,
                          Rng* dropout_rng) const;

    FusionConfig cfg_;
    std::vector<BlockParams> blocks_;
};

} // namespace nextpoi
