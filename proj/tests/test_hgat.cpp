#include <doctest.h>

#include <cmath>

#include "nextpoi/encoders.hpp"
#include "nextpoi/hgat.hpp"
#include "nextpoi/rng.hpp"

using namespace nextpoi;
using ad::Mat;

namespace {

// Hand-built heterogeneous graph (no quad-tree needed for layer math).
QrpGraph make_graph(int n_tiles, int n_pois,
                    const std::vector<std::tuple<int, int, EdgeType>>& undirected) {
    QrpGraph g;
    for (int i = 0; i < n_tiles; ++i) g.nodes.push_back({int64_t(i), NodeType::Tile});
    for (int i = 0; i < n_pois; ++i) g.nodes.push_back({int64_t(100 + i), NodeType::Poi});
    g.leaf_tile.assign(g.nodes.size(), 0);
    for (int i = 0; i < n_tiles; ++i) g.leaf_tile[size_t(i)] = 1;
    for (const auto& [a, b, t] : undirected) {
        g.arcs.push_back({int32_t(a), int32_t(b), t});
        g.arcs.push_back({int32_t(b), int32_t(a), t});
    }
    return g;
}

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
    return m;
}

// Dense explicit-loop reference for one attention layer: per edge type,
// logits LeakyReLU(a . [W h_i || W h_j]), softmax over each node's
// neighbors of that type, ELU of the summed messages. Self loops are a
// fourth type, matching the implementation's design.
Mat hgat_layer_reference(const QrpGraph& g, const Mat& h,
                         const std::vector<Mat>& W, const std::vector<Mat>& a,
                         double slope) {
    const int n = int(g.nodes.size());
    const int d = int(h.cols());
    Mat out = Mat::Zero(n, d);
    for (int k = 0; k < kHgatEdgeTypes; ++k) {
        // Neighbor lists per destination.
        std::vector<std::vector<int>> nbr;
        nbr.resize(size_t(n));
        if (k == kHgatSelfLoop) {
            for (int i = 0; i < n; ++i) nbr[size_t(i)].push_back(i);
        } else {
            for (const QrpArc& arc : g.arcs)
                if (int(arc.type) == k) nbr[size_t(arc.dst)].push_back(arc.src);
        }
        for (int i = 0; i < n; ++i) {
            if (nbr[size_t(i)].empty()) continue;
            std::vector<double> logits;
            for (int j : nbr[size_t(i)]) {
                Eigen::VectorXd cat(2 * d);
                cat.head(d) = W[size_t(k)] * h.row(i).transpose();
                cat.tail(d) = W[size_t(k)] * h.row(j).transpose();
                const double z = (a[size_t(k)].transpose() * cat)(0, 0);
                logits.push_back(z > 0 ? z : slope * z);
            }
            double mx = logits[0];
            for (double z : logits) mx = std::max(mx, z);
            double denom = 0;
            for (double z : logits) denom += std::exp(z - mx);
            for (size_t jj = 0; jj < nbr[size_t(i)].size(); ++jj) {
                const double w = std::exp(logits[jj] - mx) / denom;
                out.row(i) +=
                    w * (W[size_t(k)] * h.row(nbr[size_t(i)][jj]).transpose()).transpose();
            }
        }
    }
    return out.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
}

std::vector<Mat> layer_weights(const ad::ParamStore& store, int layer, bool a_vectors) {
    static const char* names[kHgatEdgeTypes] = {"branch", "road", "contain", "self"};
    std::vector<Mat> out;
    for (int k = 0; k < kHgatEdgeTypes; ++k)
        out.push_back(store.value(store.require("hgat.layer" + std::to_string(layer) + "." +
                                                names[k] + (a_vectors ? ".a" : ".w"))));
    return out;
}

} // namespace

TEST_CASE("attention weights: singleton = 1, identical twins = half") {
    QrpGraph g = make_graph(2, 1, {{0, 2, EdgeType::Contain}, {1, 2, EdgeType::Contain}});
    GraphAttentionPlan plan = GraphAttentionPlan::build(g);

    // POI node 2 has two contain neighbors; tiles have one each.
    Rng init = Rng::stream(1, "hgat-singleton");
    ad::ParamStore store;
    HgatConfig cfg;
    cfg.embed_dim = 8;
    cfg.layers = 1;
    HgatStack stack(store, cfg, init);

    Mat h = random_mat(3, 8, init);
    h.row(0) = h.row(1); // identical tile features

    // Recompute the per-type attention rows out of the plan's pieces.
    ad::Tape tape;
    ad::Var hv = tape.input(h);
    const auto& tp = plan.types[int(EdgeType::Contain)];
    REQUIRE(tp.arcs.size() == 4);

    ad::Var u = tape.matmul_nt(hv, tape.param(store, store.require("hgat.layer0.contain.w")));
    ad::Var att = tape.param(store, store.require("hgat.layer0.contain.a"));
    ad::Var s_dst = tape.matmul(u, tape.slice_rows(att, 0, 8));
    ad::Var s_src = tape.matmul(u, tape.slice_rows(att, 8, 8));
    ad::Var logits = tape.arc_logits(s_dst, s_src, tp.arcs, 0.2);
    ad::Var weights = tape.segment_softmax(logits, tp.segments);

    for (const auto& [begin, end] : tp.segments) {
        const int count = end - begin;
        if (count == 1) CHECK(tape.val(weights)(begin, 0) == 1.0); // singleton softmax
        if (count == 2) {
            // dst = POI node 2, neighbors 0 and 1 with identical features.
            CHECK(tape.val(weights)(begin, 0) == doctest::Approx(0.5).epsilon(1e-7));
            CHECK(tape.val(weights)(begin + 1, 0) == doctest::Approx(0.5).epsilon(1e-7));
        }
    }
}

TEST_CASE("one layer matches the dense-loop reference") {
    QrpGraph g = make_graph(3, 1, {{0, 1, EdgeType::Branch},
                                   {1, 2, EdgeType::Road},
                                   {1, 3, EdgeType::Contain},
                                   {0, 3, EdgeType::Contain}});
    GraphAttentionPlan plan = GraphAttentionPlan::build(g);

    Rng init = Rng::stream(2, "hgat-oracle");
    ad::ParamStore store;
    HgatConfig cfg;
    cfg.embed_dim = 6;
    cfg.layers = 2;
    HgatStack stack(store, cfg, init);

    Mat h0 = random_mat(4, 6, init);
    ad::Tape tape;
    ad::Var out1 = stack.forward_layer(tape, store, tape.input(h0), plan, 0);

    Mat ref1 = hgat_layer_reference(g, h0, layer_weights(store, 0, false),
                                    layer_weights(store, 0, true), 0.2);
    CHECK((tape.val(out1) - ref1).cwiseAbs().maxCoeff() < 1e-6);

    // Two chained layers equal the chained reference.
    ad::Var out2 = stack.forward(tape, store, tape.input(h0), plan);
    Mat ref2 = hgat_layer_reference(g, ref1, layer_weights(store, 1, false),
                                    layer_weights(store, 1, true), 0.2);
    CHECK((tape.val(out2) - ref2).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("gradient through one layer matches finite differences at d=8") {
    QrpGraph g = make_graph(2, 2, {{0, 1, EdgeType::Branch},
                                   {0, 2, EdgeType::Contain},
                                   {1, 3, EdgeType::Contain}});
    GraphAttentionPlan plan = GraphAttentionPlan::build(g);

    Rng init = Rng::stream(3, "hgat-grad");
    ad::ParamStore store;
    HgatConfig cfg;
    cfg.embed_dim = 8;
    cfg.layers = 1;
    HgatStack stack(store, cfg, init);

    Mat h0 = random_mat(4, 8, init);
    const Mat weights = random_mat(4, 8, init);

    auto loss = [&]() {
        ad::Tape t;
        ad::Var out = stack.forward_layer(t, store, t.input(h0), plan, 0);
        return t.val(out).cwiseProduct(weights).sum();
    };

    ad::Tape tape;
    ad::Var out = stack.forward_layer(tape, store, tape.input(h0), plan, 0);
    ad::Var flat = tape.reshape(tape.cwise_mul(out, tape.constant(weights)), 1, 32);
    ad::Var l = tape.matmul_nt(flat, tape.constant(Mat::Ones(1, 32)));
    tape.backward(l);
    ad::GradBuffer grads(store.size());
    tape.add_param_grads_to(grads);

    for (const char* name : {"hgat.layer0.branch.w", "hgat.layer0.contain.w",
                             "hgat.layer0.self.w", "hgat.layer0.branch.a",
                             "hgat.layer0.contain.a", "hgat.layer0.self.a"}) {
        const int p = store.require(name);
        REQUIRE(grads.touched(p));
        Mat fd = ad::finite_difference(store, p, loss);
        CHECK(ad::max_rel_error(grads.grad(p), fd, 1e-4) <= 1e-4);
    }
}

TEST_CASE("encode_history splits outputs by node type, leaf tiles only") {
    Rng init = Rng::stream(4, "hgat-history");
    ad::ParamStore store;
    HgatConfig cfg;
    cfg.embed_dim = 8;
    cfg.layers = 2;
    HgatStack stack(store, cfg, init);

    // Empty sentinel.
    QrpGraph empty;
    GraphAttentionPlan eplan = GraphAttentionPlan::build(empty);
    ad::Tape t0;
    HistoricalKnowledge none =
        encode_history(t0, store, stack, empty, eplan, ad::Var{});
    CHECK(none.empty());
    CHECK(none.tile_ids.empty());
    CHECK(none.poi_ids.empty());

    // Mixed graph: internal tile (index 0, not a leaf), leaf tile, POI.
    QrpGraph g = make_graph(2, 1, {{0, 1, EdgeType::Branch}, {1, 2, EdgeType::Contain}});
    g.leaf_tile[0] = 0; // tile 0 is internal
    GraphAttentionPlan plan = GraphAttentionPlan::build(g);
    ad::Tape tape;
    HistoricalKnowledge hk =
        encode_history(tape, store, stack, g, plan, tape.input(random_mat(3, 8, init)));
    REQUIRE(hk.tiles.has_value());
    REQUIRE(hk.pois.has_value());
    CHECK(tape.val(*hk.tiles).rows() == 1); // leaf only
    CHECK(tape.val(*hk.pois).rows() == 1);
    CHECK(hk.tile_ids == std::vector<int64_t>{1});
    CHECK(hk.poi_ids == std::vector<int64_t>{100});
}

TEST_CASE("outputs are equivariant under node relabeling") {
    Rng init = Rng::stream(5, "hgat-perm");
    ad::ParamStore store;
    HgatConfig cfg;
    cfg.embed_dim = 6;
    cfg.layers = 2;
    HgatStack stack(store, cfg, init);

    QrpGraph g = make_graph(3, 2, {{0, 1, EdgeType::Branch},
                                   {1, 2, EdgeType::Road},
                                   {0, 3, EdgeType::Contain},
                                   {2, 4, EdgeType::Contain}});
    Mat h0 = random_mat(5, 6, init);

    // Permuted copy: relabel node order and remap arcs accordingly.
    const std::vector<int> perm{3, 0, 4, 1, 2}; // new index of old node i
    QrpGraph gp;
    gp.nodes.resize(5);
    gp.leaf_tile.assign(5, 0);
    Mat h0p(5, 6);
    for (int i = 0; i < 5; ++i) {
        gp.nodes[size_t(perm[size_t(i)])] = g.nodes[size_t(i)];
        gp.leaf_tile[size_t(perm[size_t(i)])] = g.leaf_tile[size_t(i)];
        h0p.row(perm[size_t(i)]) = h0.row(i);
    }
    for (const QrpArc& a : g.arcs)
        gp.arcs.push_back({perm[size_t(a.src)], perm[size_t(a.dst)], a.type});

    GraphAttentionPlan plan = GraphAttentionPlan::build(g);
    GraphAttentionPlan planp = GraphAttentionPlan::build(gp);

    ad::Tape ta, tb;
    Mat out = ta.val(stack.forward(ta, store, ta.input(h0), plan));
    Mat outp = tb.val(stack.forward(tb, store, tb.input(h0p), planp));
    for (int i = 0; i < 5; ++i)
        CHECK((out.row(i) - outp.row(perm[size_t(i)])).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("n-layer outputs depend only on the n-hop neighborhood") {
    Rng init = Rng::stream(6, "hgat-local");
    ad::ParamStore store;
    HgatConfig cfg;
    cfg.embed_dim = 6;
    cfg.layers = 1;
    HgatStack stack(store, cfg, init);

    // Path: 0 - 1 - 2 - 3 over branch edges.
    QrpGraph g = make_graph(4, 0, {{0, 1, EdgeType::Branch},
                                   {1, 2, EdgeType::Branch},
                                   {2, 3, EdgeType::Branch}});
    GraphAttentionPlan plan = GraphAttentionPlan::build(g);

    Mat h0 = random_mat(4, 6, init);
    Mat h0b = h0;
    h0b.row(3) += Mat::Ones(1, 6); // perturb a node 3 hops from node 0

    ad::Tape ta, tb;
    Mat out_a = ta.val(stack.forward(ta, store, ta.input(h0), plan));
    Mat out_b = tb.val(stack.forward(tb, store, tb.input(h0b), plan));
    // One layer: nodes 0 and 1 are beyond one hop of node 3.
    CHECK((out_a.row(0) - out_b.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out_a.row(1) - out_b.row(1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out_a.row(2) - out_b.row(2)).cwiseAbs().maxCoeff() > 1e-12);

    // Two layers: only node 0 is beyond two hops.
    HgatConfig cfg2 = cfg;
    cfg2.layers = 2;
    ad::ParamStore store2;
    Rng init2 = Rng::stream(6, "hgat-local-2");
    HgatStack stack2(store2, cfg2, init2);
    ad::Tape tc, td;
    Mat out_c = tc.val(stack2.forward(tc, store2, tc.input(h0), plan));
    Mat out_d = td.val(stack2.forward(td, store2, td.input(h0b), plan));
    CHECK((out_c.row(0) - out_d.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out_c.row(1) - out_d.row(1)).cwiseAbs().maxCoeff() > 1e-12);
}

TEST_CASE("isolated nodes survive through their self loop") {
    Rng init = Rng::stream(7, "hgat-isolated");
    ad::ParamStore store;
    HgatConfig cfg;
    cfg.embed_dim = 4;
    cfg.layers = 1;
    HgatStack stack(store, cfg, init);

    QrpGraph g = make_graph(1, 0, {}); // single node, no edges
    GraphAttentionPlan plan = GraphAttentionPlan::build(g);
    ad::Tape tape;
    Mat h0 = random_mat(1, 4, init);
    Mat out = tape.val(stack.forward(tape, store, tape.input(h0), plan));
    CHECK(out.allFinite());
    // ELU(W_self h) with a singleton softmax weight of one.
    const Mat w = store.value(store.require("hgat.layer0.self.w"));
    Mat expect = (w * h0.row(0).transpose()).transpose();
    expect = expect.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-9);
}
