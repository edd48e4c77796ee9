#include <doctest.h>

#include <cmath>

#include "nextpoi/encoders.hpp"
#include "nextpoi/geodata.hpp"

using namespace nextpoi;
using ad::Mat;

TEST_CASE("spatial encoding: origin, hand fixture, bounds") {
    // (0, 0): every sin dimension 0, every cos dimension 1.
    Mat zero = spatial_encoding(0.0, 0.0, 16);
    for (int i = 0; i < 16; i += 2) {
        CHECK(zero(0, i) == 0.0);
        CHECK(zero(0, i + 1) == 1.0);
    }

    // d = 8, (x, y) = (1, 1): frequencies follow the printed exponent
    // 2i/d across both branches, so the y pairs continue at 10^-2, 10^-3.
    Mat h = spatial_encoding(1.0, 1.0, 8);
    const double expect[8] = {std::sin(1.0),   std::cos(1.0),   std::sin(0.1),
                              std::cos(0.1),   std::sin(0.01),  std::cos(0.01),
                              std::sin(0.001), std::cos(0.001)};
    for (int i = 0; i < 8; ++i) CHECK(h(0, i) == doctest::Approx(expect[i]).epsilon(1e-9));

    CHECK_THROWS_AS(spatial_encoding(0.5, 0.5, 10), ConfigError);
    CHECK_THROWS_AS(spatial_encoding(0.5, 0.5, 6), ConfigError);

    // Infinity norm stays within 1.
    for (double x : {0.0, 0.3, 0.9})
        for (double y : {0.1, 0.7}) {
            Mat e = spatial_encoding(x, y, 64);
            CHECK(e.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
        }
}

TEST_CASE("spatial encoding similarity decays along axis rays") {
    const int d = 512;
    Rng rng = Rng::stream(4, "spatial-locality");
    int ok = 0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
        const double rx = rng.uniform(), ry = rng.uniform();
        const bool along_x = rng.uniform() < 0.5;
        double dir = rng.uniform() < 0.5 ? 1.0 : -1.0;
        // Keep both probes inside the unit square.
        const double base = along_x ? rx : ry;
        if (dir > 0 && base + 0.3 > 1.0) dir = -1.0;
        if (dir < 0 && base - 0.3 < 0.0) dir = 1.0;
        const double d1 = 0.3 * rng.uniform();
        const double d2 = d1 + (0.3 - d1) * rng.uniform();
        auto probe = [&](double dist) {
            const double x = along_x ? rx + dir * dist : rx;
            const double y = along_x ? ry : ry + dir * dist;
            return spatial_encoding(x, y, d);
        };
        Mat hr = spatial_encoding(rx, ry, d);
        Mat h1 = probe(d1), h2 = probe(d2);
        const double c1 = hr.row(0).dot(h1.row(0)) / (hr.row(0).norm() * h1.row(0).norm());
        const double c2 = hr.row(0).dot(h2.row(0)) / (hr.row(0).norm() * h2.row(0).norm());
        if (c1 >= c2 - 1e-12) ++ok;
    }
    CHECK(double(ok) / trials >= 0.95);
}

TEST_CASE("spatial encoding shows a radially decaying pattern") {
    // Mean similarity per radius bin decreases around a fixed reference.
    const int d = 512;
    const double rx = 0.42, ry = 0.38;
    Mat hr = spatial_encoding(rx, ry, d);
    Rng rng = Rng::stream(9, "radial");
    std::array<double, 3> bin_sum{0, 0, 0};
    std::array<int, 3> bin_n{0, 0, 0};
    for (int i = 0; i < 4000; ++i) {
        const double x = rng.uniform(), y = rng.uniform();
        const double r = std::hypot(x - rx, y - ry);
        if (r >= 0.3) continue;
        Mat h = spatial_encoding(x, y, d);
        const double c = hr.row(0).dot(h.row(0)) / (hr.row(0).norm() * h.row(0).norm());
        const int bin = int(r / 0.1);
        bin_sum[size_t(bin)] += c;
        ++bin_n[size_t(bin)];
    }
    REQUIRE(bin_n[0] > 10);
    REQUIRE(bin_n[2] > 10);
    CHECK(bin_sum[0] / bin_n[0] > bin_sum[1] / bin_n[1]);
    CHECK(bin_sum[1] / bin_n[1] > bin_sum[2] / bin_n[2]);
}

TEST_CASE("temporal slots floor minutes-of-day by half hours") {
    CHECK(temporal_slot(1402790400) == 0);     // 00:00
    CHECK(temporal_slot(1402876799) == 47);    // 23:59:59
    CHECK(temporal_slot(1402839600) == 27);    // 13:40 -> floor(820 / 30)
    CHECK(temporal_slot(0) == 0);
    CHECK(temporal_slot(-1) == 47);            // wraps into the previous day
    CHECK(temporal_slot(86400 + 30 * 60) == 1);
}

TEST_CASE("poi embedding follows the merge ratio exactly") {
    Rng init = Rng::stream(3, "poi-embed");
    auto run = [&](double alpha, bool use_cate) {
        ad::ParamStore store;
        PoiEmbedder pe(store, 12, 5, 16, alpha, use_cate, init);
        ad::Tape tape;
        std::vector<int> ids{3}, cates{2};
        ad::Var out = pe.embed(tape, store, ids, cates);
        Mat id_row = store.value(pe.id_table_index()).row(3);
        Mat cate_row = store.value(pe.category_table_index()).row(2);
        return std::tuple<Mat, Mat, Mat>(tape.val(out), id_row, cate_row);
    };

    {
        auto [out, id_row, cate_row] = run(1.0, true);
        CHECK((out - id_row).cwiseAbs().maxCoeff() == 0.0);
    }
    {
        auto [out, id_row, cate_row] = run(0.0, true);
        CHECK((out - cate_row).cwiseAbs().maxCoeff() == 0.0);
    }
    {
        auto [out, id_row, cate_row] = run(0.3, true);
        Mat expect = 0.3 * id_row + 0.7 * cate_row;
        CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-7);
    }
    {
        // Category ablation: the id row alone.
        auto [out, id_row, cate_row] = run(0.3, false);
        CHECK((out - id_row).cwiseAbs().maxCoeff() == 0.0);
    }

    ad::ParamStore store;
    PoiEmbedder pe(store, 12, 5, 16, 0.5, true, init);
    ad::Tape tape;
    std::vector<int> bad_id{12}, cates{0};
    CHECK_THROWS_AS(pe.embed(tape, store, bad_id, cates), LookupError);
    std::vector<int> ids{0}, bad_cate{5};
    CHECK_THROWS_AS(pe.embed(tape, store, ids, bad_cate), LookupError);
}

TEST_CASE("temporal rows difference isolates the slot table") {
    Rng init = Rng::stream(5, "temporal");
    ad::ParamStore store;
    TemporalEncoder te(store, "slots", 16, init);
    PoiEmbedder pe(store, 4, 2, 16, 0.5, true, init);

    ad::Tape tape;
    std::vector<int> ids{1, 1}, cates{0, 0};
    ad::Var emb = pe.embed(tape, store, ids, cates);
    std::vector<int> slots{7, 31};
    ad::Var seq = tape.add(emb, te.rows(tape, store, slots));

    Mat diff = tape.val(seq).row(0) - tape.val(seq).row(1);
    Mat slot_diff = store.value(te.table_index()).row(7) - store.value(te.table_index()).row(31);
    CHECK((diff - slot_diff).cwiseAbs().maxCoeff() < 1e-12);

    ad::Tape t2;
    std::vector<int> bad{48};
    CHECK_THROWS_AS(te.rows(t2, store, bad), LookupError);
}

TEST_CASE("image encoder emits unit vectors and separates inputs") {
    Rng init = Rng::stream(6, "img-enc");
    ad::ParamStore store;
    ImageEncoderConfig cfg;
    cfg.embed_dim = 32;
    cfg.channels = {4, 8, 2};
    ImageEncoder enc(store, cfg, init);

    TileImage zeros;
    zeros.tile_id = 1;
    zeros.pixels.assign(TileImage::pixel_count(), 0.0f);
    TileImage ones = zeros;
    ones.tile_id = 2;
    ones.pixels.assign(TileImage::pixel_count(), 1.0f);

    Eigen::RowVectorXd ez = enc.encode_value(store, zeros);
    Eigen::RowVectorXd eo = enc.encode_value(store, ones);
    CHECK(std::abs(ez.norm() - 1.0) < 1e-6);
    CHECK(std::abs(eo.norm() - 1.0) < 1e-6);
    CHECK(ez.dot(eo) < 1.0 - 1e-3); // distinct directions

    TileImage textured = placeholder_tile_image(9);
    Eigen::RowVectorXd et = enc.encode_value(store, textured);
    CHECK(std::abs(et.norm() - 1.0) < 1e-6);

    TileImage bad;
    bad.pixels.assign(100, 0.5f);
    ad::Tape tape;
    CHECK_THROWS_AS(enc.encode(tape, store, bad), ConfigError);
}

TEST_CASE("image encoder gradient matches finite differences at d=16") {
    Rng init = Rng::stream(7, "img-grad");
    ad::ParamStore store;
    ImageEncoderConfig cfg;
    cfg.embed_dim = 16;
    cfg.channels = {2, 2, 1};
    ImageEncoder enc(store, cfg, init);

    TileImage img = placeholder_tile_image(5);
    const Mat weights = [] {
        Rng r = Rng::stream(8, "img-grad-w");
        Mat m(1, 16);
        for (int i = 0; i < 16; ++i) m(0, i) = r.normal();
        return m;
    }();

    auto loss = [&]() {
        ad::Tape tape;
        ad::Var out = enc.encode(tape, store, img);
        return tape.val(out).cwiseProduct(weights).sum();
    };

    ad::Tape tape;
    ad::Var out = enc.encode(tape, store, img);
    ad::Var contracted = tape.matmul_nt(out, tape.constant(weights));
    tape.backward(contracted);
    ad::GradBuffer grads(store.size());
    tape.add_param_grads_to(grads);

    // Full FD over the first conv kernel, spot FD over the projection.
    const int w1 = store.require("img.conv1.w");
    Mat fd = ad::finite_difference(store, w1, loss, 1e-5);
    CHECK(ad::max_rel_error(grads.grad(w1), fd, 1e-4) < 1e-4);

    const int pw = store.require("img.proj.w");
    Rng pick = Rng::stream(9, "img-grad-pick");
    Mat& p = store.value(pw);
    for (int probe = 0; probe < 10; ++probe) {
        const int r = int(pick.below(uint64_t(p.rows())));
        const int c = int(pick.below(uint64_t(p.cols())));
        const double keep = p(r, c);
        const double eps = 1e-5;
        p(r, c) = keep + eps;
        const double hi = loss();
        p(r, c) = keep - eps;
        const double lo = loss();
        p(r, c) = keep;
        const double fd_v = (hi - lo) / (2 * eps);
        const double an = grads.grad(pw)(r, c);
        const double denom = std::max({std::abs(fd_v), std::abs(an), 1e-4});
        CHECK(std::abs(fd_v - an) / denom < 1e-4);
    }
}

TEST_CASE("tile table build accounting stays under the memory budget") {
    // Parameter plus live-activation accounting for a full-scale table
    // build (d = 512, batch 8, TKY-scale tile count) must stay under 1 GB.
    const ImageEncoderConfig cfg; // d = 512, channels (8, 16, 4)
    const size_t dbl = sizeof(double);

    size_t param_bytes = 0;
    param_bytes += size_t(8) * 27 * dbl + 8 * dbl;           // conv1
    param_bytes += size_t(16) * 8 * 9 * dbl + 16 * dbl;      // conv2
    param_bytes += size_t(4) * 16 * 9 * dbl + 4 * dbl;       // conv3
    param_bytes += size_t(cfg.embed_dim) * 4 * 64 * 64 * dbl // projection
                   + size_t(cfg.embed_dim) * dbl;

    // Live activations for one tile: input map, three stage outputs, the
    // largest im2col buffer, flatten, projection row.
    size_t act_bytes = 0;
    act_bytes += size_t(3) * 256 * 256 * dbl;
    act_bytes += size_t(8) * 128 * 128 * dbl;
    act_bytes += size_t(16) * 64 * 64 * dbl;
    act_bytes += size_t(4) * 64 * 64 * dbl;
    act_bytes += size_t(16 * 9) * 64 * 64 * dbl; // widest im2col
    act_bytes += size_t(4 * 64 * 64 + cfg.embed_dim) * dbl;

    const size_t n_tiles = 3000; // TKY-scale leaf count with internals
    const size_t table_bytes = n_tiles * size_t(cfg.embed_dim) * dbl;
    const size_t batch = 8;

    const size_t total = param_bytes + batch * act_bytes + table_bytes;
    CHECK(total < size_t(1) << 30);
}
