#include "nextpoi/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "nextpoi/common.hpp"

namespace nextpoi {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("lr_decay must be in (0, 1]");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (embed_dim < 4 || embed_dim % 4 != 0)
        throw ConfigError("embed_dim must be a positive multiple of 4");
    if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (leaf_capacity < 1) throw ConfigError("leaf_capacity must be >= 1");
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
    if (alpha < 0 || alpha > 1) throw ConfigError("alpha must be in [0, 1]");
    if (delta_t_hours <= 0) throw ConfigError("delta_t_hours must be positive");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (train_frac <= 0 || valid_frac < 0 || train_frac + valid_frac >= 1.0)
        throw ConfigError("split fractions must leave room for a test split");
    LossConfig lc{loss_scale, loss_margin, beta};
    lc.validate();
}

const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        default: return "test";
    }
}

GraphInput GraphBundle::input() const {
    GraphInput g;
    g.graph = &graph;
    g.plan = &plan;
    g.tile_rows = tile_rows;
    g.poi_ids = poi_ids;
    g.poi_cates = poi_cates;
    return g;
}

const TileImage& Dataset::image_of_row(int row) const {
    return images.at(all_tiles[row]);
}

std::vector<Split> assign_splits(size_t n_trajectories, uint64_t seed, double train_frac,
                                 double valid_frac) {
    std::vector<int> order(n_trajectories);
    for (size_t i = 0; i < n_trajectories; ++i) order[i] = static_cast<int>(i);
    Rng rng = Rng::stream(seed, "split-assignment");
    rng.shuffle(order);

    const size_t n_train = size_t(std::llround(train_frac * double(n_trajectories)));
    const size_t n_valid = size_t(std::llround(valid_frac * double(n_trajectories)));
    std::vector<Split> out(n_trajectories, Split::Test);
    for (size_t i = 0; i < n_trajectories; ++i) {
        if (i < n_train)
            out[order[i]] = Split::Train;
        else if (i < n_train + n_valid)
            out[order[i]] = Split::Valid;
    }
    return out;
}

Dataset build_dataset(std::vector<Poi> pois, int n_categories,
                      std::vector<Trajectory> trajectories, RoadNetwork road,
                      std::map<int64_t, TileImage> images, const TrainConfig& cfg,
                      const AblationConfig& ab, const QuadTree* prebuilt_tree) {
    cfg.validate();
    Dataset d;
    d.pois = std::move(pois);
    d.n_categories = n_categories;
    d.road = std::move(road);
    d.bbox = compute_bbox(d.pois);

    std::stable_sort(trajectories.begin(), trajectories.end(),
                     [](const Trajectory& a, const Trajectory& b) {
                         if (a.user != b.user) return a.user < b.user;
                         return a.t_begin < b.t_begin;
                     });
    d.trajectories = std::move(trajectories);
    for (size_t i = 0; i < d.trajectories.size(); ++i)
        d.user_trajs[d.trajectories[i].user].push_back(static_cast<int>(i));

    if (prebuilt_tree)
        d.tree = *prebuilt_tree;
    else if (ab.grid_replace_quadtree > 0)
        d.tree = QuadTree::build_uniform(d.pois, d.bbox, ab.grid_replace_quadtree);
    else
        d.tree = QuadTree::build(d.pois, d.bbox, cfg.max_depth, cfg.leaf_capacity);
    d.bbox = d.tree->root_bbox();

    d.all_tiles = d.tree->all_tiles();
    d.leaf_tiles = d.tree->leaf_tiles();
    for (size_t r = 0; r < d.all_tiles.size(); ++r) d.tile_row[d.all_tiles[r]] = int(r);
    for (size_t p = 0; p < d.leaf_tiles.size(); ++p) {
        d.leaf_pos[d.leaf_tiles[p]] = int(p);
        d.leaf_rows.push_back(d.tile_row.at(d.leaf_tiles[p]));
    }

    d.images = std::move(images);
    for (int64_t tid : d.all_tiles)
        if (!d.images.count(tid)) d.images[tid] = placeholder_tile_image(tid);

    d.split_of = assign_splits(d.trajectories.size(), cfg.seed, cfg.train_frac, cfg.valid_frac);

    // History graphs: one per trajectory, over the user's strictly earlier
    // windows. Built eagerly so later phases are read-only.
    QrpBuildOptions gopts;
    gopts.include_road = !ab.no_road_edges;
    gopts.include_contain = !ab.no_contain_edges;
    d.history.resize(d.trajectories.size());
    for (const auto& [user, idxs] : d.user_trajs) {
        std::vector<int64_t> past;
        for (int ti : idxs) {
            auto bundle = std::make_unique<GraphBundle>();
            if (!ab.no_graph && !past.empty()) {
                bundle->graph = build_qrp_graph(past, *d.tree, d.road, gopts);
                bundle->plan = GraphAttentionPlan::build(bundle->graph);
                for (const QrpNode& nd : bundle->graph.nodes) {
                    if (nd.type == NodeType::Tile) {
                        bundle->tile_rows.push_back(d.tile_row.at(nd.key));
                    } else {
                        bundle->poi_ids.push_back(static_cast<int>(nd.key));
                        bundle->poi_cates.push_back(d.pois[size_t(nd.key)].cate);
                    }
                }
            }
            d.history[ti] = std::move(bundle);
            for (const VisitRecord& r : d.trajectories[ti].records) past.push_back(r.poi_id);
        }
    }
    return d;
}

std::vector<Sample> expand_samples(const Dataset& data, std::optional<Split> split) {
    std::vector<Sample> out;
    for (size_t ti = 0; ti < data.trajectories.size(); ++ti) {
        if (split && data.split_of[ti] != *split) continue;
        const size_t len = data.trajectories[ti].records.size();
        for (size_t j = 2; j <= len; ++j)
            out.push_back(Sample{int32_t(ti), int32_t(j - 1)});
    }
    return out;
}

SampleBinding bind_sample(const Dataset& data, const Sample& s, int embed_dim,
                          bool with_spatial) {
    const Trajectory& traj = data.trajectories[s.traj_index];
    if (s.prefix_len < 1 || size_t(s.prefix_len) >= traj.records.size())
        throw ConfigError("sample prefix length out of range");

    SampleBinding b;
    const int L = s.prefix_len;
    b.seq.tile_rows.reserve(L);
    b.seq.slots.reserve(L);
    b.seq.poi_ids.reserve(L);
    b.seq.poi_cates.reserve(L);
    std::vector<std::pair<double, double>> xy;
    xy.reserve(L);
    for (int k = 0; k < L; ++k) {
        const VisitRecord& r = traj.records[k];
        const Poi& p = data.pois[size_t(r.poi_id)];
        b.seq.tile_rows.push_back(data.tile_row.at(data.tree->leaf_of_poi(r.poi_id)));
        b.seq.slots.push_back(temporal_slot(r.timestamp));
        b.seq.poi_ids.push_back(static_cast<int>(r.poi_id));
        b.seq.poi_cates.push_back(p.cate);
        const NormalizedXY n = normalize_coords(p.loc, data.bbox);
        xy.push_back({n.x, n.y});
    }
    if (with_spatial) b.seq.hloc = spatial_encoding_rows(xy, embed_dim);

    b.graph = data.history[s.traj_index]->input();
    b.target_poi = traj.records[s.prefix_len].poi_id;
    b.target_tile = data.tree->leaf_of_poi(b.target_poi);
    b.target_leaf_pos = data.leaf_pos.at(b.target_tile);
    return b;
}

std::vector<int64_t> training_candidates(std::span<const ScoredId> tile_ranking, int top_k,
                                         int64_t target_tile, const QuadTree& tree) {
    const int k = std::min<int>(top_k, int(tile_ranking.size()));
    std::vector<ScoredId> kept(tile_ranking.begin(), tile_ranking.begin() + k);
    if (std::none_of(kept.begin(), kept.end(),
                     [&](const ScoredId& t) { return t.id == target_tile; }))
        kept.push_back(ScoredId{target_tile, -2.0});
    return candidate_pois(kept, int(kept.size()), tree);
}

// --- trainer ------------------------------------------------------------

namespace {

void check_params_finite(const ad::ParamStore& params) {
    for (size_t i = 0; i < params.size(); ++i)
        if (!params.value(int(i)).allFinite())
            throw NumericError("non-finite values in parameter " + params.name(int(i)));
}

std::string dump_batch(std::span<const Sample> batch) {
    std::ostringstream os;
    os << "batch:";
    for (const Sample& s : batch) os << " (" << s.traj_index << "," << s.prefix_len << ")";
    return os.str();
}

} // namespace

Trainer::Trainer(Model& model, const Dataset& data, const TrainConfig& cfg,
                 const AblationConfig& ab)
    : model_(model), data_(data), cfg_(cfg), ab_(ab) {
    cfg_.validate();
    adam_.m.resize(model.params().size());
    adam_.v.resize(model.params().size());
    refresh_tile_table();
}

void Trainer::refresh_tile_table() {
    if (model_.config().use_imagery) {
        table_ctx_ = model_.build_tile_table_ctx([this](int row) -> const TileImage& {
            return data_.image_of_row(row);
        }, data_.n_tiles(), cfg_.threads);
    } else {
        table_ctx_ = Model::TileTableContext{};
        table_ctx_.table = model_.params().value(model_.tile_table_param());
    }
}

double Trainer::step(std::span<const Sample> batch, int epoch) {
    if (batch.empty()) throw ConfigError("empty training batch");
    refresh_tile_table();

    const size_t B = batch.size();
    const LossConfig tile_loss{cfg_.loss_scale, cfg_.loss_margin, cfg_.beta};
    std::vector<ad::GradBuffer> sample_grads(B, ad::GradBuffer(model_.params().size()));
    std::vector<ad::Mat> sample_dtable(B);
    std::vector<double> sample_loss(B, 0.0);
    std::vector<std::string> sample_error(B);

    const int64_t step_id = adam_.step;
    std::atomic<size_t> cursor{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = cursor.fetch_add(1);
            if (i >= B) break;
            try {
                const SampleBinding b =
                    bind_sample(data_, batch[i], cfg_.embed_dim, model_.config().use_st_encoder);
                Rng drop = Rng(Rng::mix(Rng::mix(cfg_.seed ^ Rng::tag("dropout"),
                                                 uint64_t(epoch) << 32 | uint64_t(step_id)),
                               i));

                ad::Tape tape;
                ad::Var table = model_.bind_tile_table(tape, table_ctx_.table);
                ForwardResult fwd =
                    model_.forward(tape, table, b.seq, b.graph, /*training=*/true, &drop);

                ad::Var total;
                if (ab_.no_two_step) {
                    // Tile selector bypassed: the POI loss ranges over the
                    // whole catalog and the tile stack is left out.
                    std::vector<int> ids(size_t(data_.n_pois()));
                    std::vector<int> cates(size_t(data_.n_pois()));
                    for (int p = 0; p < data_.n_pois(); ++p) {
                        ids[size_t(p)] = p;
                        cates[size_t(p)] = data_.pois[size_t(p)].cate;
                    }
                    ad::Var rows = model_.poi_embedder().embed(tape, model_.params(), ids, cates);
                    total = angular_margin_loss(tape, fwd.h_poi, rows,
                                                static_cast<int>(b.target_poi),
                                                {cfg_.loss_scale, cfg_.loss_margin, 0.0});
                } else {
                    // Tile loss over every leaf candidate.
                    ad::Var leaf_rows = tape.gather_rows(table, data_.leaf_rows);
                    ad::Var l_tile = angular_margin_loss(tape, fwd.h_tile, leaf_rows,
                                                         b.target_leaf_pos, tile_loss);

                    // POI candidates: top-K tiles by the current tile scores,
                    // forced to include the target tile so the target is
                    // always in the loss denominator.
                    const Eigen::RowVectorXd h_tile_val = tape.val(fwd.h_tile).row(0);
                    ad::Mat leaf_mat(data_.leaf_rows.size(), cfg_.embed_dim);
                    for (size_t r = 0; r < data_.leaf_rows.size(); ++r)
                        leaf_mat.row(Eigen::Index(r)) = table_ctx_.table.row(data_.leaf_rows[r]);
                    auto ranking = rank_tiles(h_tile_val, leaf_mat, data_.leaf_tiles);
                    std::vector<int64_t> cand =
                        training_candidates(ranking, cfg_.top_k, b.target_tile, data_.quadtree());

                    std::vector<int> ids(cand.size()), cates(cand.size());
                    int target_idx = -1;
                    for (size_t c = 0; c < cand.size(); ++c) {
                        ids[c] = static_cast<int>(cand[c]);
                        cates[c] = data_.pois[size_t(cand[c])].cate;
                        if (cand[c] == b.target_poi) target_idx = static_cast<int>(c);
                    }
                    if (target_idx < 0)
                        throw NumericError("training candidates lost the target POI");
                    ad::Var rows = model_.poi_embedder().embed(tape, model_.params(), ids, cates);
                    ad::Var l_poi = angular_margin_loss(tape, fwd.h_poi, rows, target_idx,
                                                        {cfg_.loss_scale, cfg_.loss_margin, 0.0});
                    total = tape.add(tape.scale(l_tile, cfg_.beta), l_poi);
                }

                const double loss = tape.val(total)(0, 0);
                if (!std::isfinite(loss)) throw NumericError("non-finite loss");
                sample_loss[i] = loss;

                tape.backward(total, 1.0 / double(B));
                tape.add_param_grads_to(sample_grads[i]);
                if (model_.config().use_imagery) sample_dtable[i] = tape.grad_of(table);
            } catch (const std::exception& e) {
                sample_error[i] = e.what();
            }
        }
    };

    std::vector<std::thread> pool;
    for (int t = 1; t < cfg_.threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    for (size_t i = 0; i < B; ++i)
        if (!sample_error[i].empty())
            throw NumericError("train step failed: " + sample_error[i] + "; " +
                               dump_batch(batch));

    // Deterministic reduction in sample order.
    ad::GradBuffer grads(model_.params().size());
    ad::Mat dtable;
    double mean_loss = 0.0;
    for (size_t i = 0; i < B; ++i) {
        grads.add_scaled(sample_grads[i], 1.0);
        mean_loss += sample_loss[i] / double(B);
        if (model_.config().use_imagery && sample_dtable[i].size() > 0) {
            if (dtable.size() == 0)
                dtable = sample_dtable[i];
            else
                dtable += sample_dtable[i];
        }
    }

    if (model_.config().use_imagery && dtable.size() > 0) {
        model_.backprop_tile_table([this](int row) -> const TileImage& {
            return data_.image_of_row(row);
        }, table_ctx_, dtable, grads, cfg_.threads);
    }

    const double lr = cfg_.learning_rate * std::pow(cfg_.lr_decay, epoch);
    apply_adam(grads, lr);
    check_params_finite(model_.params());
    return mean_loss;
}

void Trainer::apply_adam(ad::GradBuffer& grads, double lr) {
    ++adam_.step;
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, double(adam_.step));
    const double bc2 = 1.0 - std::pow(b2, double(adam_.step));
    for (size_t p = 0; p < grads.size(); ++p) {
        if (!grads.touched(int(p))) continue;
        ad::Mat& value = model_.params().value(int(p));
        const ad::Mat& g = grads.grad(int(p));
        ad::Mat& m = adam_.m[p];
        ad::Mat& v = adam_.v[p];
        if (m.size() == 0) m = ad::Mat::Zero(value.rows(), value.cols());
        if (v.size() == 0) v = ad::Mat::Zero(value.rows(), value.cols());
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        const ad::Mat mhat = m / bc1;
        const ad::Mat vhat = v / bc2;
        value.array() -= lr * mhat.array() / (vhat.array().sqrt() + cfg_.adam_eps);
    }
}

// --- evaluation over a split -----------------------------------------------

MetricsReport evaluate_model(Model& model, const Dataset& data, Split split,
                             const TrainConfig& cfg, const AblationConfig& ab,
                             std::vector<int>* ranks_out, std::vector<Sample>* samples_out) {
    std::vector<Sample> samples = expand_samples(data, split);
    if (samples.empty()) throw ConfigError("split holds no samples");
    if (samples_out) *samples_out = samples;

    ad::Mat table;
    if (model.config().use_imagery) {
        table = model.build_tile_table([&data](int row) -> const TileImage& {
            return data.image_of_row(row);
        }, data.n_tiles(), cfg.threads);
    } else {
        table = model.params().value(model.tile_table_param());
    }

    ad::Mat leaf_mat(data.leaf_rows.size(), cfg.embed_dim);
    for (size_t r = 0; r < data.leaf_rows.size(); ++r)
        leaf_mat.row(Eigen::Index(r)) = table.row(data.leaf_rows[r]);

    std::vector<int> ranks(samples.size(), 0);
    std::vector<std::string> errors(samples.size());
    std::atomic<size_t> cursor{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = cursor.fetch_add(1);
            if (i >= samples.size()) break;
            try {
                const SampleBinding b =
                    bind_sample(data, samples[i], cfg.embed_dim, model.config().use_st_encoder);
                ad::Tape tape;
                ad::Var tv = tape.constant(table);
                ForwardResult fwd = model.forward(tape, tv, b.seq, b.graph, false, nullptr);
                const Eigen::RowVectorXd h_tile = tape.val(fwd.h_tile).row(0);
                const Eigen::RowVectorXd h_poi = tape.val(fwd.h_poi).row(0);

                std::vector<int64_t> cand;
                if (ab.no_two_step) {
                    cand.resize(size_t(data.n_pois()));
                    for (int p = 0; p < data.n_pois(); ++p) cand[size_t(p)] = p;
                } else {
                    auto tiles = rank_tiles(h_tile, leaf_mat, data.leaf_tiles);
                    const int k = std::min<int>(cfg.top_k, int(tiles.size()));
                    cand = candidate_pois(tiles, k, data.quadtree());
                }

                if (cand.empty()) {
                    // The caller-side fallback for an empty candidate set: a
                    // full miss.
                    ranks[i] = data.n_pois() + 1;
                    continue;
                }
                ad::Mat rows(cand.size(), cfg.embed_dim);
                {
                    ad::Tape ptape;
                    std::vector<int> ids(cand.size()), cates(cand.size());
                    for (size_t c = 0; c < cand.size(); ++c) {
                        ids[c] = static_cast<int>(cand[c]);
                        cates[c] = data.pois[size_t(cand[c])].cate;
                    }
                    ad::Var r = model.poi_embedder().embed(ptape, model.params(), ids, cates);
                    rows = ptape.val(r);
                }
                auto ranking = rank_pois(h_poi, rows, cand);
                ranks[i] = rank_of_target(ranking, b.target_poi);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < cfg.threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (const std::string& e : errors)
        if (!e.empty()) throw NumericError("evaluation failed: " + e);

    if (ranks_out) *ranks_out = ranks;
    return metrics_from_ranks(ranks);
}

// --- fit -----------------------------------------------------------------------

FitResult fit(Model& model, const Dataset& data, const TrainConfig& cfg,
              const AblationConfig& ab) {
    cfg.validate();
    FitResult result;

    std::ostringstream header;
    header << "# seed=" << cfg.seed << " epochs=" << cfg.epochs << " batch_size="
           << cfg.batch_size << " lr=" << cfg.learning_rate << " lr_decay=" << cfg.lr_decay
           << " dropout=" << cfg.dropout << " dm=" << cfg.embed_dim << " depth="
           << cfg.max_depth << " omega=" << cfg.leaf_capacity << " topk=" << cfg.top_k
           << " alpha=" << cfg.alpha << " beta=" << cfg.beta << " s=" << cfg.loss_scale
           << " m=" << cfg.loss_margin << " hgat_layers=" << cfg.hgat_layers
           << " fusion_blocks=" << cfg.fusion_blocks;
    result.log_lines.push_back(header.str());
    result.log_lines.push_back(
        "# epoch\tsplit\trecall@5\trecall@10\trecall@20\tndcg@5\tndcg@10\tndcg@20\tmrr\tloss");

    std::vector<Sample> train = expand_samples(data, Split::Train);
    if (train.empty()) throw ConfigError("training split holds no samples");
    const bool have_valid = !expand_samples(data, Split::Valid).empty();

    Trainer trainer(model, data, cfg, ab);
    std::vector<ad::Mat> best_params;
    bool stop = false;

    for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        Rng shuffle_rng = Rng::stream(cfg.seed, "epoch-shuffle", uint64_t(epoch));
        shuffle_rng.shuffle(train);

        double loss_sum = 0.0;
        size_t n_batches = 0;
        for (size_t off = 0; off < train.size(); off += size_t(cfg.batch_size)) {
            const size_t n = std::min(size_t(cfg.batch_size), train.size() - off);
            loss_sum += trainer.step({train.data() + off, n}, epoch);
            ++n_batches;
        }
        const double mean_loss = loss_sum / double(n_batches);
        result.final_train_loss = mean_loss;
        result.epochs_run = epoch + 1;

        const bool cadence = (epoch % cfg.eval_every == 0) || (epoch == cfg.epochs - 1);
        if (cfg.eval_train_split && cadence) {
            MetricsReport tm = evaluate_model(model, data, Split::Train, cfg, ab);
            result.log_lines.push_back(tm.log_line(epoch, "train", mean_loss));
            if (cfg.stop_train_recall5 > 0 && tm.recall5 >= cfg.stop_train_recall5) stop = true;
        }
        if (have_valid && cadence) {
            MetricsReport vm = evaluate_model(model, data, Split::Valid, cfg, ab);
            result.log_lines.push_back(vm.log_line(epoch, "valid", mean_loss));
            if (vm.mrr > result.best_valid_mrr) {
                result.best_valid_mrr = vm.mrr;
                result.best_valid = vm;
                result.best_epoch = epoch;
                best_params.clear();
                for (size_t p = 0; p < model.params().size(); ++p)
                    best_params.push_back(model.params().value(int(p)));
            }
        }
        if (!have_valid && cadence) {
            MetricsReport dummy;
            dummy.n_samples = 0;
            result.log_lines.push_back(dummy.log_line(epoch, "valid", mean_loss));
        }
    }

    // Leave the model at the best-validation-MRR parameters.
    if (!best_params.empty())
        for (size_t p = 0; p < model.params().size(); ++p)
            model.params().value(int(p)) = best_params[p];
    return result;
}

} // namespace nextpoi
