// Command-line surface for the two-step next-POI pipeline:
//   ingest -> build-index -> train -> evaluate / predict / ablate / sweep-k
//
// Config precedence: command-line flags > --config JSON file > defaults.
// Exit codes: 0 success, 1 runtime numeric failure, 2 input/contract error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "nextpoi/bundle.hpp"
#include "nextpoi/experiments.hpp"
#include "nextpoi/png_io.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace nextpoi;

namespace {

struct RunOptions {
    TrainConfig train;
    AblationConfig ab;

    std::string config_path;
    std::string data_dir; // NEXTPOI_DATA_DIR fallback root
    std::string checkins, roadnet, imagery, bundle, index, checkpoint, out;
    std::string split = "test";
    bool header = false;

    bool synthetic = false;
    int n_pois = 500, n_users = 20, grid = 5, visits = 60;
    int n_categories = 10, n_clusters = 8;

    std::string user, cutoff;
    int limit = 50;
    std::string kvalues = "1,2,4,8,16,32,64";
};

// Keys accepted in a --config file; anything else is rejected.
void apply_config_file(RunOptions& o, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(std::string("config file is not valid JSON: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "seed") o.train.seed = value.get<uint64_t>();
        else if (key == "dm") o.train.embed_dim = value.get<int>();
        else if (key == "depth") o.train.max_depth = value.get<int>();
        else if (key == "omega") o.train.leaf_capacity = value.get<int>();
        else if (key == "topk") o.train.top_k = value.get<int>();
        else if (key == "alpha") o.train.alpha = value.get<double>();
        else if (key == "beta") o.train.beta = value.get<double>();
        else if (key == "scale_s") o.train.loss_scale = value.get<double>();
        else if (key == "margin_m") o.train.loss_margin = value.get<double>();
        else if (key == "epochs") o.train.epochs = value.get<int>();
        else if (key == "lr") o.train.learning_rate = value.get<double>();
        else if (key == "lr_decay") o.train.lr_decay = value.get<double>();
        else if (key == "batch_size") o.train.batch_size = value.get<int>();
        else if (key == "dropout") o.train.dropout = value.get<double>();
        else if (key == "delta_t_hours") o.train.delta_t_hours = value.get<double>();
        else if (key == "hgat_layers") o.train.hgat_layers = value.get<int>();
        else if (key == "fusion_blocks") o.train.fusion_blocks = value.get<int>();
        else if (key == "threads") o.train.threads = value.get<int>();
        else if (key == "conv_channels") {
            auto v = value.get<std::vector<int>>();
            if (v.size() != 3) throw ConfigError("conv_channels needs 3 entries");
            o.train.conv_channels = {v[0], v[1], v[2]};
        } else if (key == "pois") o.n_pois = value.get<int>();
        else if (key == "users") o.n_users = value.get<int>();
        else if (key == "grid") o.grid = value.get<int>();
        else if (key == "visits") o.visits = value.get<int>();
        else if (key == "categories") o.n_categories = value.get<int>();
        else if (key == "clusters") o.n_clusters = value.get<int>();
        else
            throw ConfigError("unknown config key: " + key);
    }
}

json resolved_config(const RunOptions& o) {
    json j;
    j["seed"] = o.train.seed;
    j["dm"] = o.train.embed_dim;
    j["depth"] = o.train.max_depth;
    j["omega"] = o.train.leaf_capacity;
    j["topk"] = o.train.top_k;
    j["alpha"] = o.train.alpha;
    j["beta"] = o.train.beta;
    j["scale_s"] = o.train.loss_scale;
    j["margin_m"] = o.train.loss_margin;
    j["epochs"] = o.train.epochs;
    j["lr"] = o.train.learning_rate;
    j["lr_decay"] = o.train.lr_decay;
    j["batch_size"] = o.train.batch_size;
    j["dropout"] = o.train.dropout;
    j["delta_t_hours"] = o.train.delta_t_hours;
    j["hgat_layers"] = o.train.hgat_layers;
    j["fusion_blocks"] = o.train.fusion_blocks;
    j["threads"] = o.train.threads;
    j["conv_channels"] = {o.train.conv_channels[0], o.train.conv_channels[1],
                          o.train.conv_channels[2]};
    j["synthetic"] = o.synthetic;
    if (o.synthetic) {
        j["pois"] = o.n_pois;
        j["users"] = o.n_users;
        j["grid"] = o.grid;
        j["visits"] = o.visits;
        j["categories"] = o.n_categories;
        j["clusters"] = o.n_clusters;
    }
    json ab;
    ab["grid_replace_quadtree"] = o.ab.grid_replace_quadtree;
    ab["no_two_step"] = o.ab.no_two_step;
    ab["no_graph"] = o.ab.no_graph;
    ab["no_contain_edges"] = o.ab.no_contain_edges;
    ab["no_road_edges"] = o.ab.no_road_edges;
    ab["no_imagery"] = o.ab.no_imagery;
    ab["no_st_encoder"] = o.ab.no_st_encoder;
    ab["no_poi_category"] = o.ab.no_poi_category;
    j["ablation"] = ab;
    return j;
}

void persist_resolved_config(const RunOptions& o, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir + "/resolved_config.json");
    if (!f) throw IoError("cannot write resolved config in " + out_dir);
    f << resolved_config(o).dump(2) << '\n';
}

std::string with_data_dir(const RunOptions& o, const std::string& path) {
    if (path.empty() || path.front() == '/' || o.data_dir.empty()) return path;
    if (fs::exists(path)) return path;
    return o.data_dir + "/" + path;
}

SynthConfig synth_config(const RunOptions& o) {
    SynthConfig sc;
    sc.seed = o.train.seed;
    sc.n_pois = o.n_pois;
    sc.n_users = o.n_users;
    sc.grid_size = o.grid;
    sc.visits_per_user = o.visits;
    sc.n_categories = o.n_categories;
    sc.n_clusters = o.n_clusters;
    sc.max_depth = o.train.max_depth;
    sc.leaf_capacity = o.train.leaf_capacity;
    return sc;
}

void require_path(const std::string& value, const std::string& what) {
    if (value.empty()) throw ConfigError("missing required path: " + what);
    if (!fs::exists(value)) throw IoError("missing prerequisite artifact: " + what + " at " + value);
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "valid") return Split::Valid;
    if (s == "test") return Split::Test;
    throw ConfigError("unknown split: " + s);
}

// --- shared pipeline loading -------------------------------------------------

QuadTree load_tree(const std::string& index_dir) {
    std::ifstream in(index_dir + "/quadtree.txt");
    if (!in) throw IoError("missing prerequisite artifact: quad-tree at " + index_dir);
    return QuadTree::deserialize(in);
}

Dataset load_dataset(const RunOptions& o, const Bundle& bundle, const QuadTree& tree) {
    std::vector<int64_t> tiles = tree.all_tiles();
    TileImageLoadResult imgs = load_tile_images(o.imagery, tiles);
    if (!imgs.placeholder_ids.empty())
        std::cerr << "note: " << imgs.placeholder_ids.size()
                  << " tile image(s) missing, using flagged placeholders\n";
    if (imgs.resampled > 0)
        std::cerr << "note: " << imgs.resampled << " tile image(s) resampled to 256x256\n";
    Dataset data = build_dataset(bundle.pois, bundle.n_categories, bundle.trajectories,
                                 bundle.road, std::move(imgs.images), o.train, o.ab, &tree);
    data.split_of = bundle.splits;
    return data;
}

std::string checkpoint_meta(const RunOptions& o, const Dataset& data) {
    json j = resolved_config(o);
    j["n_pois"] = data.n_pois();
    j["n_categories"] = data.n_categories;
    j["n_tiles"] = data.n_tiles();
    return j.dump();
}

// --- subcommands ----------------------------------------------------------------

int cmd_ingest(const RunOptions& o) {
    Bundle bundle;
    std::map<int64_t, TileImage> images;

    if (o.synthetic) {
        SyntheticWorld world = generate_synthetic_world(synth_config(o));
        bundle.pois = world.pois;
        bundle.n_categories = world.n_categories;
        bundle.road = world.road;
        bundle.trajectories = split_trajectories(world.checkins, o.train.delta_t_hours);
        images = world.images;
    } else {
        require_path(o.checkins, "--checkins");
        require_path(o.roadnet, "--roadnet");
        CheckinSchema schema;
        schema.has_header = o.header;
        CheckinData cd = load_checkins(o.checkins, schema);
        for (const std::string& w : cd.warnings) std::cerr << "warning: " << w << '\n';
        bundle.pois = cd.pois;
        bundle.n_categories = static_cast<int>(cd.n_categories());
        bundle.venue_keys = cd.venue_keys;
        bundle.category_keys = cd.category_keys;
        bundle.user_keys = cd.user_keys;
        bundle.road = load_road_network(o.roadnet).network;
        bundle.trajectories = split_trajectories(cd.checkins, o.train.delta_t_hours);
    }

    std::stable_sort(bundle.trajectories.begin(), bundle.trajectories.end(),
                     [](const Trajectory& a, const Trajectory& b) {
                         if (a.user != b.user) return a.user < b.user;
                         return a.t_begin < b.t_begin;
                     });
    bundle.splits = assign_splits(bundle.trajectories.size(), o.train.seed, o.train.train_frac,
                                  o.train.valid_frac);
    bundle.meta_json = resolved_config(o).dump(2);

    write_bundle(o.out, bundle);
    if (!images.empty()) {
        fs::create_directories(o.out + "/imagery");
        for (const auto& [tid, img] : images)
            write_png_rgb8(o.out + "/imagery/" + std::to_string(tid) + ".png",
                           raw_from_tile(img));
    }
    persist_resolved_config(o, o.out);

    size_t checkins = 0;
    for (const Trajectory& t : bundle.trajectories) checkins += t.records.size();
    std::set<int64_t> users;
    for (const Trajectory& t : bundle.trajectories) users.insert(t.user);
    std::cout << "Check-in & User & POI & Category\n"
              << checkins << " & " << users.size() << " & " << bundle.pois.size() << " & "
              << bundle.n_categories << "\n"
              << "trajectories: " << bundle.trajectories.size() << "\n"
              << "bundle written to " << o.out << "\n";
    return 0;
}

int cmd_build_index(const RunOptions& o) {
    require_path(o.bundle, "--bundle");
    Bundle bundle = read_bundle(o.bundle);
    const RegionBBox bbox = compute_bbox(bundle.pois);

    std::optional<QuadTree> tree;
    if (o.ab.grid_replace_quadtree > 0)
        tree = QuadTree::build_uniform(bundle.pois, bbox, o.ab.grid_replace_quadtree);
    else
        tree = QuadTree::build(bundle.pois, bbox, o.train.max_depth, o.train.leaf_capacity);

    fs::create_directories(o.out);
    {
        std::ofstream f(o.out + "/quadtree.txt");
        if (!f) throw IoError("cannot write quad-tree file");
        tree->serialize(f);
    }
    {
        // Imagery manifest: every tile (leaves and internal) with its cell,
        // for offline fetching.
        std::ofstream f(o.out + "/manifest.txt");
        if (!f) throw IoError("cannot write manifest file");
        f.precision(17);
        for (int64_t tid : tree->all_tiles()) {
            const TileNode& nd = tree->node(tid);
            f << tid << ".png " << nd.bbox.min_lat << ' ' << nd.bbox.max_lat << ' '
              << nd.bbox.min_lon << ' ' << nd.bbox.max_lon << ' '
              << (nd.is_leaf() ? "leaf" : "internal") << '\n';
        }
    }
    persist_resolved_config(o, o.out);
    std::cout << "tiles: " << tree->node_count() << " (" << tree->stats().leaf_nodes
              << " leaves, " << tree->stats().overflow_leaves << " overflow)\n"
              << "index written to " << o.out << "\n";
    return 0;
}

int cmd_train(const RunOptions& o) {
    require_path(o.bundle, "--bundle");
    require_path(o.index, "--index");
    Bundle bundle = read_bundle(o.bundle);
    QuadTree tree = load_tree(o.index);
    Dataset data = load_dataset(o, bundle, tree);

    Model model = make_model(data, o.train, o.ab);
    FitResult result = fit(model, data, o.train, o.ab);

    fs::create_directories(o.out);
    {
        std::ofstream log(o.out + "/train_log.tsv");
        for (const std::string& line : result.log_lines) log << line << '\n';
    }
    // The model ends at the best-validation-MRR parameters; persist them.
    save_checkpoint(o.out + "/checkpoint.npk", model.params(), checkpoint_meta(o, data));
    persist_resolved_config(o, o.out);
    std::cout << "epochs run: " << result.epochs_run << "\n"
              << "best valid MRR: " << result.best_valid_mrr << " (epoch " << result.best_epoch
              << ")\n"
              << "checkpoint written to " << o.out << "/checkpoint.npk\n";
    return 0;
}

int cmd_evaluate(const RunOptions& o) {
    require_path(o.bundle, "--bundle");
    require_path(o.index, "--index");
    require_path(o.checkpoint, "--checkpoint");
    Bundle bundle = read_bundle(o.bundle);
    QuadTree tree = load_tree(o.index);
    Dataset data = load_dataset(o, bundle, tree);

    Model model = make_model(data, o.train, o.ab);
    apply_checkpoint(model.params(), load_checkpoint(o.checkpoint));

    std::vector<int> ranks;
    std::vector<Sample> samples;
    MetricsReport report =
        evaluate_model(model, data, parse_split(o.split), o.train, o.ab, &ranks, &samples);

    fs::create_directories(o.out);
    {
        std::ofstream f(o.out + "/report.txt");
        f << "split " << o.split << '\n' << report.key_value();
    }
    {
        std::ofstream f(o.out + "/report_line.tsv");
        f << report.log_line(0, o.split, 0.0) << '\n';
    }
    {
        // Per-sample ranks for audit.
        std::ofstream f(o.out + "/ranks.tsv");
        f << "traj_index\tprefix_len\ttarget_poi\trank\n";
        for (size_t i = 0; i < samples.size(); ++i)
            f << samples[i].traj_index << '\t' << samples[i].prefix_len << '\t'
              << samples[i].target_poi(data.trajectories) << '\t' << ranks[i] << '\n';
    }
    persist_resolved_config(o, o.out);
    std::cout << report.key_value();
    return 0;
}

int cmd_predict(const RunOptions& o) {
    require_path(o.bundle, "--bundle");
    require_path(o.index, "--index");
    require_path(o.checkpoint, "--checkpoint");
    if (o.user.empty() || o.cutoff.empty())
        throw ConfigError("predict needs --user and --cutoff");

    Bundle bundle = read_bundle(o.bundle);
    QuadTree tree = load_tree(o.index);
    Dataset data = load_dataset(o, bundle, tree);
    Model model = make_model(data, o.train, o.ab);
    apply_checkpoint(model.params(), load_checkpoint(o.checkpoint));

    const int64_t user = std::stoll(o.user);
    const int64_t cutoff = parse_iso8601_utc(o.cutoff);
    auto it = data.user_trajs.find(user);
    if (it == data.user_trajs.end()) throw ConfigError("unknown user id: " + o.user);

    // Current window: the latest one starting at or before the cutoff.
    int current = -1;
    for (int ti : it->second)
        if (data.trajectories[ti].t_begin <= cutoff) current = ti;
    if (current < 0) throw ConfigError("user has no window before the cutoff");
    int prefix_len = 0;
    for (const VisitRecord& r : data.trajectories[current].records)
        if (r.timestamp < cutoff) ++prefix_len;
    if (prefix_len < 1) throw ConfigError("cutoff leaves an empty prefix");
    prefix_len = std::min<int>(prefix_len, int(data.trajectories[current].records.size()) - 1);

    Sample s{int32_t(current), int32_t(prefix_len)};
    const SampleBinding b = bind_sample(data, s, o.train.embed_dim, model.config().use_st_encoder);

    ad::Mat table;
    if (model.config().use_imagery) {
        table = model.build_tile_table(
            [&data](int row) -> const TileImage& { return data.image_of_row(row); },
            data.n_tiles(), o.train.threads);
    } else {
        table = model.params().value(model.tile_table_param());
    }
    ad::Tape tape;
    ad::Var tv = tape.constant(table);
    ForwardResult fwd = model.forward(tape, tv, b.seq, b.graph, false, nullptr);
    const Eigen::RowVectorXd h_tile = tape.val(fwd.h_tile).row(0);
    const Eigen::RowVectorXd h_poi = tape.val(fwd.h_poi).row(0);

    ad::Mat leaf_mat(data.leaf_rows.size(), o.train.embed_dim);
    for (size_t r = 0; r < data.leaf_rows.size(); ++r)
        leaf_mat.row(Eigen::Index(r)) = table.row(data.leaf_rows[r]);
    auto tiles = rank_tiles(h_tile, leaf_mat, data.leaf_tiles);
    const int k = std::min<int>(o.train.top_k, int(tiles.size()));
    std::vector<int64_t> cand = candidate_pois(tiles, k, data.quadtree());

    std::ostream* outp = &std::cout;
    std::ofstream file;
    if (!o.out.empty()) {
        fs::create_directories(fs::path(o.out).parent_path().empty()
                                   ? "."
                                   : fs::path(o.out).parent_path().string());
        file.open(o.out);
        if (!file) throw IoError("cannot write prediction file: " + o.out);
        outp = &file;
    }
    *outp << "# checkpoint=" << o.checkpoint << "\tK=" << k << "\n";
    if (!cand.empty()) {
        ad::Mat rows(cand.size(), o.train.embed_dim);
        {
            ad::Tape ptape;
            std::vector<int> ids(cand.size()), cates(cand.size());
            for (size_t c = 0; c < cand.size(); ++c) {
                ids[c] = int(cand[c]);
                cates[c] = data.pois[size_t(cand[c])].cate;
            }
            rows = ptape.val(model.poi_embedder().embed(ptape, model.params(), ids, cates));
        }
        auto ranking = rank_pois(h_poi, rows, cand);
        const int limit = o.limit > 0 ? std::min<int>(o.limit, int(ranking.size()))
                                      : int(ranking.size());
        outp->precision(10);
        for (int r = 0; r < limit; ++r)
            *outp << (r + 1) << '\t' << ranking[size_t(r)].id << '\t' << ranking[size_t(r)].score
                  << '\t' << data.tree->leaf_of_poi(ranking[size_t(r)].id) << '\n';
    }
    return 0;
}

int cmd_ablate(const RunOptions& o) {
    if (!o.synthetic)
        throw ConfigError("ablate runs on a synthetic world; pass --synthetic");
    SyntheticWorld world = generate_synthetic_world(synth_config(o));
    AblationOutcome outcome = run_ablation(world, o.train, o.ab);

    fs::create_directories(o.out);
    {
        std::ofstream f(o.out + "/ablation.txt");
        f << "full\n" << outcome.full.key_value() << "\nablated\n" << outcome.ablated.key_value()
          << "\ndelta_recall@5 " << outcome.delta_recall5 << "\ndelta_ndcg@5 "
          << outcome.delta_ndcg5 << "\ndelta_mrr " << outcome.delta_mrr << '\n';
    }
    persist_resolved_config(o, o.out);
    std::cout << "full      recall@5=" << outcome.full.recall5 << " mrr=" << outcome.full.mrr
              << "\nablated   recall@5=" << outcome.ablated.recall5
              << " mrr=" << outcome.ablated.mrr << "\ndelta r@5 " << outcome.delta_recall5
              << "\n";
    return 0;
}

int cmd_sweep_k(const RunOptions& o) {
    require_path(o.bundle, "--bundle");
    require_path(o.index, "--index");
    require_path(o.checkpoint, "--checkpoint");
    Bundle bundle = read_bundle(o.bundle);
    QuadTree tree = load_tree(o.index);
    Dataset data = load_dataset(o, bundle, tree);
    Model model = make_model(data, o.train, o.ab);
    apply_checkpoint(model.params(), load_checkpoint(o.checkpoint));

    std::vector<int> ks;
    std::stringstream ss(o.kvalues);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) ks.push_back(std::stoi(tok));
    const int n_leaves = int(data.leaf_tiles.size());
    ks.erase(std::remove_if(ks.begin(), ks.end(), [&](int k) { return k > n_leaves; }), ks.end());
    if (ks.empty()) throw ConfigError("no usable K values for this index");

    auto rows = sweep_top_k(model, data, parse_split(o.split), o.train, ks);

    fs::create_directories(o.out);
    std::ofstream f(o.out + "/sweep_k.tsv");
    f << "K\ttile_recall\tpoi_recall@5\tmean_candidates\n";
    f.precision(10);
    for (const SweepRow& r : rows)
        f << r.k << '\t' << r.tile_recall << '\t' << r.poi_recall5 << '\t' << r.mean_candidates
          << '\n';
    persist_resolved_config(o, o.out);
    std::cout << "sweep over " << rows.size() << " K values written to " << o.out
              << "/sweep_k.tsv\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    RunOptions o;
    if (const char* env = std::getenv("NEXTPOI_DATA_DIR")) o.data_dir = env;

    CLI::App app{"two-step next point-of-interest prediction pipeline"};
    app.require_subcommand(1);

    // Pre-scan for --config so file values sit between defaults and flags.
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") o.config_path = argv[i + 1];
    if (!o.config_path.empty()) {
        try {
            apply_config_file(o, o.config_path);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 2;
        }
    }

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", o.config_path, "JSON config file");
        cmd->add_option("--seed", o.train.seed, "global random seed");
        cmd->add_option("--dm", o.train.embed_dim, "embedding dimension");
        cmd->add_option("--depth", o.train.max_depth, "quad-tree depth cap D");
        cmd->add_option("--omega", o.train.leaf_capacity, "quad-tree leaf capacity");
        cmd->add_option("--topk", o.train.top_k, "tiles kept by the first step");
        cmd->add_option("--alpha", o.train.alpha, "id/category merge ratio");
        cmd->add_option("--beta", o.train.beta, "tile loss weight");
        cmd->add_option("--scale-s", o.train.loss_scale, "loss logit scale");
        cmd->add_option("--margin-m", o.train.loss_margin, "loss angle margin");
        cmd->add_option("--epochs", o.train.epochs, "training epochs");
        cmd->add_option("--lr", o.train.learning_rate, "learning rate");
        cmd->add_option("--lr-decay", o.train.lr_decay, "per-epoch learning-rate decay");
        cmd->add_option("--batch-size", o.train.batch_size, "training batch size");
        cmd->add_option("--dropout", o.train.dropout, "dropout probability");
        cmd->add_option("--delta-t", o.train.delta_t_hours, "trajectory gap threshold, hours");
        cmd->add_option("--threads", o.train.threads, "worker threads");
        cmd->add_option("--hgat-layers", o.train.hgat_layers, "graph attention layers");
        cmd->add_option("--fusion-blocks", o.train.fusion_blocks, "attention blocks per stack");
        cmd->add_flag("--no-imagery", o.ab.no_imagery, "free tile table instead of imagery");
        cmd->add_flag("--no-graph", o.ab.no_graph, "drop the history graph");
        cmd->add_flag("--no-road", o.ab.no_road_edges, "drop road edges");
        cmd->add_flag("--no-contain", o.ab.no_contain_edges, "drop contain edges");
        cmd->add_flag("--no-two-step", o.ab.no_two_step, "bypass the tile selector");
        cmd->add_flag("--no-st-encoder", o.ab.no_st_encoder, "drop spatial/temporal encoders");
        cmd->add_flag("--no-poi-category", o.ab.no_poi_category, "id-only POI embeddings");
        cmd->add_option("--grid-depth", o.ab.grid_replace_quadtree,
                        "replace the quad-tree by a uniform grid of this depth");
    };

    CLI::App* ingest = app.add_subcommand("ingest", "materialize a dataset bundle");
    add_common(ingest);
    ingest->add_option("--checkins", o.checkins, "tab-separated check-in file");
    ingest->add_option("--roadnet", o.roadnet, "road network file");
    ingest->add_flag("--header", o.header, "check-in file has a header row");
    ingest->add_flag("--synthetic", o.synthetic, "generate a synthetic world");
    ingest->add_option("--pois", o.n_pois, "synthetic POI count");
    ingest->add_option("--users", o.n_users, "synthetic user count");
    ingest->add_option("--grid", o.grid, "synthetic road grid size");
    ingest->add_option("--visits", o.visits, "synthetic visits per user");
    ingest->add_option("--categories", o.n_categories, "synthetic category count");
    ingest->add_option("--clusters", o.n_clusters, "synthetic cluster count");
    ingest->add_option("--out", o.out, "output bundle directory")->required();

    CLI::App* index = app.add_subcommand("build-index", "build and serialize the quad-tree");
    add_common(index);
    index->add_option("--bundle", o.bundle, "bundle directory")->required();
    index->add_option("--out", o.out, "output index directory")->required();

    CLI::App* train = app.add_subcommand("train", "fit the model");
    add_common(train);
    train->add_option("--bundle", o.bundle)->required();
    train->add_option("--index", o.index)->required();
    train->add_option("--imagery", o.imagery, "tile imagery directory");
    train->add_option("--out", o.out)->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "metrics over a split");
    add_common(evaluate);
    evaluate->add_option("--bundle", o.bundle)->required();
    evaluate->add_option("--index", o.index)->required();
    evaluate->add_option("--imagery", o.imagery);
    evaluate->add_option("--checkpoint", o.checkpoint)->required();
    evaluate->add_option("--split", o.split, "train|valid|test");
    evaluate->add_option("--out", o.out)->required();

    CLI::App* predict = app.add_subcommand("predict", "rank POIs for a user at a cutoff time");
    add_common(predict);
    predict->add_option("--bundle", o.bundle)->required();
    predict->add_option("--index", o.index)->required();
    predict->add_option("--imagery", o.imagery);
    predict->add_option("--checkpoint", o.checkpoint)->required();
    predict->add_option("--user", o.user, "dense user id")->required();
    predict->add_option("--cutoff", o.cutoff, "ISO-8601 prefix cutoff time")->required();
    predict->add_option("--limit", o.limit, "rows to emit (0 = all)");
    predict->add_option("--out", o.out, "output record file (default stdout)");

    CLI::App* ablate = app.add_subcommand("ablate", "paired full-vs-ablated training");
    add_common(ablate);
    ablate->add_flag("--synthetic", o.synthetic, "generate a synthetic world");
    ablate->add_option("--pois", o.n_pois);
    ablate->add_option("--users", o.n_users);
    ablate->add_option("--grid", o.grid);
    ablate->add_option("--visits", o.visits);
    ablate->add_option("--categories", o.n_categories);
    ablate->add_option("--clusters", o.n_clusters);
    ablate->add_option("--out", o.out)->required();

    CLI::App* sweep = app.add_subcommand("sweep-k", "top-K interaction sweep");
    add_common(sweep);
    sweep->add_option("--bundle", o.bundle)->required();
    sweep->add_option("--index", o.index)->required();
    sweep->add_option("--imagery", o.imagery);
    sweep->add_option("--checkpoint", o.checkpoint)->required();
    sweep->add_option("--split", o.split);
    sweep->add_option("--kvalues", o.kvalues, "comma-separated ascending K list");
    sweep->add_option("--out", o.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        o.checkins = with_data_dir(o, o.checkins);
        o.roadnet = with_data_dir(o, o.roadnet);
        o.bundle = with_data_dir(o, o.bundle);
        o.index = with_data_dir(o, o.index);
        o.checkpoint = with_data_dir(o, o.checkpoint);
        if (o.imagery.empty() && !o.bundle.empty() && fs::exists(o.bundle + "/imagery"))
            o.imagery = o.bundle + "/imagery";
        else
            o.imagery = with_data_dir(o, o.imagery);

        if (ingest->parsed()) return cmd_ingest(o);
        if (index->parsed()) return cmd_build_index(o);
        if (train->parsed()) return cmd_train(o);
        if (evaluate->parsed()) return cmd_evaluate(o);
        if (predict->parsed()) return cmd_predict(o);
        if (ablate->parsed()) return cmd_ablate(o);
        if (sweep->parsed()) return cmd_sweep_k(o);
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
