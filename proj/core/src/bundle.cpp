#include "nextpoi/bundle.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nextpoi/common.hpp"

namespace nextpoi {

namespace fs = std::filesystem;

namespace {

Split split_from_string(const std::string& s, long line) {
    if (s == "train") return Split::Train;
    if (s == "valid") return Split::Valid;
    if (s == "test") return Split::Test;
    throw ParseError("unknown split tag '" + s + "'", line);
}

} // namespace

void write_bundle(const std::string& dir, const Bundle& bundle) {
    fs::create_directories(dir);

    {
        std::ofstream out(dir + "/pois.tsv");
        if (!out) throw IoError("cannot write " + dir + "/pois.tsv");
        out.precision(17);
        for (size_t i = 0; i < bundle.pois.size(); ++i) {
            const Poi& p = bundle.pois[i];
            const std::string& vk =
                i < bundle.venue_keys.size() ? bundle.venue_keys[i] : std::to_string(p.id);
            out << p.id << '\t' << vk << '\t' << p.cate << '\t' << p.loc.lat << '\t' << p.loc.lon
                << '\n';
        }
    }
    {
        std::ofstream out(dir + "/categories.tsv");
        if (!out) throw IoError("cannot write " + dir + "/categories.tsv");
        for (size_t i = 0; i < size_t(bundle.n_categories); ++i)
            out << i << '\t'
                << (i < bundle.category_keys.size() ? bundle.category_keys[i] : std::to_string(i))
                << '\n';
    }
    {
        std::ofstream out(dir + "/users.tsv");
        if (!out) throw IoError("cannot write " + dir + "/users.tsv");
        for (size_t i = 0; i < bundle.user_keys.size(); ++i)
            out << i << '\t' << bundle.user_keys[i] << '\n';
    }
    {
        std::ofstream out(dir + "/trajectories.tsv");
        if (!out) throw IoError("cannot write " + dir + "/trajectories.tsv");
        for (size_t t = 0; t < bundle.trajectories.size(); ++t) {
            const Trajectory& traj = bundle.trajectories[t];
            for (const VisitRecord& r : traj.records)
                out << t << '\t' << traj.user << '\t' << r.poi_id << '\t' << r.timestamp << '\n';
        }
    }
    {
        std::ofstream out(dir + "/splits.tsv");
        if (!out) throw IoError("cannot write " + dir + "/splits.tsv");
        for (size_t t = 0; t < bundle.splits.size(); ++t)
            out << t << '\t' << to_string(bundle.splits[t]) << '\n';
    }
    save_road_network(dir + "/roadnet.txt", bundle.road);
    {
        std::ofstream out(dir + "/meta.json");
        if (!out) throw IoError("cannot write " + dir + "/meta.json");
        out << bundle.meta_json;
    }
}

Bundle read_bundle(const std::string& dir) {
    Bundle b;
    {
        std::ifstream in(dir + "/pois.tsv");
        if (!in) throw IoError("bundle is missing pois.tsv: " + dir);
        std::string line;
        long lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream ls(line);
            Poi p;
            std::string venue_key;
            if (!(ls >> p.id >> venue_key >> p.cate >> p.loc.lat >> p.loc.lon))
                throw ParseError("malformed POI record", lineno);
            if (p.id != int64_t(b.pois.size()))
                throw ParseError("POI ids must be dense and ascending", lineno);
            b.pois.push_back(p);
            b.venue_keys.push_back(venue_key);
        }
    }
    {
        std::ifstream in(dir + "/categories.tsv");
        if (!in) throw IoError("bundle is missing categories.tsv: " + dir);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            int64_t id;
            std::string key;
            ls >> id >> key;
            b.category_keys.push_back(key);
        }
        b.n_categories = static_cast<int>(b.category_keys.size());
    }
    if (fs::exists(dir + "/users.tsv")) {
        std::ifstream in(dir + "/users.tsv");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            int64_t id;
            std::string key;
            ls >> id >> key;
            b.user_keys.push_back(key);
        }
    }
    {
        std::ifstream in(dir + "/trajectories.tsv");
        if (!in) throw IoError("bundle is missing trajectories.tsv: " + dir);
        std::string line;
        long lineno = 0;
        int64_t cur = -1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream ls(line);
            int64_t tid, user, poi, ts;
            if (!(ls >> tid >> user >> poi >> ts))
                throw ParseError("malformed trajectory record", lineno);
            if (tid != cur) {
                if (tid != int64_t(b.trajectories.size()))
                    throw ParseError("trajectory ids must be dense and ascending", lineno);
                cur = tid;
                Trajectory t;
                t.user = user;
                b.trajectories.push_back(t);
            }
            b.trajectories.back().records.push_back(VisitRecord{poi, ts});
        }
        for (Trajectory& t : b.trajectories) {
            if (t.records.size() < 2) throw ParseError("trajectory shorter than 2 records");
            t.t_begin = t.records.front().timestamp;
            t.t_end = t.records.back().timestamp + 1;
        }
    }
    {
        std::ifstream in(dir + "/splits.tsv");
        if (!in) throw IoError("bundle is missing splits.tsv: " + dir);
        b.splits.assign(b.trajectories.size(), Split::Test);
        std::string line;
        long lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream ls(line);
            int64_t tid;
            std::string tag;
            if (!(ls >> tid >> tag)) throw ParseError("malformed split record", lineno);
            if (tid < 0 || tid >= int64_t(b.splits.size()))
                throw ParseError("split references unknown trajectory", lineno);
            b.splits[size_t(tid)] = split_from_string(tag, lineno);
        }
    }
    b.road = load_road_network(dir + "/roadnet.txt").network;
    {
        std::ifstream in(dir + "/meta.json");
        if (in) {
            std::ostringstream ss;
            ss << in.rdbuf();
            b.meta_json = ss.str();
        }
    }
    return b;
}

} // namespace nextpoi
