#include "nextpoi/geodata.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "nextpoi/common.hpp"
#include "nextpoi/png_io.hpp"
#include "nextpoi/rng.hpp"

namespace nextpoi {

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
int64_t days_from_civil(int64_t y, int m, int d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const int64_t yoe = y - era * 400;
    const int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

void civil_from_days(int64_t z, int64_t& y, int& m, int& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const int64_t doe = z - era * 146097;
    const int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = yoe + era * 400;
    const int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const int64_t mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y += m <= 2;
}

int parse_int_field(const std::string& s, size_t pos, size_t len, long line) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
    if (ec != std::errc() || p != s.data() + pos + len)
        throw ParseError("bad numeric field in timestamp '" + s + "'", line);
    return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    // Trim trailing carriage return from the last field (CRLF files).
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
    return out;
}

} // namespace

int64_t parse_iso8601_utc(const std::string& text, long line) {
    // YYYY-MM-DD[T ]HH:MM:SS[.frac][Z|+HH:MM|-HH:MM]
    const std::string& s = text;
    if (s.size() < 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') ||
        s[13] != ':' || s[16] != ':')
        throw ParseError("unrecognized timestamp format '" + s + "'", line);

    const int year = parse_int_field(s, 0, 4, line);
    const int month = parse_int_field(s, 5, 2, line);
    const int day = parse_int_field(s, 8, 2, line);
    const int hour = parse_int_field(s, 11, 2, line);
    const int minute = parse_int_field(s, 14, 2, line);
    const int second = parse_int_field(s, 17, 2, line);
    if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second > 60)
        throw ParseError("timestamp field out of range '" + s + "'", line);

    size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    int64_t offset = 0;
    if (pos < s.size()) {
        const char c = s[pos];
        if (c == 'Z' && pos + 1 == s.size()) {
            // UTC
        } else if ((c == '+' || c == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
            const int oh = parse_int_field(s, pos + 1, 2, line);
            const int om = parse_int_field(s, pos + 4, 2, line);
            offset = (c == '+' ? 1 : -1) * (oh * 3600ll + om * 60ll);
        } else {
            throw ParseError("unrecognized timestamp suffix '" + s + "'", line);
        }
    }

    const int64_t days = days_from_civil(year, month, day);
    return days * 86400 + hour * 3600ll + minute * 60ll + second - offset;
}

std::string format_iso8601_utc(int64_t epoch_seconds) {
    int64_t days = epoch_seconds / 86400;
    int64_t rem = epoch_seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    int64_t y;
    int m, d;
    civil_from_days(days, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04lld-%02d-%02dT%02d:%02d:%02dZ",
                  static_cast<long long>(y), m, d, int(rem / 3600), int((rem % 3600) / 60),
                  int(rem % 60));
    return buf;
}

CheckinData load_checkins(const std::string& path, const CheckinSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open check-in file: " + path);

    const int max_col = std::max({schema.user_col, schema.venue_col, schema.cate_col,
                                  schema.lat_col, schema.lon_col, schema.time_col});

    CheckinData out;
    std::unordered_map<std::string, int64_t> user_ids;
    std::unordered_map<std::string, int64_t> venue_ids;
    std::unordered_map<std::string, int32_t> cate_ids;

    struct RawRow {
        int64_t user;
        int64_t poi;
        int64_t ts;
        size_t order;
    };
    std::vector<RawRow> rows;

    std::string line;
    long lineno = 0;
    bool header_pending = schema.has_header;
    while (std::getline(in, line)) {
        ++lineno;
        if (header_pending) {
            header_pending = false;
            continue;
        }
        if (line.empty()) continue;
        auto fields = split_tabs(line);
        if (static_cast<int>(fields.size()) <= max_col) {
            out.warnings.push_back("line " + std::to_string(lineno) + ": expected " +
                                   std::to_string(max_col + 1) + " columns, got " +
                                   std::to_string(fields.size()));
            ++out.skipped_rows;
            continue;
        }

        double lat = 0.0, lon = 0.0;
        try {
            lat = std::stod(fields[schema.lat_col]);
            lon = std::stod(fields[schema.lon_col]);
        } catch (const std::exception&) {
            out.warnings.push_back("line " + std::to_string(lineno) + ": bad coordinate");
            ++out.skipped_rows;
            continue;
        }
        if (!(lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0)) {
            out.warnings.push_back("line " + std::to_string(lineno) + ": coordinate out of range");
            ++out.skipped_rows;
            continue;
        }

        // A timestamp that does not parse is fatal: silently mis-read times
        // would corrupt every downstream window.
        const int64_t ts = parse_iso8601_utc(fields[schema.time_col], lineno);

        const std::string& user_key = fields[schema.user_col];
        const std::string& venue_key = fields[schema.venue_col];
        const std::string& cate_key = fields[schema.cate_col];

        auto [uit, user_new] = user_ids.try_emplace(user_key, int64_t(out.user_keys.size()));
        if (user_new) out.user_keys.push_back(user_key);

        auto [cit, cate_new] = cate_ids.try_emplace(cate_key, int32_t(out.category_keys.size()));
        if (cate_new) out.category_keys.push_back(cate_key);

        auto [vit, venue_new] = venue_ids.try_emplace(venue_key, int64_t(out.venue_keys.size()));
        if (venue_new) {
            out.venue_keys.push_back(venue_key);
            out.pois.push_back(Poi{vit->second, GeoPoint{lat, lon}, cit->second});
        }

        rows.push_back(RawRow{uit->second, vit->second, ts, rows.size()});
    }

    std::sort(rows.begin(), rows.end(), [](const RawRow& a, const RawRow& b) {
        if (a.user != b.user) return a.user < b.user;
        if (a.ts != b.ts) return a.ts < b.ts;
        return a.order < b.order; // equal timestamps keep file order
    });
    out.checkins.reserve(rows.size());
    for (const RawRow& r : rows) out.checkins.push_back(CheckIn{r.user, r.poi, r.ts});
    return out;
}

std::vector<Trajectory> split_trajectories(std::span<const CheckIn> sorted_checkins,
                                           double delta_t_hours) {
    if (delta_t_hours <= 0.0) throw ConfigError("trajectory gap threshold must be positive");
    const double gap_seconds = delta_t_hours * 3600.0;

    std::vector<Trajectory> out;
    Trajectory cur;
    auto flush = [&]() {
        if (cur.records.size() >= 2) {
            cur.t_begin = cur.records.front().timestamp;
            cur.t_end = cur.records.back().timestamp + 1;
            out.push_back(std::move(cur));
        }
        cur = Trajectory{};
    };

    for (size_t i = 0; i < sorted_checkins.size(); ++i) {
        const CheckIn& c = sorted_checkins[i];
        const bool same_user = !cur.records.empty() && cur.user == c.user;
        const bool gap_ok =
            same_user &&
            double(c.timestamp - cur.records.back().timestamp) < gap_seconds;
        if (!same_user || !gap_ok) {
            flush();
            cur.user = c.user;
        }
        cur.records.push_back(VisitRecord{c.poi_id, c.timestamp});
    }
    flush();
    return out;
}

NormalizedXY normalize_coords(const GeoPoint& loc, const RegionBBox& bbox) {
    if (!bbox.valid()) throw ConfigError("cannot normalize against a degenerate bbox");
    NormalizedXY r;
    double lon = loc.lon, lat = loc.lat;
    if (lon < bbox.min_lon || lon > bbox.max_lon || lat < bbox.min_lat || lat > bbox.max_lat) {
        r.clamped = true;
        lon = std::clamp(lon, bbox.min_lon, bbox.max_lon);
        lat = std::clamp(lat, bbox.min_lat, bbox.max_lat);
    }
    r.x = (lon - bbox.min_lon) / bbox.lon_span();
    r.y = (lat - bbox.min_lat) / bbox.lat_span();
    return r;
}

RegionBBox compute_bbox(std::span<const Poi> pois) {
    if (pois.empty()) throw ConfigError("cannot compute a bbox over zero POIs");
    RegionBBox b{90.0, -90.0, 180.0, -180.0};
    for (const Poi& p : pois) {
        b.min_lat = std::min(b.min_lat, p.loc.lat);
        b.max_lat = std::max(b.max_lat, p.loc.lat);
        b.min_lon = std::min(b.min_lon, p.loc.lon);
        b.max_lon = std::max(b.max_lon, p.loc.lon);
    }
    // Degenerate axes (all POIs collinear) get a token span.
    if (b.min_lat == b.max_lat) b.max_lat = b.min_lat + 1e-6;
    if (b.min_lon == b.max_lon) b.max_lon = b.min_lon + 1e-6;
    return b;
}

RoadLoadResult load_road_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open road network file: " + path);

    RoadLoadResult out;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "N") {
            int64_t id;
            double lat, lon;
            if (!(ls >> id >> lat >> lon)) throw ParseError("malformed node record", lineno);
            out.network.nodes[id] = GeoPoint{lat, lon};
        } else if (tag == "E") {
            int64_t a, b;
            if (!(ls >> a >> b)) throw ParseError("malformed edge record", lineno);
            if (a == b || !out.network.nodes.count(a) || !out.network.nodes.count(b)) {
                ++out.dropped_edges;
                continue;
            }
            out.network.edges.emplace_back(a, b);
        } else {
            throw ParseError("unknown road record tag '" + tag + "'", lineno);
        }
    }
    if (out.network.nodes.empty()) throw ParseError("road network file has zero nodes");
    return out;
}

void save_road_network(const std::string& path, const RoadNetwork& net) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write road network file: " + path);
    out.precision(17);
    for (const auto& [id, loc] : net.nodes) out << "N " << id << ' ' << loc.lat << ' ' << loc.lon << '\n';
    for (const auto& [a, b] : net.edges) out << "E " << a << ' ' << b << '\n';
}

TileImage placeholder_tile_image(int64_t tile_id) {
    TileImage t;
    t.tile_id = tile_id;
    t.pixels.resize(TileImage::pixel_count());
    Rng rng = Rng::stream(0x9d2c5680, "tile-placeholder", uint64_t(tile_id));
    // Flat gray with hash noise: recognizable as "no data", carries no
    // density information.
    for (int y = 0; y < TileImage::kSize; ++y)
        for (int x = 0; x < TileImage::kSize; ++x) {
            const float v = 0.5f + 0.02f * float(rng.uniform() - 0.5);
            for (int c = 0; c < 3; ++c) t.at(y, x, c) = v;
        }
    return t;
}

TileImageLoadResult load_tile_images(const std::string& dir, std::span<const int64_t> tile_ids) {
    TileImageLoadResult out;
    for (int64_t tid : tile_ids) {
        const std::string path = dir + "/" + std::to_string(tid) + ".png";
        if (!std::filesystem::exists(path)) {
            out.images[tid] = placeholder_tile_image(tid);
            out.placeholder_ids.push_back(tid);
            continue;
        }
        bool resampled = false;
        out.images[tid] = tile_from_raw(read_png_rgb8(path), tid, &resampled);
        if (resampled) ++out.resampled;
    }
    return out;
}

} // namespace nextpoi
