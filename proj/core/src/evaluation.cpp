#include "nextpoi/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "nextpoi/common.hpp"

namespace nextpoi {

void MetricsReport::validate() const {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!(in_unit(recall5) && in_unit(recall10) && in_unit(recall20) && in_unit(ndcg5) &&
          in_unit(ndcg10) && in_unit(ndcg20) && in_unit(mrr)))
        throw NumericError("metric outside [0, 1]");
    if (recall5 > recall10 + 1e-12 || recall10 > recall20 + 1e-12)
        throw NumericError("recall must be non-decreasing in K");
    if (ndcg5 > recall5 + 1e-12 || ndcg10 > recall10 + 1e-12 || ndcg20 > recall20 + 1e-12)
        throw NumericError("ndcg@k cannot exceed recall@k");
}

std::string MetricsReport::log_line(int epoch, const std::string& split, double loss) const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d\t%s\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f",
                  epoch, split.c_str(), recall5, recall10, recall20, ndcg5, ndcg10, ndcg20, mrr,
                  loss);
    return buf;
}

std::string MetricsReport::key_value() const {
    std::ostringstream os;
    os.precision(10);
    os << "n_samples " << n_samples << '\n'
       << "recall@5 " << recall5 << '\n'
       << "recall@10 " << recall10 << '\n'
       << "recall@20 " << recall20 << '\n'
       << "ndcg@5 " << ndcg5 << '\n'
       << "ndcg@10 " << ndcg10 << '\n'
       << "ndcg@20 " << ndcg20 << '\n'
       << "mrr " << mrr << '\n';
    return os.str();
}

int rank_of_target(std::span<const ScoredId> ranking, int64_t target) {
    for (size_t i = 0; i < ranking.size(); ++i)
        if (ranking[i].id == target) return static_cast<int>(i) + 1;
    return static_cast<int>(ranking.size()) + 1;
}

MetricsReport metrics_from_ranks(std::span<const int> ranks) {
    if (ranks.empty()) throw ConfigError("cannot compute metrics over zero ranks");
    MetricsReport m;
    m.n_samples = ranks.size();
    for (int r : ranks) {
        if (r < 1) throw ConfigError("ranks are 1-based");
        const double gain = 1.0 / std::log2(double(r) + 1.0);
        if (r <= 5) {
            m.recall5 += 1;
            m.ndcg5 += gain;
        }
        if (r <= 10) {
            m.recall10 += 1;
            m.ndcg10 += gain;
        }
        if (r <= 20) {
            m.recall20 += 1;
            m.ndcg20 += gain;
        }
        m.mrr += 1.0 / double(r);
    }
    const double n = double(ranks.size());
    m.recall5 /= n;
    m.recall10 /= n;
    m.recall20 /= n;
    m.ndcg5 /= n;
    m.ndcg10 /= n;
    m.ndcg20 /= n;
    m.mrr /= n;
    m.validate();
    return m;
}

} // namespace nextpoi
