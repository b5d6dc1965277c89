#include "sonodetect/gbm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "sonodetect/rng.hpp"

namespace sono::gbm {

namespace {

double sigmoid(double z) {
    // Clamp so predictions stay strictly inside (0,1) in double precision.
    z = std::clamp(z, -34.0, 34.0);
    return 1.0 / (1.0 + std::exp(-z));
}

} // namespace

void GbmConfig::validate() const {
    if (!(shrinkage > 0.0) || shrinkage > 1.0) throw UsageError("gbm: shrinkage must be in (0,1]");
    if (!(sampling > 0.0) || sampling > 1.0) throw UsageError("gbm: sampling must be in (0,1]");
    if (max_depth < 1) throw UsageError("gbm: max depth must be >= 1");
    if (iterations < 1) throw UsageError("gbm: iterations must be >= 1");
    if (min_samples_leaf < 1) throw UsageError("gbm: min samples per leaf must be >= 1");
}

double RegressionTree::eval(std::span<const double> x) const {
    int i = 0;
    for (;;) {
        const TreeNode& node = nodes[i];
        if (node.is_leaf()) return node.value;
        i = x[node.feature] <= node.threshold ? node.left : node.right;
    }
}

double GbmModel::decision(std::span<const double> x) const {
    double acc = f0;
    for (const RegressionTree& tree : stages) acc += config.shrinkage * tree.eval(x);
    return acc;
}

namespace {

// Boundary scan over one feature's node rows, already sorted by value (ties
// by row index). Updates best in place; lower feature index and lower
// threshold win ties through the strict gain comparison and scan order.
void scan_feature_for_split(const FeatureMatrix& x, int feature, std::span<const int> sorted_rows,
                            std::span<const double> residuals, double total, double parent_score,
                            int min_samples_leaf, SplitResult& best) {
    const int n = static_cast<int>(sorted_rows.size());
    double left_sum = 0.0;
    for (int i = 0; i + 1 < n; ++i) {
        left_sum += residuals[sorted_rows[i]];
        const double a = x.at(sorted_rows[i], feature);
        const double b = x.at(sorted_rows[i + 1], feature);
        if (a == b) continue; // not a boundary
        const int n_left = i + 1;
        const int n_right = n - n_left;
        if (n_left < min_samples_leaf || n_right < min_samples_leaf) continue;
        const double right_sum = total - left_sum;
        const double gain =
            left_sum * left_sum / n_left + right_sum * right_sum / n_right - parent_score;
        double thr = 0.5 * (a + b);
        if (!(thr < b)) thr = a; // midpoint collapsed in float
        if (gain > best.gain) best = {true, feature, thr, gain};
    }
}

} // namespace

SplitResult split_search(const FeatureMatrix& x, std::span<const int> rows,
                         std::span<const double> residuals, int min_samples_leaf) {
    SplitResult best;
    const int n = static_cast<int>(rows.size());
    if (n < 2) return best;

    double total = 0.0;
    for (const int r : rows) total += residuals[r];
    const double parent_score = total * total / n;

    std::vector<int> order(rows.begin(), rows.end());
    for (int f = 0; f < x.cols; ++f) {
        std::sort(order.begin(), order.end(), [&](int lhs, int rhs) {
            const double a = x.at(lhs, f);
            const double b = x.at(rhs, f);
            return a < b || (a == b && lhs < rhs);
        });
        scan_feature_for_split(x, f, order, residuals, total, parent_score, min_samples_leaf, best);
    }
    return best;
}

namespace {

// Depth-limited builder working off per-feature row lists that stay sorted
// by feature value; children filter their parent's lists instead of
// re-sorting, which keeps wide feature banks (the ~2000 Haar features)
// affordable. Split choices are identical to split_search by construction:
// the boundary scan is the shared scan_feature_for_split.
struct TreeBuilder {
    const FeatureMatrix& x;
    const std::vector<double>& residuals;
    const std::vector<double>& hessians;
    int max_depth;
    int min_leaf;
    std::vector<char> side; // scratch, row -> goes-left flag
    RegressionTree tree;

    int build(const std::vector<int>& rows, const std::vector<std::vector<int>>& lists, int depth) {
        const int idx = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();

        SplitResult split;
        if (depth < max_depth && rows.size() >= 2) {
            double total = 0.0;
            for (const int r : rows) total += residuals[r];
            const double parent_score = total * total / static_cast<double>(rows.size());
            for (int f = 0; f < x.cols; ++f)
                scan_feature_for_split(x, f, lists[f], residuals, total, parent_score, min_leaf,
                                       split);
        }

        if (!split.found) {
            double num = 0.0;
            double den = 0.0;
            for (const int r : rows) {
                num += residuals[r];
                den += hessians[r];
            }
            tree.nodes[idx].value = num / std::max(den, 1e-12);
            return idx;
        }

        std::vector<int> left_rows;
        std::vector<int> right_rows;
        for (const int r : rows) {
            const bool goes_left = x.at(r, split.feature) <= split.threshold;
            side[r] = goes_left;
            (goes_left ? left_rows : right_rows).push_back(r);
        }
        std::vector<std::vector<int>> left_lists(x.cols);
        std::vector<std::vector<int>> right_lists(x.cols);
        for (int f = 0; f < x.cols; ++f) {
            left_lists[f].reserve(left_rows.size());
            right_lists[f].reserve(right_rows.size());
            for (const int r : lists[f]) (side[r] ? left_lists[f] : right_lists[f]).push_back(r);
        }

        tree.nodes[idx].feature = split.feature;
        tree.nodes[idx].threshold = split.threshold;
        const int li = build(left_rows, left_lists, depth + 1);
        tree.nodes[idx].left = li;
        const int ri = build(right_rows, right_lists, depth + 1);
        tree.nodes[idx].right = ri;
        return idx;
    }
};

} // namespace

GbmModel fit(const FeatureMatrix& x, std::span<const int> labels, const GbmConfig& cfg,
             std::vector<double>* loss_history) {
    cfg.validate();
    const int n = x.rows;
    if (n < 2) throw DataError("gbm fit: need at least two samples");
    if (x.cols < 1) throw DataError("gbm fit: need at least one feature");
    if (static_cast<int>(labels.size()) != n) throw UsageError("gbm fit: label count mismatch");
    int positives = 0;
    for (const int y : labels) {
        if (y != 0 && y != 1) throw DataError("gbm fit: labels must be 0 or 1");
        positives += y;
    }
    if (positives == 0 || positives == n) throw DataError("gbm fit: both classes must be present");
    for (const double v : x.v)
        if (!std::isfinite(v)) throw DataError("gbm fit: non-finite feature value");

    GbmModel model;
    model.config = cfg;
    model.dim = x.cols;
    const double base = std::clamp(static_cast<double>(positives) / n, 1e-6, 1.0 - 1e-6);
    model.f0 = std::log(base / (1.0 - base));

    std::vector<double> score(n, model.f0);
    std::vector<double> residuals(n, 0.0);
    std::vector<double> hessians(n, 0.0);
    std::vector<int> all_rows(n);
    std::iota(all_rows.begin(), all_rows.end(), 0);
    const int m = static_cast<int>(std::ceil(cfg.sampling * n));

    // Each feature's rows sorted by (value, row) once; per-iteration trees
    // filter these instead of sorting again.
    std::vector<std::vector<int>> global_order(x.cols, all_rows);
    for (int f = 0; f < x.cols; ++f)
        std::sort(global_order[f].begin(), global_order[f].end(), [&](int lhs, int rhs) {
            const double a = x.at(lhs, f);
            const double b = x.at(rhs, f);
            return a < b || (a == b && lhs < rhs);
        });

    std::vector<char> in_sample(n, 1);
    if (loss_history) loss_history->clear();
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        // Subsample without replacement, reseeded per iteration so draws are
        // independent of any evaluation order.
        std::vector<int> rows = all_rows;
        std::vector<std::vector<int>> root_lists;
        if (m < n) {
            Rng rng(cfg.seed + static_cast<std::uint64_t>(iter));
            rng.shuffle(rows);
            rows.resize(m);
            std::sort(rows.begin(), rows.end());
            std::fill(in_sample.begin(), in_sample.end(), 0);
            for (const int r : rows) in_sample[r] = 1;
            root_lists.assign(x.cols, {});
            for (int f = 0; f < x.cols; ++f) {
                root_lists[f].reserve(rows.size());
                for (const int r : global_order[f])
                    if (in_sample[r]) root_lists[f].push_back(r);
            }
        }
        for (const int r : rows) {
            const double p = sigmoid(score[r]);
            residuals[r] = labels[r] - p;
            hessians[r] = p * (1.0 - p);
        }

        TreeBuilder builder{x,        residuals, hessians, cfg.max_depth, cfg.min_samples_leaf,
                            std::vector<char>(n, 0), {}};
        builder.build(rows, m < n ? root_lists : global_order, 0);
        RegressionTree tree = std::move(builder.tree);

        for (int r = 0; r < n; ++r) score[r] += cfg.shrinkage * tree.eval(x.row(r));
        model.stages.push_back(std::move(tree));

        if (loss_history) {
            double loss = 0.0;
            for (int r = 0; r < n; ++r) {
                const double p = std::clamp(sigmoid(score[r]), 1e-15, 1.0 - 1e-15);
                loss -= labels[r] == 1 ? std::log(p) : std::log(1.0 - p);
            }
            loss_history->push_back(loss / n);
        }
    }
    return model;
}

double predict(const GbmModel& model, std::span<const double> x) {
    if (static_cast<int>(x.size()) != model.dim)
        throw UsageError("gbm predict: feature dimension mismatch");
    return sigmoid(model.decision(x));
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
    put_u32(out, static_cast<std::uint32_t>(v));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

class BinReader {
public:
    BinReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    bool done() const { return pos_ == size_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_) throw DataError("model file truncated");
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

constexpr char kGbmMagic[6] = {'S', 'D', 'G', 'B', 'M', '1'};

} // namespace

void save_model(const GbmModel& model, const std::filesystem::path& path) {
    std::vector<std::uint8_t> out(kGbmMagic, kGbmMagic + 6);
    put_f64(out, model.config.shrinkage);
    put_f64(out, model.config.sampling);
    put_u32(out, static_cast<std::uint32_t>(model.config.max_depth));
    put_u32(out, static_cast<std::uint32_t>(model.config.iterations));
    put_u64(out, model.config.seed);
    put_u32(out, static_cast<std::uint32_t>(model.config.min_samples_leaf));
    put_u32(out, static_cast<std::uint32_t>(model.dim));
    put_f64(out, model.f0);
    put_u32(out, static_cast<std::uint32_t>(model.stages.size()));
    for (const RegressionTree& tree : model.stages) {
        put_u32(out, static_cast<std::uint32_t>(tree.nodes.size()));
        for (const TreeNode& node : tree.nodes) {
            put_i32(out, node.feature);
            put_f64(out, node.threshold);
            put_i32(out, node.left);
            put_i32(out, node.right);
            put_f64(out, node.value);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

GbmModel load_model(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kGbmMagic, 6) != 0)
        throw DataError("not an SDGBM1 model (unknown magic/version)");
    BinReader rd(bytes.data() + 6, bytes.size() - 6);

    GbmModel model;
    model.config.shrinkage = rd.f64();
    model.config.sampling = rd.f64();
    model.config.max_depth = static_cast<int>(rd.u32());
    model.config.iterations = static_cast<int>(rd.u32());
    model.config.seed = rd.u64();
    model.config.min_samples_leaf = static_cast<int>(rd.u32());
    model.dim = static_cast<int>(rd.u32());
    model.f0 = rd.f64();
    const std::uint32_t n_stages = rd.u32();
    if (model.dim < 1 || n_stages > 1u << 20) throw DataError("SDGBM1: bad header");
    for (std::uint32_t s = 0; s < n_stages; ++s) {
        const std::uint32_t n_nodes = rd.u32();
        if (n_nodes == 0 || n_nodes > 1u << 20) throw DataError("SDGBM1: bad node count");
        RegressionTree tree;
        for (std::uint32_t i = 0; i < n_nodes; ++i) {
            TreeNode node;
            node.feature = rd.i32();
            node.threshold = rd.f64();
            node.left = rd.i32();
            node.right = rd.i32();
            node.value = rd.f64();
            if (!node.is_leaf()) {
                if (node.feature < 0 || node.feature >= model.dim ||
                    node.left >= static_cast<int>(n_nodes) || node.right >= static_cast<int>(n_nodes))
                    throw DataError("SDGBM1: malformed tree node");
            } else if (!std::isfinite(node.value)) {
                throw DataError("SDGBM1: non-finite leaf value");
            }
            tree.nodes.push_back(node);
        }
        model.stages.push_back(std::move(tree));
    }
    if (!rd.done()) throw DataError("SDGBM1: trailing bytes");
    return model;
}

} // namespace sono::gbm
