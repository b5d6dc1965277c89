#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sonodetect/errors.hpp"

namespace sono::gbm {

// Dense row-major feature matrix.
struct FeatureMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    FeatureMatrix() = default;
    FeatureMatrix(int rows_, int cols_)
        : rows(rows_), cols(cols_), v(static_cast<std::size_t>(rows_) * cols_, 0.0) {}

    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    std::span<const double> row(int r) const {
        return {v.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }
};

struct GbmConfig {
    double shrinkage = 0.5;
    double sampling = 0.5;
    int max_depth = 2; // root at depth 0, so at most 4 leaves
    int iterations = 200;
    std::uint64_t seed = 0;
    int min_samples_leaf = 1;

    void validate() const;
};

struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0; // leaf value (raw Newton step; shrinkage applied at accumulation)

    bool is_leaf() const { return left < 0; }
};

struct RegressionTree {
    std::vector<TreeNode> nodes; // node 0 is the root

    double eval(std::span<const double> x) const;
};

struct GbmModel {
    GbmConfig config;
    int dim = 0;
    double f0 = 0.0; // log-odds of the clipped base rate
    std::vector<RegressionTree> stages;

    // Summed decision value before the logistic link.
    double decision(std::span<const double> x) const;
};

struct SplitResult {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

// Exhaustive scan over all features and midpoints between consecutive sorted
// unique values, maximizing variance-reduction gain on the residuals. Ties
// break to the lower feature index, then the lower threshold. Rows whose
// features are all identical produce no split.
SplitResult split_search(const FeatureMatrix& x, std::span<const int> rows,
                         std::span<const double> residuals, int min_samples_leaf);

// Binary logistic-loss gradient boosting with depth-limited trees and Newton
// leaf steps, row-subsampled per iteration. Deterministic in (data, config).
// loss_history, when given, receives the full-training-set log-loss after
// each iteration.
GbmModel fit(const FeatureMatrix& x, std::span<const int> labels, const GbmConfig& cfg,
             std::vector<double>* loss_history = nullptr);

// Likelihood strictly inside (0,1).
double predict(const GbmModel& model, std::span<const double> x);

// Versioned binary container, magic "SDGBM1".
void save_model(const GbmModel& model, const std::filesystem::path& path);
GbmModel load_model(const std::filesystem::path& path);

} // namespace sono::gbm
