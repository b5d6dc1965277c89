#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sonodetect/convnet.hpp"
#include "sonodetect/filters.hpp"
#include "sonodetect/gbm.hpp"
#include "sonodetect/pipeline.hpp"
#include "sonodetect/synthdata.hpp"

namespace sono::config {

// Whole-run configuration in a sectioned "key = value" text format. Seeds are
// deliberately absent: they arrive only through explicit --seed flags.
struct RunConfig {
    synth::PhantomParams phantom;
    pipeline::SweepConfig sweep;
    pipeline::LabelConfig label;

    struct Pretrain {
        int samples = 500;
        int classes = 4;
        cnn::TrainConfig train{100, 0.5, 5e-4, 0.1, 30, 0};
    } pretrain;

    cnn::TrainConfig adapt{100, 0.5, 5e-4, 0.01, 8, 0};
    gbm::GbmConfig gbm;
    filters::FrangiConfig frangi;
    filters::PhaseCongruencyConfig pc;

    pipeline::ExperimentConfig experiment() const {
        return {sweep, label, adapt, gbm};
    }
};

// Unknown sections or keys are rejected. serialize(parse(s)) is canonical:
// parsing it again yields the same structure and the same text.
std::string serialize_config(const RunConfig& cfg);
RunConfig parse_config(const std::string& text);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double v);

// Feature matrix CSV: header "label,f0..f{d-1}", one row per patch.
struct LabeledFeatures {
    gbm::FeatureMatrix x;
    std::vector<int> labels;
};

void save_feature_matrix(const LabeledFeatures& data, const std::filesystem::path& path);
LabeledFeatures load_feature_matrix(const std::filesystem::path& path);

// Filter-change CSV: one row per filter per layer (empty change when the
// before-filter had zero norm), then per-layer summary comment lines.
void write_filter_change_csv(const cnn::FilterChangeReport& report,
                             const std::filesystem::path& path);

// Correlation CSV: name_a,name_b,pearson (empty cell when undefined).
void write_correlations_csv(const filters::ResponsePanel& panel,
                            const std::filesystem::path& path);

} // namespace sono::config
