#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sonodetect/convnet.hpp"
#include "sonodetect/gbm.hpp"
#include "sonodetect/imaging.hpp"
#include "sonodetect/synthdata.hpp"
#include "sonodetect/texture.hpp"

namespace sono::pipeline {

// Candidate ROI grid: positions on a pixel stride, sizes spanning the
// clinical mm ranges (candidate width covers kidney length, candidate height
// kidney width) converted through the image spacing.
struct SweepConfig {
    double length_min_mm = 75.0;
    double length_max_mm = 140.0;
    double width_min_mm = 35.0;
    double width_max_mm = 70.0;
    int stride_px = 4;
    int size_steps = 4; // per axis
    int patch_size = 32;

    double aspect_min() const { return length_min_mm / width_max_mm; }
    double aspect_max() const { return length_max_mm / width_min_mm; }
    void validate() const;
};

struct Candidate {
    imaging::Roi roi;
    imaging::Image patch; // resampled crop at canonical size
    std::optional<double> likelihood;
    std::optional<int> label;
};

// Deterministic order: row-major position (y, then x), then size pair.
// Throws when no admissible size fits the field of view.
std::vector<Candidate> sweep(const imaging::Image& image, const SweepConfig& cfg);

struct LabelConfig {
    double dsc_threshold = 0.8;
    // Seeded cap on negatives: keep ceil(neg_per_pos * max(1, positives)).
    // Non-positive disables subsampling.
    double neg_per_pos = 3.0;
    std::uint64_t seed = 0;
};

// Sets Y = 1 iff dice(roi, gt) >= threshold, then subsamples negatives.
// Sweep order is preserved in the returned list.
std::vector<Candidate> label_candidates(std::vector<Candidate> cands, const imaging::Roi& gt,
                                        const LabelConfig& cfg);

using Featurizer = std::function<std::vector<double>(const imaging::Image& patch)>;

struct DetectionResult {
    imaging::Roi best;
    double likelihood = 0.0;
    bool confident = false; // true iff some candidate had Y = 1 (L >= 0.5)
    std::vector<double> likelihoods; // per candidate, sweep order
};

// Argmax of likelihood over positively classified candidates; falls back to
// the global argmax (confident = false) when no candidate clears 0.5. Ties
// break to the earliest candidate in sweep order.
DetectionResult detect_scored(const std::vector<Candidate>& cands,
                              const std::vector<double>& scores);

std::vector<double> score_candidates(const std::vector<Candidate>& cands, const Featurizer& feat,
                                     const gbm::GbmModel& model);

DetectionResult detect(const imaging::Image& image, const SweepConfig& cfg, const Featurizer& feat,
                       const gbm::GbmModel& model);

// Averages the two likelihood maps over the identical sweep, then applies
// the detect rule.
DetectionResult hybrid_detect(const imaging::Image& image, const SweepConfig& cfg,
                              const Featurizer& feat_a, const gbm::GbmModel& model_a,
                              const Featurizer& feat_b, const gbm::GbmModel& model_b);

struct Detection {
    imaging::Roi roi;
    double likelihood = 0.0;
    bool confident = false;
};

struct PerImageResult {
    imaging::Roi gt;
    imaging::Roi detected;
    double likelihood = 0.0;
    bool confident = false;
    double dice = 0.0;
};

struct DetectionReport {
    std::string method;
    std::vector<PerImageResult> per_image;
    double average_dice = 0.0;
    int failures = 0; // images with dice strictly below 0.80
};

constexpr double kFailureDice = 0.80;

DetectionReport evaluate(const std::vector<imaging::Roi>& gts, const std::vector<Detection>& dets,
                         const std::string& method);

enum class Method { Haar, CnnFA, CnnPA, CnnNA, Hybrid };

Method method_from_string(const std::string& s);
std::string method_to_string(Method m);

struct ExperimentConfig {
    SweepConfig sweep;
    LabelConfig label;
    cnn::TrainConfig adapt_train{100, 0.5, 5e-4, 0.01, 8, 0};
    gbm::GbmConfig gbm;
};

struct LoadedDataset {
    std::vector<imaging::Image> images;
    std::vector<imaging::Roi> gts;
    std::vector<std::string> names;
};

LoadedDataset load_dataset(const synth::DatasetManifest& manifest,
                           const std::filesystem::path& root);

struct TrainingPatches {
    std::vector<imaging::Image> patches;
    std::vector<int> labels;
};

TrainingPatches build_training_patches(const LoadedDataset& ds, const SweepConfig& sweep_cfg,
                                       const LabelConfig& label_cfg);

// Full chain for one or more methods on shared sweeps: label training
// candidates, fit per-method GBMs on Haar or adapted-CNN features, detect on
// validation, evaluate. Hybrid averages the Haar and CnnFA likelihood maps.
// cnn methods require a pretrained source-task net.
std::map<Method, DetectionReport> run_methods(const LoadedDataset& train, const LoadedDataset& val,
                                              const std::vector<Method>& methods,
                                              const ExperimentConfig& cfg,
                                              const cnn::ConvNet* pretrained);

DetectionReport run_experiment(const synth::DatasetManifest& train_manifest,
                               const synth::DatasetManifest& val_manifest,
                               const std::filesystem::path& train_root,
                               const std::filesystem::path& val_root, Method method,
                               const ExperimentConfig& cfg, const cnn::ConvNet* pretrained);

// Report CSV: image,gt_x,gt_y,gt_w,gt_h,det_x,det_y,det_w,det_h,likelihood,
// confident,dice rows plus a trailing summary line.
void write_report_csv(const DetectionReport& report, const std::vector<std::string>& names,
                      const std::filesystem::path& path);

// Detected ROI border burned in at intensity 1.0.
imaging::Image overlay_detection(const imaging::Image& image, const imaging::Roi& roi);

} // namespace sono::pipeline
