#include "sonodetect/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "sonodetect/parallel.hpp"
#include "sonodetect/rng.hpp"

namespace sono::pipeline {

void SweepConfig::validate() const {
    if (!(length_min_mm > 0.0) || !(length_max_mm >= length_min_mm))
        throw UsageError("sweep: bad length range");
    if (!(width_min_mm > 0.0) || !(width_max_mm >= width_min_mm))
        throw UsageError("sweep: bad width range");
    if (stride_px < 1) throw UsageError("sweep: stride must be >= 1");
    if (size_steps < 1) throw UsageError("sweep: size steps must be >= 1");
    if (patch_size < 8) throw UsageError("sweep: patch size too small");
}

namespace {

std::vector<int> size_grid_px(double min_mm, double max_mm, double spacing, int steps) {
    std::vector<int> sizes;
    for (int i = 0; i < steps; ++i) {
        const double t = steps > 1 ? static_cast<double>(i) / (steps - 1) : 0.5;
        const double mm = min_mm + (max_mm - min_mm) * t;
        const int px = std::max(1, static_cast<int>(std::lround(mm / spacing)));
        if (sizes.empty() || sizes.back() != px) sizes.push_back(px);
    }
    return sizes;
}

} // namespace

std::vector<Candidate> sweep(const imaging::Image& image, const SweepConfig& cfg) {
    cfg.validate();
    const double spacing = image.spacing();
    const std::vector<int> widths =
        size_grid_px(cfg.length_min_mm, cfg.length_max_mm, spacing, cfg.size_steps);
    const std::vector<int> heights =
        size_grid_px(cfg.width_min_mm, cfg.width_max_mm, spacing, cfg.size_steps);

    std::vector<std::pair<int, int>> sizes;
    for (const int w : widths)
        for (const int h : heights) {
            if (w > image.width() || h > image.height()) continue;
            const double aspect = static_cast<double>(w) / h;
            if (aspect < cfg.aspect_min() - 1e-9 || aspect > cfg.aspect_max() + 1e-9) continue;
            sizes.emplace_back(w, h);
        }
    if (sizes.empty())
        throw UsageError("sweep: no admissible candidate size fits the field of view");

    std::vector<imaging::Roi> rois;
    for (int y = 0; y + 1 <= image.height(); y += cfg.stride_px)
        for (int x = 0; x + 1 <= image.width(); x += cfg.stride_px)
            for (const auto& [w, h] : sizes)
                if (x + w <= image.width() && y + h <= image.height())
                    rois.push_back(imaging::Roi{x, y, w, h});
    if (rois.empty())
        throw UsageError("sweep: no admissible candidate size fits the field of view");

    std::vector<Candidate> cands(rois.size());
    parallel_for(rois.size(), [&](std::size_t i) {
        cands[i].roi = rois[i];
        cands[i].patch = imaging::resample(imaging::crop(image, rois[i]), cfg.patch_size,
                                           cfg.patch_size);
    });
    return cands;
}

std::vector<Candidate> label_candidates(std::vector<Candidate> cands, const imaging::Roi& gt,
                                        const LabelConfig& cfg) {
    if (!gt.valid()) throw UsageError("label_candidates: invalid ground truth");
    if (!(cfg.dsc_threshold >= 0.0 && cfg.dsc_threshold <= 1.0))
        throw UsageError("label_candidates: threshold must be in [0,1]");
    std::size_t positives = 0;
    for (Candidate& c : cands) {
        const int y = imaging::dice(c.roi, gt) >= cfg.dsc_threshold ? 1 : 0;
        c.label = y;
        positives += y;
    }
    if (cfg.neg_per_pos <= 0.0) return cands;

    const std::size_t negatives = cands.size() - positives;
    const std::size_t cap = static_cast<std::size_t>(
        std::ceil(cfg.neg_per_pos * static_cast<double>(std::max<std::size_t>(positives, 1))));
    if (negatives <= cap) return cands;

    std::vector<std::size_t> neg_idx;
    neg_idx.reserve(negatives);
    for (std::size_t i = 0; i < cands.size(); ++i)
        if (*cands[i].label == 0) neg_idx.push_back(i);
    Rng rng(cfg.seed);
    rng.shuffle(neg_idx);
    neg_idx.resize(cap);
    std::sort(neg_idx.begin(), neg_idx.end());

    std::vector<Candidate> kept;
    kept.reserve(positives + cap);
    std::size_t next_neg = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        if (*cands[i].label == 1) {
            kept.push_back(std::move(cands[i]));
        } else if (next_neg < neg_idx.size() && neg_idx[next_neg] == i) {
            kept.push_back(std::move(cands[i]));
            ++next_neg;
        }
    }
    return kept;
}

DetectionResult detect_scored(const std::vector<Candidate>& cands,
                              const std::vector<double>& scores) {
    if (cands.empty()) throw UsageError("detect: empty candidate set");
    if (cands.size() != scores.size()) throw UsageError("detect: score count mismatch");

    int best_pos = -1;
    int best_any = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] > scores[best_any]) best_any = static_cast<int>(i);
        if (scores[i] >= 0.5 && (best_pos < 0 || scores[i] > scores[best_pos]))
            best_pos = static_cast<int>(i);
    }
    DetectionResult result;
    result.confident = best_pos >= 0;
    const int pick = result.confident ? best_pos : best_any;
    result.best = cands[pick].roi;
    result.likelihood = scores[pick];
    result.likelihoods = scores;
    return result;
}

std::vector<double> score_candidates(const std::vector<Candidate>& cands, const Featurizer& feat,
                                     const gbm::GbmModel& model) {
    std::vector<double> scores(cands.size(), 0.0);
    parallel_for(cands.size(), [&](std::size_t i) {
        scores[i] = gbm::predict(model, feat(cands[i].patch));
    });
    return scores;
}

DetectionResult detect(const imaging::Image& image, const SweepConfig& cfg, const Featurizer& feat,
                       const gbm::GbmModel& model) {
    const std::vector<Candidate> cands = sweep(image, cfg);
    return detect_scored(cands, score_candidates(cands, feat, model));
}

DetectionResult hybrid_detect(const imaging::Image& image, const SweepConfig& cfg,
                              const Featurizer& feat_a, const gbm::GbmModel& model_a,
                              const Featurizer& feat_b, const gbm::GbmModel& model_b) {
    const std::vector<Candidate> cands = sweep(image, cfg);
    const std::vector<double> sa = score_candidates(cands, feat_a, model_a);
    const std::vector<double> sb = score_candidates(cands, feat_b, model_b);
    std::vector<double> avg(sa.size());
    for (std::size_t i = 0; i < sa.size(); ++i) avg[i] = 0.5 * (sa[i] + sb[i]);
    return detect_scored(cands, avg);
}

DetectionReport evaluate(const std::vector<imaging::Roi>& gts, const std::vector<Detection>& dets,
                         const std::string& method) {
    if (gts.size() != dets.size()) throw UsageError("evaluate: gt/detection count mismatch");
    if (gts.empty()) throw UsageError("evaluate: empty input");
    DetectionReport report;
    report.method = method;
    double sum = 0.0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        PerImageResult r;
        r.gt = gts[i];
        r.detected = dets[i].roi;
        r.likelihood = dets[i].likelihood;
        r.confident = dets[i].confident;
        r.dice = imaging::dice(r.detected, r.gt);
        sum += r.dice;
        if (r.dice < kFailureDice) ++report.failures;
        report.per_image.push_back(r);
    }
    report.average_dice = sum / static_cast<double>(gts.size());
    return report;
}

Method method_from_string(const std::string& s) {
    if (s == "haar") return Method::Haar;
    if (s == "cnn_fa") return Method::CnnFA;
    if (s == "cnn_pa") return Method::CnnPA;
    if (s == "cnn_na") return Method::CnnNA;
    if (s == "hybrid") return Method::Hybrid;
    throw UsageError("unknown method: " + s);
}

std::string method_to_string(Method m) {
    switch (m) {
        case Method::Haar: return "haar";
        case Method::CnnFA: return "cnn_fa";
        case Method::CnnPA: return "cnn_pa";
        case Method::CnnNA: return "cnn_na";
        case Method::Hybrid: return "hybrid";
    }
    throw InternalError("bad method");
}

LoadedDataset load_dataset(const synth::DatasetManifest& manifest,
                           const std::filesystem::path& root) {
    LoadedDataset ds;
    for (const auto& entry : manifest.entries) {
        ds.images.push_back(imaging::load_pgm(root / entry.path));
        if (!ds.images.back().contains(entry.gt))
            throw DataError("dataset: ground truth out of bounds for " + entry.path);
        ds.gts.push_back(entry.gt);
        ds.names.push_back(entry.path);
    }
    return ds;
}

TrainingPatches build_training_patches(const LoadedDataset& ds, const SweepConfig& sweep_cfg,
                                       const LabelConfig& label_cfg) {
    TrainingPatches out;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        LabelConfig per_image = label_cfg;
        per_image.seed = label_cfg.seed + i;
        std::vector<Candidate> labeled =
            label_candidates(sweep(ds.images[i], sweep_cfg), ds.gts[i], per_image);
        for (Candidate& c : labeled) {
            out.patches.push_back(std::move(c.patch));
            out.labels.push_back(*c.label);
        }
    }
    return out;
}

namespace {

Featurizer make_haar_featurizer(const haar::HaarBank& bank) {
    return [&bank](const imaging::Image& patch) {
        return haar::extract(imaging::IntegralImage(patch), bank);
    };
}

Featurizer make_cnn_featurizer(const cnn::ConvNet& net) {
    return [&net](const imaging::Image& patch) { return cnn::extract_features(net, patch); };
}

gbm::GbmModel fit_on_features(const TrainingPatches& train, const Featurizer& feat,
                              const gbm::GbmConfig& cfg) {
    if (train.patches.empty()) throw DataError("experiment: no training patches");
    const std::vector<double> probe = feat(train.patches[0]);
    gbm::FeatureMatrix x(static_cast<int>(train.patches.size()), static_cast<int>(probe.size()));
    parallel_for(train.patches.size(), [&](std::size_t i) {
        const std::vector<double> f = feat(train.patches[i]);
        std::copy(f.begin(), f.end(), x.v.begin() + static_cast<std::size_t>(i) * x.cols);
    });
    return gbm::fit(x, train.labels, cfg);
}

} // namespace

std::map<Method, DetectionReport> run_methods(const LoadedDataset& train, const LoadedDataset& val,
                                              const std::vector<Method>& methods,
                                              const ExperimentConfig& cfg,
                                              const cnn::ConvNet* pretrained) {
    if (methods.empty()) throw UsageError("run_methods: no methods requested");
    bool need_haar = false;
    bool need_fa = false;
    bool need_pa = false;
    bool need_na = false;
    for (const Method m : methods) {
        need_haar |= m == Method::Haar || m == Method::Hybrid;
        need_fa |= m == Method::CnnFA || m == Method::Hybrid;
        need_pa |= m == Method::CnnPA;
        need_na |= m == Method::CnnNA;
    }
    if ((need_fa || need_pa || need_na) && pretrained == nullptr)
        throw UsageError("run_methods: cnn methods need a pretrained source net");

    const TrainingPatches patches = build_training_patches(train, cfg.sweep, cfg.label);

    haar::HaarBank bank;
    gbm::GbmModel model_haar;
    if (need_haar) {
        bank = haar::build_bank(cfg.sweep.patch_size);
        model_haar = fit_on_features(patches, make_haar_featurizer(bank), cfg.gbm);
    }

    cnn::ConvNet net_fa;
    cnn::ConvNet net_pa;
    cnn::ConvNet net_na;
    gbm::GbmModel model_fa;
    gbm::GbmModel model_pa;
    gbm::GbmModel model_na;
    auto build_cnn = [&](cnn::Regime regime, cnn::ConvNet& net, gbm::GbmModel& model) {
        net = cnn::adapt(*pretrained, regime, patches.patches, patches.labels, cfg.adapt_train);
        model = fit_on_features(patches, make_cnn_featurizer(net), cfg.gbm);
    };
    if (need_fa) build_cnn(cnn::Regime::FullAdapt, net_fa, model_fa);
    if (need_pa) build_cnn(cnn::Regime::PartialAdapt, net_pa, model_pa);
    if (need_na) build_cnn(cnn::Regime::NoAdapt, net_na, model_na);

    std::map<Method, std::vector<Detection>> detections;
    for (std::size_t i = 0; i < val.images.size(); ++i) {
        const std::vector<Candidate> cands = sweep(val.images[i], cfg.sweep);
        std::vector<double> s_haar;
        std::vector<double> s_fa;
        std::vector<double> s_pa;
        std::vector<double> s_na;
        if (need_haar) s_haar = score_candidates(cands, make_haar_featurizer(bank), model_haar);
        if (need_fa) s_fa = score_candidates(cands, make_cnn_featurizer(net_fa), model_fa);
        if (need_pa) s_pa = score_candidates(cands, make_cnn_featurizer(net_pa), model_pa);
        if (need_na) s_na = score_candidates(cands, make_cnn_featurizer(net_na), model_na);
        for (const Method m : methods) {
            DetectionResult res;
            switch (m) {
                case Method::Haar: res = detect_scored(cands, s_haar); break;
                case Method::CnnFA: res = detect_scored(cands, s_fa); break;
                case Method::CnnPA: res = detect_scored(cands, s_pa); break;
                case Method::CnnNA: res = detect_scored(cands, s_na); break;
                case Method::Hybrid: {
                    std::vector<double> avg(cands.size());
                    for (std::size_t k = 0; k < cands.size(); ++k)
                        avg[k] = 0.5 * (s_haar[k] + s_fa[k]);
                    res = detect_scored(cands, avg);
                    break;
                }
            }
            detections[m].push_back({res.best, res.likelihood, res.confident});
        }
    }

    std::map<Method, DetectionReport> reports;
    for (const Method m : methods)
        reports[m] = evaluate(val.gts, detections[m], method_to_string(m));
    return reports;
}

DetectionReport run_experiment(const synth::DatasetManifest& train_manifest,
                               const synth::DatasetManifest& val_manifest,
                               const std::filesystem::path& train_root,
                               const std::filesystem::path& val_root, Method method,
                               const ExperimentConfig& cfg, const cnn::ConvNet* pretrained) {
    const LoadedDataset train = load_dataset(train_manifest, train_root);
    const LoadedDataset val = load_dataset(val_manifest, val_root);
    return run_methods(train, val, {method}, cfg, pretrained).at(method);
}

void write_report_csv(const DetectionReport& report, const std::vector<std::string>& names,
                      const std::filesystem::path& path) {
    if (!names.empty() && names.size() != report.per_image.size())
        throw UsageError("write_report_csv: name count mismatch");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "image,gt_x,gt_y,gt_w,gt_h,det_x,det_y,det_w,det_h,likelihood,confident,dice\n";
    char buf[64];
    for (std::size_t i = 0; i < report.per_image.size(); ++i) {
        const PerImageResult& r = report.per_image[i];
        out << (names.empty() ? "image_" + std::to_string(i) : names[i]) << ',' << r.gt.x << ','
            << r.gt.y << ',' << r.gt.w << ',' << r.gt.h << ',' << r.detected.x << ','
            << r.detected.y << ',' << r.detected.w << ',' << r.detected.h << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", r.likelihood);
        out << buf << ',' << (r.confident ? 1 : 0) << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", r.dice);
        out << buf << '\n';
    }
    std::snprintf(buf, sizeof(buf), "%.6f", report.average_dice);
    out << "# method=" << report.method << " avg_dice=" << buf << " failures=" << report.failures
        << " n=" << report.per_image.size() << '\n';
    if (!out) throw DataError("write failed: " + path.string());
}

imaging::Image overlay_detection(const imaging::Image& image, const imaging::Roi& roi) {
    if (!image.contains(roi)) throw UsageError("overlay: ROI out of bounds");
    imaging::Image out = image;
    for (int x = roi.x; x < roi.x + roi.w; ++x) {
        out.at(x, roi.y) = 1.0;
        out.at(x, roi.y + roi.h - 1) = 1.0;
    }
    for (int y = roi.y; y < roi.y + roi.h; ++y) {
        out.at(roi.x, y) = 1.0;
        out.at(roi.x + roi.w - 1, y) = 1.0;
    }
    return out;
}

} // namespace sono::pipeline
