#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sonodetect/config.hpp"
#include "sonodetect/convnet.hpp"
#include "sonodetect/filters.hpp"
#include "sonodetect/gbm.hpp"
#include "sonodetect/imaging.hpp"
#include "sonodetect/pipeline.hpp"
#include "sonodetect/synthdata.hpp"
#include "sonodetect/texture.hpp"

namespace fs = std::filesystem;
using namespace sono;

namespace {

config::RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return config::RunConfig{};
    return config::load_config(path);
}

std::string format_summary(double avg_dice, int failures) {
    std::string s = config::format_double(avg_dice);
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
        s += ".0";
    return "avg_dice=" + s + ",failures=" + std::to_string(failures);
}

double train_accuracy(const cnn::ConvNet& net, const std::vector<imaging::Image>& patches,
                      const std::vector<int>& labels) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const std::vector<double> scores = cnn::forward(net, patches[i]);
        const int pred = static_cast<int>(
            std::max_element(scores.begin(), scores.end()) - scores.begin());
        hits += pred == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(patches.size());
}

void cmd_gen(const std::string& out_dir, int n_train, int n_val, std::uint64_t seed,
             const std::string& config_path) {
    if (n_train < 1 || n_val < 1) throw UsageError("gen: --train and --val must be >= 1");
    const config::RunConfig cfg = load_run_config(config_path);
    const fs::path dir(out_dir);
    fs::create_directories(dir);

    synth::DatasetManifest train =
        synth::generate_dataset(n_train, seed, cfg.phantom, "train", dir);
    synth::save_manifest(train, dir / "train_manifest.csv");
    synth::DatasetManifest val = synth::generate_dataset(
        n_val, seed + static_cast<std::uint64_t>(n_train), cfg.phantom, "validation", dir);
    synth::save_manifest(val, dir / "val_manifest.csv");
    std::cout << "wrote " << n_train << " train and " << n_val << " validation phantoms to "
              << dir.string() << "\n";
}

void cmd_pretrain(const std::string& out_path, std::uint64_t seed, const std::string& config_path) {
    const config::RunConfig cfg = load_run_config(config_path);
    const std::vector<synth::LabeledPatch> data =
        synth::generate_source_task(cfg.pretrain.samples, seed, cfg.pretrain.classes);
    std::vector<imaging::Image> patches;
    std::vector<int> labels;
    for (const auto& lp : data) {
        patches.push_back(lp.patch);
        labels.push_back(lp.label);
    }
    cnn::ConvNet net = cnn::ConvNet::init(cnn::default_net_config(cfg.pretrain.classes), seed + 1);
    cnn::TrainConfig tc = cfg.pretrain.train;
    tc.seed = seed + 2;
    const cnn::TrainResult result = cnn::train(net, patches, labels, tc);
    cnn::save_net(net, out_path);
    std::cout << "pretrained on " << patches.size() << " source patches, final loss "
              << config::format_double(result.epoch_loss.back()) << ", train accuracy "
              << config::format_double(train_accuracy(net, patches, labels)) << "\n";
}

pipeline::TrainingPatches patches_from_manifest(const std::string& manifest_path,
                                                const config::RunConfig& cfg, std::uint64_t seed) {
    const fs::path mpath(manifest_path);
    const synth::DatasetManifest manifest = synth::load_manifest(mpath);
    const pipeline::LoadedDataset ds = pipeline::load_dataset(manifest, mpath.parent_path());
    pipeline::LabelConfig label_cfg = cfg.label;
    label_cfg.seed = seed;
    return pipeline::build_training_patches(ds, cfg.sweep, label_cfg);
}

void cmd_adapt(const std::string& net_path, const std::string& manifest_path,
               const std::string& regime_str, const std::string& out_path,
               const std::string& change_csv, std::uint64_t seed, const std::string& config_path) {
    const config::RunConfig cfg = load_run_config(config_path);
    const cnn::Regime regime = cnn::regime_from_string(regime_str);
    const cnn::ConvNet pretrained = cnn::load_net(net_path);
    pipeline::TrainingPatches tp = patches_from_manifest(manifest_path, cfg, seed);

    cnn::TrainConfig tc = cfg.adapt;
    tc.seed = seed + 1;
    int classes = 2;
    for (const int y : tp.labels) classes = std::max(classes, y + 1);
    cnn::ConvNet before = pretrained;
    before.reinit_head(classes, tc.seed);

    const cnn::ConvNet after = cnn::adapt(pretrained, regime, tp.patches, tp.labels, tc);
    cnn::save_net(after, out_path);

    const cnn::FilterChangeReport report = cnn::filter_change(before, after);
    if (!change_csv.empty()) config::write_filter_change_csv(report, change_csv);
    std::cout << "adapted (" << cnn::regime_to_string(regime) << ") on " << tp.patches.size()
              << " patches\n";
    for (const auto& layer : report.layers)
        std::cout << layer.name << ": " << layer.over_threshold << " filters over "
                  << config::format_double(report.threshold * 100.0) << "% change\n";
}

void cmd_features(const std::string& manifest_path, const std::string& featurizer,
                  const std::string& net_path, const std::string& out_path, std::uint64_t seed,
                  const std::string& config_path) {
    const config::RunConfig cfg = load_run_config(config_path);
    pipeline::TrainingPatches tp = patches_from_manifest(manifest_path, cfg, seed);

    config::LabeledFeatures data;
    data.labels = tp.labels;
    if (featurizer == "haar") {
        const haar::HaarBank bank = haar::build_bank(cfg.sweep.patch_size);
        data.x = gbm::FeatureMatrix(static_cast<int>(tp.patches.size()),
                                    static_cast<int>(bank.features.size()));
        for (std::size_t i = 0; i < tp.patches.size(); ++i) {
            const std::vector<double> f = haar::extract(imaging::IntegralImage(tp.patches[i]), bank);
            std::copy(f.begin(), f.end(), data.x.v.begin() + i * f.size());
        }
    } else if (featurizer == "cnn") {
        if (net_path.empty()) throw UsageError("features: --net is required for the cnn featurizer");
        const cnn::ConvNet net = cnn::load_net(net_path);
        data.x = gbm::FeatureMatrix(static_cast<int>(tp.patches.size()), net.config().feat_dim);
        for (std::size_t i = 0; i < tp.patches.size(); ++i) {
            const std::vector<double> f = cnn::extract_features(net, tp.patches[i]);
            std::copy(f.begin(), f.end(), data.x.v.begin() + i * f.size());
        }
    } else {
        throw UsageError("features: unknown featurizer '" + featurizer + "' (haar|cnn)");
    }
    config::save_feature_matrix(data, out_path);
    std::cout << "wrote " << data.x.rows << " x " << data.x.cols << " feature matrix\n";
}

void cmd_train_gbm(const std::string& features_path, const std::string& out_path,
                   std::uint64_t seed, const std::string& config_path) {
    const config::RunConfig run_cfg = load_run_config(config_path);
    const config::LabeledFeatures data = config::load_feature_matrix(features_path);
    gbm::GbmConfig cfg = run_cfg.gbm;
    cfg.seed = seed;
    std::vector<double> losses;
    const gbm::GbmModel model = gbm::fit(data.x, data.labels, cfg, &losses);
    gbm::save_model(model, out_path);
    std::cout << "fit gbm on " << data.x.rows << " rows, final log-loss "
              << config::format_double(losses.back()) << "\n";
}

void cmd_detect(const std::string& manifest_path, const std::string& method_str,
                const std::string& gbm_path, const std::string& net_path,
                const std::string& gbm2_path, const std::string& net2_path,
                const std::string& out_path, const std::string& overlay_dir,
                const std::string& config_path) {
    const config::RunConfig cfg = load_run_config(config_path);
    const pipeline::Method method = pipeline::method_from_string(method_str);
    const fs::path mpath(manifest_path);
    const synth::DatasetManifest manifest = synth::load_manifest(mpath);
    const pipeline::LoadedDataset ds = pipeline::load_dataset(manifest, mpath.parent_path());

    const haar::HaarBank bank = haar::build_bank(cfg.sweep.patch_size);
    cnn::ConvNet net;
    cnn::ConvNet net2;
    auto make_featurizer = [&](const std::string& path, cnn::ConvNet& slot) -> pipeline::Featurizer {
        if (path.empty())
            return [&bank](const imaging::Image& p) {
                return haar::extract(imaging::IntegralImage(p), bank);
            };
        slot = cnn::load_net(path);
        return [&slot](const imaging::Image& p) { return cnn::extract_features(slot, p); };
    };

    const bool is_cnn = method == pipeline::Method::CnnFA || method == pipeline::Method::CnnPA ||
                        method == pipeline::Method::CnnNA;
    if (is_cnn && net_path.empty()) throw UsageError("detect: cnn methods require --net");
    if (method == pipeline::Method::Haar && !net_path.empty())
        throw UsageError("detect: --net does not apply to the haar method");
    if (method == pipeline::Method::Hybrid && gbm2_path.empty())
        throw UsageError("detect: hybrid requires --gbm2 (and --net2 for the cnn side)");

    const gbm::GbmModel model = gbm::load_model(gbm_path);
    const pipeline::Featurizer feat = make_featurizer(net_path, net);

    gbm::GbmModel model2;
    pipeline::Featurizer feat2;
    if (method == pipeline::Method::Hybrid) {
        model2 = gbm::load_model(gbm2_path);
        feat2 = make_featurizer(net2_path, net2);
    }

    std::vector<pipeline::Detection> detections;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        pipeline::DetectionResult res;
        if (method == pipeline::Method::Hybrid)
            res = pipeline::hybrid_detect(ds.images[i], cfg.sweep, feat, model, feat2, model2);
        else
            res = pipeline::detect(ds.images[i], cfg.sweep, feat, model);
        detections.push_back({res.best, res.likelihood, res.confident});
        if (!overlay_dir.empty()) {
            fs::create_directories(overlay_dir);
            imaging::save_pgm(pipeline::overlay_detection(ds.images[i], res.best),
                              fs::path(overlay_dir) / ds.names[i]);
        }
    }
    const pipeline::DetectionReport report =
        pipeline::evaluate(ds.gts, detections, pipeline::method_to_string(method));
    pipeline::write_report_csv(report, ds.names, out_path);
    std::cout << format_summary(report.average_dice, report.failures) << "\n";
}

void cmd_eval(const std::string& detections_path) {
    std::ifstream in(detections_path);
    if (!in) throw DataError("cannot open " + detections_path);
    std::string line;
    if (!std::getline(in, line) ||
        line != "image,gt_x,gt_y,gt_w,gt_h,det_x,det_y,det_w,det_h,likelihood,confident,dice")
        throw DataError("eval: bad detections header");
    double sum = 0.0;
    int n = 0;
    int failures = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 12) throw DataError("eval: bad row");
        const imaging::Roi gt{std::stoi(fields[1]), std::stoi(fields[2]), std::stoi(fields[3]),
                              std::stoi(fields[4])};
        const imaging::Roi det{std::stoi(fields[5]), std::stoi(fields[6]), std::stoi(fields[7]),
                               std::stoi(fields[8])};
        const double d = imaging::dice(gt, det);
        sum += d;
        if (d < pipeline::kFailureDice) ++failures;
        ++n;
    }
    if (n == 0) throw DataError("eval: no detection rows");
    std::cout << format_summary(sum / n, failures) << "\n";
}

void cmd_analyze(const std::string& net_path, const std::string& before_path,
                 const std::string& patch_path, int layer, const std::string& out_dir,
                 double threshold, const std::string& config_path) {
    const config::RunConfig cfg = load_run_config(config_path);
    if (layer < 1) throw UsageError("analyze: --layer is 1-based");
    const cnn::ConvNet net = cnn::load_net(net_path);
    const cnn::ConvNet before = before_path.empty() ? net : cnn::load_net(before_path);

    imaging::Image patch = imaging::load_pgm(patch_path);
    if (patch.width() != net.config().input_w || patch.height() != net.config().input_h)
        patch = imaging::resample(patch, net.config().input_w, net.config().input_h);

    const fs::path dir(out_dir);
    fs::create_directories(dir);

    const filters::ResponsePanel panel =
        filters::compare_responses(net, patch, layer - 1, cfg.frangi, cfg.pc);
    for (std::size_t i = 0; i < panel.maps.size(); ++i) {
        char name[128];
        std::snprintf(name, sizeof(name), "panel_%02zu_%s.pgm", i, panel.maps[i].first.c_str());
        imaging::save_pgm(panel.maps[i].second, dir / name);
    }
    config::write_correlations_csv(panel, dir / "correlations.csv");

    const cnn::FilterChangeReport report = cnn::filter_change(before, net, threshold);
    config::write_filter_change_csv(report, dir / "filter_change.csv");
    for (const auto& lc : report.layers)
        std::cout << lc.name << ": " << lc.over_threshold << " filters over "
                  << config::format_double(threshold * 100.0) << "% change\n";
    std::cout << "wrote " << panel.maps.size() << " response maps to " << dir.string() << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sonodetect: kidney-phantom detection with transfer-learned CNN features,\n"
                 "Haar+GBM baseline, hybrid fusion, and filter-interpretability analysis"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::string manifest;
    std::string net_path;
    std::string net2_path;
    std::string before_path;
    std::string gbm_path;
    std::string gbm2_path;
    std::string features_path;
    std::string detections_path;
    std::string change_csv;
    std::string patch_path;
    std::string overlay_dir;
    std::string regime = "FA";
    std::string featurizer = "haar";
    std::string method = "haar";
    std::uint64_t seed = 0;
    int n_train = 0;
    int n_val = 0;
    int layer = 1;
    double threshold = 0.40;

    CLI::App* gen = app.add_subcommand("gen", "generate phantom train/validation datasets");
    gen->add_option("--out", out, "output directory")->required();
    gen->add_option("--train", n_train, "number of training images")->required();
    gen->add_option("--val", n_val, "number of validation images")->required();
    gen->add_option("--seed", seed, "base seed");
    gen->add_option("--config", config_path, "config file");

    CLI::App* pretrain = app.add_subcommand("pretrain", "train the source-task network");
    pretrain->add_option("--out", out, "output SDNET1 model")->required();
    pretrain->add_option("--seed", seed, "seed");
    pretrain->add_option("--config", config_path, "config file");

    CLI::App* adapt = app.add_subcommand("adapt", "transfer the source net to kidney patches");
    adapt->add_option("--net", net_path, "pretrained SDNET1 model")->required();
    adapt->add_option("--manifest", manifest, "training manifest CSV")->required();
    adapt->add_option("--regime", regime, "FA, PA, or NA")->required();
    adapt->add_option("--out", out, "output SDNET1 model")->required();
    adapt->add_option("--change-csv", change_csv, "filter-change CSV path");
    adapt->add_option("--seed", seed, "seed");
    adapt->add_option("--config", config_path, "config file");

    CLI::App* features = app.add_subcommand("features", "extract labeled patch features");
    features->add_option("--manifest", manifest, "manifest CSV")->required();
    features->add_option("--featurizer", featurizer, "haar or cnn")->required();
    features->add_option("--net", net_path, "SDNET1 model (cnn featurizer)");
    features->add_option("--out", out, "output feature CSV")->required();
    features->add_option("--seed", seed, "seed");
    features->add_option("--config", config_path, "config file");

    CLI::App* train_gbm = app.add_subcommand("train-gbm", "fit the GBM likelihood model");
    train_gbm->add_option("--features", features_path, "feature CSV")->required();
    train_gbm->add_option("--out", out, "output SDGBM1 model")->required();
    train_gbm->add_option("--seed", seed, "seed");
    train_gbm->add_option("--config", config_path, "config file");

    CLI::App* detect = app.add_subcommand("detect", "detect kidney ROIs on a validation set");
    detect->add_option("--manifest", manifest, "validation manifest CSV")->required();
    detect->add_option("--method", method, "haar, cnn_fa, cnn_pa, cnn_na, or hybrid")->required();
    detect->add_option("--gbm", gbm_path, "SDGBM1 model")->required();
    detect->add_option("--net", net_path, "SDNET1 model (cnn methods)");
    detect->add_option("--gbm2", gbm2_path, "second SDGBM1 model (hybrid)");
    detect->add_option("--net2", net2_path, "second SDNET1 model (hybrid cnn side)");
    detect->add_option("--out", out, "output detections CSV")->required();
    detect->add_option("--overlay-dir", overlay_dir, "directory for overlay PGMs");
    detect->add_option("--config", config_path, "config file");

    CLI::App* eval = app.add_subcommand("eval", "summarize a detections CSV");
    eval->add_option("--detections", detections_path, "detections CSV")->required();

    CLI::App* analyze = app.add_subcommand("analyze", "response panels and filter-change table");
    analyze->add_option("--net", net_path, "SDNET1 model")->required();
    analyze->add_option("--before", before_path, "baseline SDNET1 model for filter change");
    analyze->add_option("--patch", patch_path, "input patch PGM")->required();
    analyze->add_option("--layer", layer, "conv layer, 1-based");
    analyze->add_option("--out-dir", out, "output directory")->required();
    analyze->add_option("--threshold", threshold, "filter-change threshold (default 0.40)");
    analyze->add_option("--config", config_path, "config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) cmd_gen(out, n_train, n_val, seed, config_path);
        else if (pretrain->parsed()) cmd_pretrain(out, seed, config_path);
        else if (adapt->parsed())
            cmd_adapt(net_path, manifest, regime, out, change_csv, seed, config_path);
        else if (features->parsed())
            cmd_features(manifest, featurizer, net_path, out, seed, config_path);
        else if (train_gbm->parsed()) cmd_train_gbm(features_path, out, seed, config_path);
        else if (detect->parsed())
            cmd_detect(manifest, method, gbm_path, net_path, gbm2_path, net2_path, out,
                       overlay_dir, config_path);
        else if (eval->parsed()) cmd_eval(detections_path);
        else if (analyze->parsed())
            cmd_analyze(net_path, before_path, patch_path, layer, out, threshold, config_path);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
