#include <doctest.h>

#include <filesystem>

#include "sonodetect/config.hpp"

using namespace sono;
using namespace sono::config;

TEST_CASE("config serialize/parse round trip is exact") {
    RunConfig cfg;
    cfg.phantom.spacing = 0.625;
    cfg.sweep.stride_px = 6;
    cfg.gbm.iterations = 123;
    cfg.frangi.c = 0.75;
    cfg.frangi.scales = {1.0, 3.5};
    cfg.pc.noise_threshold.reset();
    cfg.adapt.learning_rate = 0.015;

    const std::string text = serialize_config(cfg);
    const RunConfig back = parse_config(text);
    CHECK(serialize_config(back) == text);
    CHECK(back.phantom.spacing == cfg.phantom.spacing);
    CHECK(back.sweep.stride_px == cfg.sweep.stride_px);
    CHECK(back.gbm.iterations == cfg.gbm.iterations);
    REQUIRE(back.frangi.c.has_value());
    CHECK(*back.frangi.c == 0.75);
    CHECK(back.frangi.scales == cfg.frangi.scales);
    CHECK(!back.pc.noise_threshold.has_value());
    CHECK(back.adapt.learning_rate == cfg.adapt.learning_rate);
}

TEST_CASE("unknown sections and keys are rejected") {
    CHECK_THROWS_AS(parse_config("[nonsense]\nfoo = 1\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[gbm]\nfoo = 1\n"), UsageError);
    CHECK_THROWS_AS(parse_config("stray = 1\n"), UsageError);
    CHECK_THROWS_AS(parse_config("[gbm]\niterations = abc\n"), UsageError);
    CHECK_NOTHROW(parse_config("# comment only\n\n[gbm]\niterations = 5\n"));
}

TEST_CASE("format_double round trips exactly and compactly") {
    for (const double v : {0.5, 1.0 / 3.0, 5e-4, 123456.789, 0.0, -2.25}) {
        const std::string s = format_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(200.0) == "200");
}

TEST_CASE("feature matrix csv round trip") {
    namespace fs = std::filesystem;
    LabeledFeatures data;
    data.x = gbm::FeatureMatrix(3, 2);
    data.x.at(0, 0) = 0.125;
    data.x.at(0, 1) = -1.5;
    data.x.at(1, 0) = 1.0 / 3.0;
    data.x.at(2, 1) = 42.0;
    data.labels = {1, 0, 1};
    const fs::path path = fs::temp_directory_path() / "sono_features_test.csv";
    save_feature_matrix(data, path);
    const LabeledFeatures back = load_feature_matrix(path);
    CHECK(back.labels == data.labels);
    CHECK(back.x.rows == 3);
    CHECK(back.x.cols == 2);
    CHECK(back.x.v == data.x.v);
    fs::remove(path);
}
