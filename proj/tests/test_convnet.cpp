#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sonodetect/convnet.hpp"
#include "sonodetect/rng.hpp"

using namespace sono;
using namespace sono::cnn;

namespace {

imaging::Image random_patch(int size, Rng& rng) {
    imaging::Image img(size, size, 1.0);
    for (double& v : img.pixels()) v = rng.next_double();
    return img;
}

NetConfig small_config() {
    NetConfig cfg;
    cfg.input_w = cfg.input_h = 12;
    cfg.convs = {{2, 3}, {3, 3}};
    cfg.feat_dim = 8;
    cfg.classes = 2;
    return cfg;
}

// |a-b| relative to magnitude, floored so near-zero gradients are checked
// absolutely at the finite-difference noise scale.
double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-3); }

double fd_gradient(ConvNet& net, int layer, bool bias, std::size_t k,
                   const std::vector<imaging::Image>& batch, const std::vector<int>& labels) {
    const double h = 1e-4;
    auto& params = bias ? net.layer_biases(layer) : net.layer_weights(layer);
    const double saved = params[k];
    params[k] = saved + h;
    const double up = oracles::batch_loss(net, batch, labels);
    params[k] = saved - h;
    const double down = oracles::batch_loss(net, batch, labels);
    params[k] = saved;
    return (up - down) / (2.0 * h);
}

} // namespace

TEST_CASE("conv_forward identity kernel reduces to max pooling") {
    ConvLayer layer;
    layer.in_maps = layer.out_maps = 1;
    layer.kh = layer.kw = 1;
    layer.weights = {1.0};
    layer.biases = {0.0};
    Tensor3 in(1, 4, 4);
    Rng rng(3);
    for (double& v : in.v) v = rng.next_double(); // nonnegative, ReLU is a no-op
    const Tensor3 out = conv_forward(in, layer);
    REQUIRE(out.h == 2);
    REQUIRE(out.w == 2);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            const double expect =
                std::max(std::max(in.at(0, 2 * y, 2 * x), in.at(0, 2 * y, 2 * x + 1)),
                         std::max(in.at(0, 2 * y + 1, 2 * x), in.at(0, 2 * y + 1, 2 * x + 1)));
            CHECK(out.at(0, y, x) == expect);
        }
}

TEST_CASE("conv_forward ReLU clips negative bias to zero") {
    ConvLayer layer;
    layer.in_maps = 1;
    layer.out_maps = 2;
    layer.kh = layer.kw = 3;
    layer.weights.assign(2 * 9, 0.0);
    layer.biases = {-1.0, -2.0};
    Tensor3 in(1, 8, 8);
    Rng rng(4);
    for (double& v : in.v) v = rng.next_double();
    const Tensor3 out = conv_forward(in, layer);
    for (const double v : out.v) CHECK(v == 0.0);
}

TEST_CASE("conv_forward matches the nested-loop oracle") {
    Rng rng(2025);
    for (int trial = 0; trial < 50; ++trial) {
        ConvLayer layer;
        layer.in_maps = 1;
        layer.out_maps = 2;
        layer.kh = layer.kw = 3;
        layer.weights.resize(2 * 9);
        layer.biases.resize(2);
        for (double& v : layer.weights) v = rng.uniform(-1.0, 1.0);
        for (double& v : layer.biases) v = rng.uniform(-0.5, 0.5);
        Tensor3 in(1, 8, 8);
        for (double& v : in.v) v = rng.next_double();

        const Tensor3 got = conv_forward(in, layer);
        const Tensor3 want = oracles::naive_conv_forward(in, layer);
        REQUIRE(got.v.size() == want.v.size());
        CHECK(got.h == (8 - 3 + 1) / 2);
        for (std::size_t i = 0; i < got.v.size(); ++i)
            CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-6));
    }
}

TEST_CASE("forward equals the straight-line oracle and is deterministic") {
    Rng rng(8);
    ConvNet net = ConvNet::init(default_net_config(3), 55);
    const imaging::Image patch = random_patch(32, rng);
    const auto a = forward(net, patch);
    const auto b = forward(net, patch);
    CHECK(a == b);
    const auto want = oracles::naive_forward(net, patch);
    REQUIRE(a.size() == want.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(want[i]).epsilon(1e-6));

    SUBCASE("zero weights leave only the output biases") {
        for (int l = 0; l < net.n_layers(); ++l)
            for (double& v : net.layer_weights(l)) v = 0.0;
        for (int l = 0; l < net.n_layers(); ++l)
            for (double& v : net.layer_biases(l)) v = 0.0;
        net.layer_biases(net.n_layers() - 1) = {0.25, -0.5, 1.5};
        imaging::Image zero(32, 32, 1.0, 0.0);
        const auto scores = forward(net, zero);
        CHECK(scores == std::vector<double>{0.25, -0.5, 1.5});
    }
    SUBCASE("wrong patch size is rejected") {
        CHECK_THROWS_AS(forward(net, random_patch(16, rng)), UsageError);
    }
}

TEST_CASE("extract_features matches the oracle and zero weights give zero features") {
    Rng rng(9);
    ConvNet net = ConvNet::init(default_net_config(2), 66);
    const imaging::Image patch = random_patch(32, rng);
    const auto got = extract_features(net, patch);
    const auto want = oracles::naive_features(net, patch);
    REQUIRE(got.size() == static_cast<std::size_t>(net.config().feat_dim));
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
    CHECK(extract_features(net, patch) == got);

    for (int l = 0; l < net.n_layers(); ++l) {
        for (double& v : net.layer_weights(l)) v = 0.0;
        for (double& v : net.layer_biases(l)) v = 0.0;
    }
    for (const double v : extract_features(net, patch)) CHECK(v == 0.0);
}

TEST_CASE("backward gradient sanity") {
    Rng rng(12);
    SUBCASE("saturated correct prediction has vanishing head gradient") {
        ConvNet net = ConvNet::init(small_config(), 1);
        for (double& v : net.layer_weights(net.n_layers() - 1)) v = 0.0;
        net.layer_biases(net.n_layers() - 1) = {50.0, -50.0};
        const std::vector<imaging::Image> batch = {random_patch(12, rng)};
        const std::vector<int> labels = {0};
        const Gradients g = backward(net, batch, labels);
        double norm = 0.0;
        for (const double v : g[net.n_layers() - 1].w) norm += v * v;
        for (const double v : g[net.n_layers() - 1].b) norm += v * v;
        CHECK(std::sqrt(norm) < 1e-12);
    }
    SUBCASE("duplicated sample changes nothing under the mean loss") {
        ConvNet net = ConvNet::init(small_config(), 2);
        const imaging::Image patch = random_patch(12, rng);
        const Gradients one = backward(net, std::vector<imaging::Image>{patch}, std::vector<int>{1});
        const Gradients two = backward(net, std::vector<imaging::Image>{patch, patch},
                                       std::vector<int>{1, 1});
        for (std::size_t l = 0; l < one.size(); ++l) {
            CHECK(one[l].w == two[l].w);
            CHECK(one[l].b == two[l].b);
        }
    }
    SUBCASE("label out of range is rejected") {
        ConvNet net = ConvNet::init(small_config(), 3);
        CHECK_THROWS_AS(backward(net, std::vector<imaging::Image>{random_patch(12, rng)},
                                 std::vector<int>{2}),
                        UsageError);
    }
}

TEST_CASE("every parameter gradient matches central finite differences") {
    Rng rng(123);
    ConvNet net = ConvNet::init(small_config(), 7);
    std::vector<imaging::Image> batch;
    std::vector<int> labels = {0, 1, 1, 0};
    for (int i = 0; i < 4; ++i) batch.push_back(random_patch(12, rng));

    const Gradients g = backward(net, batch, labels);
    for (int l = 0; l < net.n_layers(); ++l) {
        for (std::size_t k = 0; k < g[l].w.size(); ++k) {
            const double fd = fd_gradient(net, l, false, k, batch, labels);
            CHECK(rel_err(g[l].w[k], fd) <= 1e-5);
        }
        for (std::size_t k = 0; k < g[l].b.size(); ++k) {
            const double fd = fd_gradient(net, l, true, k, batch, labels);
            CHECK(rel_err(g[l].b[k], fd) <= 1e-5);
        }
    }
}

TEST_CASE("sgd_step closed-form update, freezing, and no-op cases") {
    NetConfig cfg = small_config();
    ConvNet net = ConvNet::init(cfg, 5);
    // Pin one conv weight to 1 and check the hand-computed step.
    net.layer_weights(0)[0] = 1.0;
    Gradients grads = zero_gradients(net);
    Velocity vel = zero_gradients(net);
    TrainConfig tc;
    tc.learning_rate = 0.1;
    tc.momentum = 0.5;
    tc.weight_decay = 5e-4;
    sgd_step(net, grads, tc, vel);
    CHECK(vel[0].w[0] == doctest::Approx(-5e-5).epsilon(1e-12));
    CHECK(net.layer_weights(0)[0] == doctest::Approx(0.99995).epsilon(1e-12));

    SUBCASE("frozen layer ignores nonzero gradients exactly") {
        ConvNet frozen_net = ConvNet::init(cfg, 6);
        const std::vector<double> before = frozen_net.layer_weights(0);
        frozen_net.set_frozen(0, true);
        Gradients g2 = zero_gradients(frozen_net);
        for (double& v : g2[0].w) v = 3.0;
        Velocity v2 = zero_gradients(frozen_net);
        sgd_step(frozen_net, g2, tc, v2);
        CHECK(frozen_net.layer_weights(0) == before);
        for (const double v : v2[0].w) CHECK(v == 0.0);
    }
    SUBCASE("zero decay and zero gradient is a no-op") {
        ConvNet net2 = ConvNet::init(cfg, 7);
        const std::vector<double> before = net2.layer_weights(1);
        TrainConfig tc2;
        tc2.weight_decay = 0.0;
        Gradients g2 = zero_gradients(net2);
        Velocity v2 = zero_gradients(net2);
        sgd_step(net2, g2, tc2, v2);
        CHECK(net2.layer_weights(1) == before);
    }
}

TEST_CASE("train determinism, lr=0 identity, and a separable toy problem") {
    Rng rng(21);
    std::vector<imaging::Image> patches;
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) {
        // Bright-left vs bright-right 12x12 patches with mild noise.
        imaging::Image img(12, 12, 1.0);
        const int label = i % 2;
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) {
                const bool bright = label == 0 ? x < 6 : x >= 6;
                img.at(x, y) = (bright ? 0.8 : 0.2) + 0.05 * rng.next_double();
            }
        patches.push_back(std::move(img));
        labels.push_back(label);
    }

    SUBCASE("lr=0 leaves weights bitwise unchanged") {
        ConvNet net = ConvNet::init(small_config(), 9);
        const ConvNet before = net;
        TrainConfig tc{4, 0.5, 5e-4, 0.0, 3, 11};
        train(net, patches, labels, tc);
        for (int l = 0; l < net.n_layers(); ++l) {
            CHECK(net.layer_weights(l) == before.layer_weights(l));
            CHECK(net.layer_biases(l) == before.layer_biases(l));
        }
    }
    SUBCASE("same seed twice gives bitwise-identical weights") {
        ConvNet a = ConvNet::init(small_config(), 9);
        ConvNet b = ConvNet::init(small_config(), 9);
        TrainConfig tc{4, 0.5, 5e-4, 0.01, 3, 11};
        train(a, patches, labels, tc);
        train(b, patches, labels, tc);
        for (int l = 0; l < a.n_layers(); ++l) CHECK(a.layer_weights(l) == b.layer_weights(l));
    }
    SUBCASE("separable set reaches perfect training accuracy within 50 epochs") {
        ConvNet net = ConvNet::init(small_config(), 9);
        TrainConfig tc{4, 0.5, 5e-4, 0.05, 50, 11};
        train(net, patches, labels, tc);
        int hits = 0;
        for (std::size_t i = 0; i < patches.size(); ++i) {
            const auto scores = forward(net, patches[i]);
            hits += (scores[1] > scores[0]) == (labels[i] == 1);
        }
        CHECK(hits == 20);
    }
    SUBCASE("empty dataset is rejected") {
        ConvNet net = ConvNet::init(small_config(), 9);
        TrainConfig tc;
        CHECK_THROWS_AS(train(net, std::vector<imaging::Image>{}, std::vector<int>{}, tc),
                        UsageError);
    }
}

TEST_CASE("adapt regimes honor the freeze contracts") {
    Rng rng(31);
    std::vector<imaging::Image> patches;
    std::vector<int> labels;
    for (int i = 0; i < 12; ++i) {
        patches.push_back(random_patch(12, rng));
        labels.push_back(i % 2);
    }
    const ConvNet pretrained = ConvNet::init(small_config(), 40);
    TrainConfig tc{4, 0.5, 5e-4, 0.02, 3, 17};

    SUBCASE("NA returns the pretrained weights untouched, head aside") {
        const ConvNet na = adapt(pretrained, Regime::NoAdapt, patches, labels, tc);
        for (int l = 0; l < pretrained.n_layers() - 1; ++l) {
            CHECK(na.layer_weights(l) == pretrained.layer_weights(l));
            CHECK(na.layer_biases(l) == pretrained.layer_biases(l));
        }
    }
    SUBCASE("PA keeps conv1 and conv2 exactly fixed while training the rest") {
        const ConvNet pa = adapt(pretrained, Regime::PartialAdapt, patches, labels, tc);
        CHECK(pa.layer_weights(0) == pretrained.layer_weights(0));
        CHECK(pa.layer_weights(1) == pretrained.layer_weights(1));
        // fc_feat must actually have moved.
        CHECK(pa.layer_weights(2) != pretrained.layer_weights(2));

        ConvNet before = pretrained;
        before.reinit_head(2, tc.seed);
        const cnn::FilterChangeReport report = filter_change(before, pa);
        CHECK(report.layers[0].over_threshold == 0);
        CHECK(report.layers[1].over_threshold == 0);
        for (const auto& c : report.layers[0].per_filter) CHECK(*c == 0.0);
        for (const auto& c : report.layers[1].per_filter) CHECK(*c == 0.0);
    }
}

TEST_CASE("response maps") {
    SUBCASE("identity kernel recovers the normalized input") {
        NetConfig cfg;
        cfg.input_w = cfg.input_h = 8;
        cfg.convs = {{1, 1}};
        cfg.feat_dim = 4;
        cfg.classes = 2;
        ConvNet net = ConvNet::init(cfg, 1);
        net.conv(0).weights = {1.0};
        net.conv(0).biases = {0.0};
        imaging::Image patch(8, 8, 1.0);
        Rng rng(51);
        for (double& v : patch.pixels()) v = rng.next_double();
        const auto maps = response_maps(net, patch, 0);
        REQUIRE(maps.size() == 1);
        double lo = 2.0;
        double hi = -1.0;
        for (const double v : patch.pixels()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(maps[0].at(x, y) == doctest::Approx((patch.at(x, y) - lo) / (hi - lo)));
    }
    SUBCASE("dead filters give all-zero maps and counts match the layer") {
        ConvNet net = ConvNet::init(small_config(), 3);
        for (double& v : net.conv(0).weights) v = 0.0;
        net.conv(0).biases.assign(net.conv(0).biases.size(), -1.0);
        imaging::Image patch(12, 12, 1.0, 0.5);
        const auto maps = response_maps(net, patch, 0);
        CHECK(maps.size() == static_cast<std::size_t>(net.conv(0).out_maps));
        for (const auto& m : maps)
            for (const double v : m.pixels()) CHECK(v == 0.0);
        CHECK_THROWS_AS(response_maps(net, patch, 5), UsageError);
    }
}

TEST_CASE("filter change algebra") {
    const ConvNet net = ConvNet::init(small_config(), 70);
    SUBCASE("identical nets report all zeros") {
        const auto report = filter_change(net, net);
        CHECK(report.threshold == 0.40);
        for (const auto& layer : report.layers) {
            CHECK(layer.over_threshold == 0);
            CHECK(layer.undefined == 0);
            for (const auto& c : layer.per_filter) CHECK(*c == 0.0);
        }
    }
    SUBCASE("scaling one filter by 2 is exactly a 100% change") {
        ConvNet after = net;
        auto& w = after.conv(1).weights;
        const auto& layer = after.conv(1);
        for (int k = 0; k < layer.in_maps; ++k)
            for (int y = 0; y < layer.kh; ++y)
                for (int x = 0; x < layer.kw; ++x) w[layer.weight_index(0, k, y, x)] *= 2.0;
        after.conv(1).biases[0] *= 2.0;
        const auto report = filter_change(net, after);
        CHECK(*report.layers[1].per_filter[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(report.layers[1].over_threshold == 1);
        CHECK(report.layers[0].over_threshold == 0);
    }
    SUBCASE("zero-norm before filter is reported as undefined, not counted") {
        ConvNet before = net;
        for (int k = 0; k < before.conv(0).in_maps * before.conv(0).kh * before.conv(0).kw; ++k)
            before.conv(0).weights[k] = 0.0;
        before.conv(0).biases[0] = 0.0;
        ConvNet after = before;
        after.conv(0).weights[0] = 1.0;
        const auto report = filter_change(before, after);
        CHECK(!report.layers[0].per_filter[0].has_value());
        CHECK(report.layers[0].undefined == 1);
        CHECK(report.layers[0].over_threshold == 0);
    }
    SUBCASE("architecture mismatch is rejected") {
        const ConvNet other = ConvNet::init(default_net_config(2), 1);
        CHECK_THROWS_AS(filter_change(net, other), UsageError);
    }
}

TEST_CASE("SDNET1 serialization roundtrip and rejection") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "sono_net_test.sdnet";
    ConvNet net = ConvNet::init(small_config(), 88);
    net.set_frozen(0, true);
    save_net(net, path);
    const ConvNet back = load_net(path);
    CHECK(back.config() == net.config());
    for (int l = 0; l < net.n_layers(); ++l) {
        CHECK(back.layer_weights(l) == net.layer_weights(l));
        CHECK(back.layer_biases(l) == net.layer_biases(l));
        CHECK(back.frozen(l) == net.frozen(l));
    }
    // Corrupt the version byte of the magic.
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(5);
        f.put('2');
    }
    CHECK_THROWS_AS(load_net(path), DataError);
    fs::remove(path);
}
