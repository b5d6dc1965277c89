#include "sonodetect/convnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "sonodetect/parallel.hpp"
#include "sonodetect/rng.hpp"

namespace sono::cnn {

namespace {

void validate_config(const NetConfig& cfg) {
    if (cfg.input_w < 1 || cfg.input_h < 1) throw UsageError("net: bad input size");
    if (cfg.convs.empty()) throw UsageError("net: need at least one conv layer");
    if (cfg.feat_dim < 1) throw UsageError("net: feature dimension must be >= 1");
    if (cfg.classes < 2) throw UsageError("net: need at least two classes");
    int h = cfg.input_h;
    int w = cfg.input_w;
    for (const auto& spec : cfg.convs) {
        if (spec.filters < 1) throw UsageError("net: conv layer needs filters");
        if (spec.kernel < 1 || spec.kernel % 2 == 0) throw UsageError("net: kernel size must be odd");
        h = (h - spec.kernel + 1) / 2;
        w = (w - spec.kernel + 1) / 2;
        if (h < 1 || w < 1) throw UsageError("net: spatial size collapses before the last conv layer");
    }
}

int flat_dim_after_convs(const NetConfig& cfg) {
    int h = cfg.input_h;
    int w = cfg.input_w;
    for (const auto& spec : cfg.convs) {
        h = (h - spec.kernel + 1) / 2;
        w = (w - spec.kernel + 1) / 2;
    }
    return cfg.convs.back().filters * h * w;
}

void he_init(std::vector<double>& w, int fan_in, Rng& rng) {
    const double std = std::sqrt(2.0 / fan_in);
    for (double& x : w) x = std * rng.normal();
}

std::vector<double> dense_forward(const DenseLayer& layer, const std::vector<double>& in,
                                  std::vector<double>* pre_out) {
    std::vector<double> out(layer.out_dim);
    for (int o = 0; o < layer.out_dim; ++o) {
        double acc = layer.biases[o];
        const double* wrow = layer.weights.data() + static_cast<std::size_t>(o) * layer.in_dim;
        for (int i = 0; i < layer.in_dim; ++i) acc += wrow[i] * in[i];
        out[o] = acc;
    }
    if (pre_out) *pre_out = out;
    if (layer.relu)
        for (double& x : out) x = std::max(0.0, x);
    return out;
}

} // namespace

NetConfig default_net_config(int classes) {
    NetConfig cfg;
    cfg.classes = classes;
    return cfg;
}

ConvNet ConvNet::init(const NetConfig& cfg, std::uint64_t seed) {
    validate_config(cfg);
    ConvNet net;
    net.cfg_ = cfg;
    Rng rng(seed);
    int in_maps = 1;
    for (const auto& spec : cfg.convs) {
        ConvLayer layer;
        layer.in_maps = in_maps;
        layer.out_maps = spec.filters;
        layer.kh = layer.kw = spec.kernel;
        layer.weights.resize(static_cast<std::size_t>(spec.filters) * in_maps * spec.kernel * spec.kernel);
        layer.biases.assign(spec.filters, 0.0);
        he_init(layer.weights, in_maps * spec.kernel * spec.kernel, rng);
        net.convs_.push_back(std::move(layer));
        in_maps = spec.filters;
    }
    const int flat = flat_dim_after_convs(cfg);
    net.fc_feat_ = DenseLayer{flat, cfg.feat_dim, true, {}, {}};
    net.fc_feat_.weights.resize(static_cast<std::size_t>(cfg.feat_dim) * flat);
    net.fc_feat_.biases.assign(cfg.feat_dim, 0.0);
    he_init(net.fc_feat_.weights, flat, rng);
    net.fc_out_ = DenseLayer{cfg.feat_dim, cfg.classes, false, {}, {}};
    net.fc_out_.weights.resize(static_cast<std::size_t>(cfg.classes) * cfg.feat_dim);
    net.fc_out_.biases.assign(cfg.classes, 0.0);
    he_init(net.fc_out_.weights, cfg.feat_dim, rng);
    net.frozen_.assign(net.convs_.size() + 2, false);
    return net;
}

std::vector<double>& ConvNet::layer_weights(int layer) {
    if (layer < 0 || layer >= n_layers()) throw UsageError("layer index out of range");
    if (layer < n_conv()) return convs_[layer].weights;
    return layer == n_conv() ? fc_feat_.weights : fc_out_.weights;
}

std::vector<double>& ConvNet::layer_biases(int layer) {
    if (layer < 0 || layer >= n_layers()) throw UsageError("layer index out of range");
    if (layer < n_conv()) return convs_[layer].biases;
    return layer == n_conv() ? fc_feat_.biases : fc_out_.biases;
}

const std::vector<double>& ConvNet::layer_weights(int layer) const {
    return const_cast<ConvNet*>(this)->layer_weights(layer);
}

const std::vector<double>& ConvNet::layer_biases(int layer) const {
    return const_cast<ConvNet*>(this)->layer_biases(layer);
}

std::string ConvNet::layer_name(int layer) const {
    if (layer < n_conv()) return "conv" + std::to_string(layer + 1);
    return layer == n_conv() ? "fc_feat" : "fc_out";
}

void ConvNet::reinit_head(int classes, std::uint64_t seed) {
    if (classes < 2) throw UsageError("reinit_head: need at least two classes");
    cfg_.classes = classes;
    Rng rng(seed);
    fc_out_ = DenseLayer{cfg_.feat_dim, classes, false, {}, {}};
    fc_out_.weights.resize(static_cast<std::size_t>(classes) * cfg_.feat_dim);
    fc_out_.biases.assign(classes, 0.0);
    he_init(fc_out_.weights, cfg_.feat_dim, rng);
}

Tensor3 conv_forward(const Tensor3& input, const ConvLayer& layer, Tensor3* prepool_out) {
    if (input.maps != layer.in_maps) throw UsageError("conv_forward: input map count mismatch");
    if (input.h < layer.kh || input.w < layer.kw)
        throw UsageError("conv_forward: input smaller than kernel");
    const int ph = input.h - layer.kh + 1;
    const int pw = input.w - layer.kw + 1;
    Tensor3 pre(layer.out_maps, ph, pw);
    for (int j = 0; j < layer.out_maps; ++j) {
        for (int k = 0; k < layer.in_maps; ++k) {
            const double* wk = layer.weights.data() + layer.weight_index(j, k, 0, 0);
            for (int y = 0; y < ph; ++y) {
                double* out_row = &pre.at(j, y, 0);
                for (int dy = 0; dy < layer.kh; ++dy) {
                    const double* in_row = &input.at(k, y + dy, 0);
                    const double* wrow = wk + static_cast<std::size_t>(dy) * layer.kw;
                    for (int x = 0; x < pw; ++x) {
                        double acc = 0.0;
                        for (int dx = 0; dx < layer.kw; ++dx) acc += in_row[x + dx] * wrow[dx];
                        out_row[x] += acc;
                    }
                }
            }
        }
        const double b = layer.biases[j];
        for (int y = 0; y < ph; ++y)
            for (int x = 0; x < pw; ++x) pre.at(j, y, x) = std::max(0.0, pre.at(j, y, x) + b);
    }
    if (prepool_out) *prepool_out = pre;

    const int oh = ph / 2;
    const int ow = pw / 2;
    if (oh < 1 || ow < 1) throw UsageError("conv_forward: output collapses under pooling");
    Tensor3 out(layer.out_maps, oh, ow);
    for (int j = 0; j < layer.out_maps; ++j)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const double a = pre.at(j, 2 * y, 2 * x);
                const double b2 = pre.at(j, 2 * y, 2 * x + 1);
                const double c = pre.at(j, 2 * y + 1, 2 * x);
                const double d = pre.at(j, 2 * y + 1, 2 * x + 1);
                out.at(j, y, x) = std::max(std::max(a, b2), std::max(c, d));
            }
    return out;
}

std::vector<double> forward(const ConvNet& net, const imaging::Image& patch, ForwardCache* cache) {
    const NetConfig& cfg = net.config();
    if (patch.width() != cfg.input_w || patch.height() != cfg.input_h)
        throw UsageError("forward: patch size does not match the network input");

    Tensor3 t(1, cfg.input_h, cfg.input_w);
    t.v = patch.pixels();
    if (cache) {
        cache->conv_in.clear();
        cache->conv_prepool.clear();
        cache->conv_pooled.clear();
    }
    for (int l = 0; l < net.n_conv(); ++l) {
        Tensor3 pre;
        Tensor3 pooled = conv_forward(t, net.conv(l), cache ? &pre : nullptr);
        if (cache) {
            cache->conv_in.push_back(std::move(t));
            cache->conv_prepool.push_back(std::move(pre));
            cache->conv_pooled.push_back(pooled);
        }
        t = std::move(pooled);
    }
    std::vector<double> flat = std::move(t.v);
    std::vector<double> feat_pre;
    std::vector<double> feat = dense_forward(net.fc_feat(), flat, cache ? &feat_pre : nullptr);
    std::vector<double> scores = dense_forward(net.fc_out(), feat, nullptr);
    if (cache) {
        cache->flat = std::move(flat);
        cache->feat_pre = std::move(feat_pre);
        cache->feat = feat;
        cache->scores = scores;
    }
    return scores;
}

std::vector<double> extract_features(const ConvNet& net, const imaging::Image& patch) {
    const NetConfig& cfg = net.config();
    if (patch.width() != cfg.input_w || patch.height() != cfg.input_h)
        throw UsageError("extract_features: patch size does not match the network input");
    Tensor3 t(1, cfg.input_h, cfg.input_w);
    t.v = patch.pixels();
    for (int l = 0; l < net.n_conv(); ++l) t = conv_forward(t, net.conv(l));
    return dense_forward(net.fc_feat(), t.v, nullptr);
}

Gradients zero_gradients(const ConvNet& net) {
    Gradients g(net.n_layers());
    for (int l = 0; l < net.n_layers(); ++l) {
        g[l].w.assign(net.layer_weights(l).size(), 0.0);
        g[l].b.assign(net.layer_biases(l).size(), 0.0);
    }
    return g;
}

namespace {

// ReLU mask comes from the cached pre-activation; pooling routes gradient to
// the first maximum in scan order so ties resolve deterministically.
void backward_one(const ConvNet& net, const imaging::Image& patch, int label, Gradients& g,
                  double& loss) {
    ForwardCache cache;
    std::vector<double> scores = forward(net, patch, &cache);
    const int classes = static_cast<int>(scores.size());

    const double mx = *std::max_element(scores.begin(), scores.end());
    double denom = 0.0;
    std::vector<double> p(classes);
    for (int c = 0; c < classes; ++c) {
        p[c] = std::exp(scores[c] - mx);
        denom += p[c];
    }
    for (double& x : p) x /= denom;
    loss = -std::log(std::max(p[label], 1e-300));

    std::vector<double> dscores = p;
    dscores[label] -= 1.0;

    const int n_conv = net.n_conv();
    const DenseLayer& out_layer = net.fc_out();
    const DenseLayer& feat_layer = net.fc_feat();

    ParamBlock& g_out = g[n_conv + 1];
    std::vector<double> dfeat(feat_layer.out_dim, 0.0);
    for (int o = 0; o < out_layer.out_dim; ++o) {
        const double d = dscores[o];
        g_out.b[o] += d;
        double* gw = g_out.w.data() + static_cast<std::size_t>(o) * out_layer.in_dim;
        const double* wrow = out_layer.weights.data() + static_cast<std::size_t>(o) * out_layer.in_dim;
        for (int i = 0; i < out_layer.in_dim; ++i) {
            gw[i] += d * cache.feat[i];
            dfeat[i] += d * wrow[i];
        }
    }

    ParamBlock& g_feat = g[n_conv];
    std::vector<double> dflat(feat_layer.in_dim, 0.0);
    for (int o = 0; o < feat_layer.out_dim; ++o) {
        const double d = cache.feat_pre[o] > 0.0 ? dfeat[o] : 0.0;
        if (d == 0.0) continue;
        g_feat.b[o] += d;
        double* gw = g_feat.w.data() + static_cast<std::size_t>(o) * feat_layer.in_dim;
        const double* wrow = feat_layer.weights.data() + static_cast<std::size_t>(o) * feat_layer.in_dim;
        for (int i = 0; i < feat_layer.in_dim; ++i) {
            gw[i] += d * cache.flat[i];
            dflat[i] += d * wrow[i];
        }
    }

    const Tensor3& last_pooled = cache.conv_pooled.back();
    Tensor3 dpooled(last_pooled.maps, last_pooled.h, last_pooled.w);
    dpooled.v = dflat;

    for (int l = n_conv - 1; l >= 0; --l) {
        const ConvLayer& layer = net.conv(l);
        const Tensor3& pre = cache.conv_prepool[l];
        const Tensor3& input = cache.conv_in[l];

        // Unpool: send gradient to the first argmax of each 2x2 window.
        Tensor3 dpre(pre.maps, pre.h, pre.w);
        for (int j = 0; j < dpooled.maps; ++j)
            for (int y = 0; y < dpooled.h; ++y)
                for (int x = 0; x < dpooled.w; ++x) {
                    const double d = dpooled.at(j, y, x);
                    if (d == 0.0) continue;
                    int by = 2 * y;
                    int bx = 2 * x;
                    double best = pre.at(j, by, bx);
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const double val = pre.at(j, 2 * y + dy, 2 * x + dx);
                            if (val > best) {
                                best = val;
                                by = 2 * y + dy;
                                bx = 2 * x + dx;
                            }
                        }
                    dpre.at(j, by, bx) += d;
                }

        // ReLU: pre holds post-ReLU values, so positive means pass-through.
        for (std::size_t i = 0; i < dpre.v.size(); ++i)
            if (pre.v[i] <= 0.0) dpre.v[i] = 0.0;

        ParamBlock& gl = g[l];
        Tensor3 dinput(input.maps, input.h, input.w);
        for (int j = 0; j < layer.out_maps; ++j) {
            double db = 0.0;
            for (int y = 0; y < dpre.h; ++y)
                for (int x = 0; x < dpre.w; ++x) db += dpre.at(j, y, x);
            gl.b[j] += db;
            for (int k = 0; k < layer.in_maps; ++k) {
                double* gw = gl.w.data() + layer.weight_index(j, k, 0, 0);
                const double* wk = layer.weights.data() + layer.weight_index(j, k, 0, 0);
                for (int y = 0; y < dpre.h; ++y)
                    for (int x = 0; x < dpre.w; ++x) {
                        const double d = dpre.at(j, y, x);
                        if (d == 0.0) continue;
                        for (int dy = 0; dy < layer.kh; ++dy) {
                            const double* in_row = &input.at(k, y + dy, x);
                            double* gw_row = gw + static_cast<std::size_t>(dy) * layer.kw;
                            double* din_row = &dinput.at(k, y + dy, x);
                            const double* w_row = wk + static_cast<std::size_t>(dy) * layer.kw;
                            for (int dx = 0; dx < layer.kw; ++dx) {
                                gw_row[dx] += d * in_row[dx];
                                din_row[dx] += d * w_row[dx];
                            }
                        }
                    }
            }
        }
        if (l > 0) dpooled = std::move(dinput);
    }
}

} // namespace

Gradients backward(const ConvNet& net, std::span<const imaging::Image> batch,
                   std::span<const int> labels, double* mean_loss) {
    if (batch.empty()) throw UsageError("backward: empty batch");
    if (batch.size() != labels.size()) throw UsageError("backward: batch/label size mismatch");
    for (const int y : labels)
        if (y < 0 || y >= net.config().classes) throw UsageError("backward: label out of range");

    const std::size_t n = batch.size();
    std::vector<Gradients> per_sample(n);
    std::vector<double> losses(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        per_sample[i] = zero_gradients(net);
        backward_one(net, batch[i], labels[i], per_sample[i], losses[i]);
    });

    // Fixed-order reduction keeps results independent of thread scheduling.
    Gradients total = std::move(per_sample[0]);
    for (std::size_t i = 1; i < n; ++i)
        for (std::size_t l = 0; l < total.size(); ++l) {
            for (std::size_t k = 0; k < total[l].w.size(); ++k) total[l].w[k] += per_sample[i][l].w[k];
            for (std::size_t k = 0; k < total[l].b.size(); ++k) total[l].b[k] += per_sample[i][l].b[k];
        }
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& block : total) {
        for (double& x : block.w) x *= inv;
        for (double& x : block.b) x *= inv;
    }
    if (mean_loss) *mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) * inv;
    return total;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw UsageError("train: batch size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw UsageError("train: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw UsageError("train: weight decay must be >= 0");
    if (!(learning_rate > 0.0) && learning_rate != 0.0)
        throw UsageError("train: learning rate must be >= 0");
    if (epochs < 0) throw UsageError("train: epochs must be >= 0");
}

void sgd_step(ConvNet& net, const Gradients& grads, const TrainConfig& cfg, Velocity& velocity) {
    if (static_cast<int>(grads.size()) != net.n_layers() ||
        static_cast<int>(velocity.size()) != net.n_layers())
        throw UsageError("sgd_step: gradient/velocity layer count mismatch");
    for (int l = 0; l < net.n_layers(); ++l) {
        if (net.frozen(l)) continue;
        auto& w = net.layer_weights(l);
        auto& b = net.layer_biases(l);
        if (grads[l].w.size() != w.size() || grads[l].b.size() != b.size())
            throw UsageError("sgd_step: gradient shape mismatch");
        for (std::size_t k = 0; k < w.size(); ++k) {
            double& v = velocity[l].w[k];
            v = cfg.momentum * v - cfg.learning_rate * (grads[l].w[k] + cfg.weight_decay * w[k]);
            w[k] += v;
        }
        for (std::size_t k = 0; k < b.size(); ++k) {
            double& v = velocity[l].b[k];
            v = cfg.momentum * v - cfg.learning_rate * (grads[l].b[k] + cfg.weight_decay * b[k]);
            b[k] += v;
        }
    }
}

TrainResult train(ConvNet& net, std::span<const imaging::Image> patches,
                  std::span<const int> labels, const TrainConfig& cfg) {
    cfg.validate();
    if (patches.empty()) throw UsageError("train: empty dataset");
    if (patches.size() != labels.size()) throw UsageError("train: patch/label size mismatch");

    Rng rng(cfg.seed);
    Velocity velocity = zero_gradients(net);
    std::vector<std::size_t> order(patches.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    std::vector<imaging::Image> batch;
    std::vector<int> batch_labels;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            batch_labels.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(patches[order[i]]);
                batch_labels.push_back(labels[order[i]]);
            }
            double loss = 0.0;
            Gradients g = backward(net, batch, batch_labels, &loss);
            sgd_step(net, g, cfg, velocity);
            loss_sum += loss * static_cast<double>(end - start);
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    }
    return result;
}

Regime regime_from_string(const std::string& s) {
    if (s == "FA" || s == "fa") return Regime::FullAdapt;
    if (s == "PA" || s == "pa") return Regime::PartialAdapt;
    if (s == "NA" || s == "na") return Regime::NoAdapt;
    throw UsageError("unknown adaptation regime: " + s);
}

std::string regime_to_string(Regime r) {
    switch (r) {
        case Regime::FullAdapt: return "FA";
        case Regime::PartialAdapt: return "PA";
        case Regime::NoAdapt: return "NA";
    }
    throw InternalError("bad regime");
}

ConvNet adapt(const ConvNet& pretrained, Regime regime, std::span<const imaging::Image> patches,
              std::span<const int> labels, const TrainConfig& cfg, TrainResult* history) {
    if (labels.empty()) throw UsageError("adapt: empty target dataset");
    int classes = 0;
    for (const int y : labels) {
        if (y < 0) throw UsageError("adapt: negative label");
        classes = std::max(classes, y + 1);
    }
    classes = std::max(classes, 2);

    ConvNet net = pretrained;
    net.reinit_head(classes, cfg.seed);
    for (int l = 0; l < net.n_layers(); ++l) net.set_frozen(l, false);
    switch (regime) {
        case Regime::FullAdapt:
            break;
        case Regime::PartialAdapt:
            if (net.n_conv() < 2) throw UsageError("adapt: PA needs at least two conv layers");
            net.set_frozen(0, true);
            net.set_frozen(1, true);
            break;
        case Regime::NoAdapt:
            for (int l = 0; l < net.n_layers(); ++l) net.set_frozen(l, true);
            if (history) history->epoch_loss.clear();
            return net;
    }
    TrainResult res = train(net, patches, labels, cfg);
    if (history) *history = std::move(res);
    return net;
}

std::vector<imaging::Image> response_maps(const ConvNet& net, const imaging::Image& patch,
                                          int conv_layer) {
    if (conv_layer < 0 || conv_layer >= net.n_conv())
        throw UsageError("response_maps: layer index out of range");
    ForwardCache cache;
    forward(net, patch, &cache);
    const Tensor3& pre = cache.conv_prepool[conv_layer];
    std::vector<imaging::Image> maps;
    maps.reserve(pre.maps);
    for (int j = 0; j < pre.maps; ++j) {
        imaging::Image map(pre.w, pre.h, 1.0);
        double lo = pre.at(j, 0, 0);
        double hi = lo;
        for (int y = 0; y < pre.h; ++y)
            for (int x = 0; x < pre.w; ++x) {
                lo = std::min(lo, pre.at(j, y, x));
                hi = std::max(hi, pre.at(j, y, x));
            }
        if (hi > lo) {
            const double inv = 1.0 / (hi - lo);
            for (int y = 0; y < pre.h; ++y)
                for (int x = 0; x < pre.w; ++x) map.at(x, y) = (pre.at(j, y, x) - lo) * inv;
        }
        maps.push_back(std::move(map));
    }
    return maps;
}

FilterChangeReport filter_change(const ConvNet& before, const ConvNet& after, double threshold) {
    if (!(before.config() == after.config()))
        throw UsageError("filter_change: architecture mismatch");
    FilterChangeReport report;
    report.threshold = threshold;
    for (int l = 0; l < before.n_layers(); ++l) {
        const auto& wb = before.layer_weights(l);
        const auto& wa = after.layer_weights(l);
        const auto& bb = before.layer_biases(l);
        const auto& ba = after.layer_biases(l);
        const std::size_t filters = bb.size();
        const std::size_t per_filter = wb.size() / filters;
        LayerChange lc;
        lc.name = before.layer_name(l);
        for (std::size_t f = 0; f < filters; ++f) {
            double norm_sq = 0.0;
            double diff_sq = 0.0;
            for (std::size_t k = f * per_filter; k < (f + 1) * per_filter; ++k) {
                norm_sq += wb[k] * wb[k];
                diff_sq += (wa[k] - wb[k]) * (wa[k] - wb[k]);
            }
            norm_sq += bb[f] * bb[f];
            diff_sq += (ba[f] - bb[f]) * (ba[f] - bb[f]);
            if (norm_sq == 0.0) {
                lc.per_filter.push_back(std::nullopt);
                ++lc.undefined;
            } else {
                const double change = std::sqrt(diff_sq) / std::sqrt(norm_sq);
                lc.per_filter.push_back(change);
                if (change > threshold) ++lc.over_threshold;
            }
        }
        report.layers.push_back(std::move(lc));
    }
    return report;
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big,
              "mixed-endian platforms are unsupported");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
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

    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
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

constexpr char kNetMagic[6] = {'S', 'D', 'N', 'E', 'T', '1'};

} // namespace

void save_net(const ConvNet& net, const std::filesystem::path& path) {
    std::vector<std::uint8_t> out(kNetMagic, kNetMagic + 6);
    const NetConfig& cfg = net.config();
    put_u32(out, static_cast<std::uint32_t>(cfg.input_w));
    put_u32(out, static_cast<std::uint32_t>(cfg.input_h));
    put_u32(out, static_cast<std::uint32_t>(cfg.convs.size()));
    for (const auto& spec : cfg.convs) {
        put_u32(out, static_cast<std::uint32_t>(spec.filters));
        put_u32(out, static_cast<std::uint32_t>(spec.kernel));
    }
    put_u32(out, static_cast<std::uint32_t>(cfg.feat_dim));
    put_u32(out, static_cast<std::uint32_t>(cfg.classes));
    for (int l = 0; l < net.n_layers(); ++l) {
        for (const double v : net.layer_weights(l)) put_f64(out, v);
        for (const double v : net.layer_biases(l)) put_f64(out, v);
    }
    for (int l = 0; l < net.n_layers(); ++l) out.push_back(net.frozen(l) ? 1 : 0);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

ConvNet load_net(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kNetMagic, 6) != 0)
        throw DataError("not an SDNET1 model (unknown magic/version)");
    BinReader rd(bytes.data() + 6, bytes.size() - 6);

    NetConfig cfg;
    cfg.input_w = static_cast<int>(rd.u32());
    cfg.input_h = static_cast<int>(rd.u32());
    const std::uint32_t n_conv = rd.u32();
    if (n_conv == 0 || n_conv > 64) throw DataError("SDNET1: bad conv layer count");
    cfg.convs.clear();
    for (std::uint32_t i = 0; i < n_conv; ++i) {
        NetConfig::ConvSpec spec;
        spec.filters = static_cast<int>(rd.u32());
        spec.kernel = static_cast<int>(rd.u32());
        cfg.convs.push_back(spec);
    }
    cfg.feat_dim = static_cast<int>(rd.u32());
    cfg.classes = static_cast<int>(rd.u32());

    ConvNet net = ConvNet::init(cfg, 0);
    for (int l = 0; l < net.n_layers(); ++l) {
        for (double& v : net.layer_weights(l)) v = rd.f64();
        for (double& v : net.layer_biases(l)) v = rd.f64();
    }
    for (int l = 0; l < net.n_layers(); ++l) net.set_frozen(l, rd.u8() != 0);
    if (!rd.done()) throw DataError("SDNET1: trailing bytes");
    for (int l = 0; l < net.n_layers(); ++l) {
        for (const double v : net.layer_weights(l))
            if (!std::isfinite(v)) throw DataError("SDNET1: non-finite weight");
        for (const double v : net.layer_biases(l))
            if (!std::isfinite(v)) throw DataError("SDNET1: non-finite bias");
    }
    return net;
}

} // namespace sono::cnn
