#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sonodetect/imaging.hpp"

namespace sono::cnn {

// Stack of feature maps, row-major within each map.
struct Tensor3 {
    int maps = 0;
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Tensor3() = default;
    Tensor3(int maps_, int h_, int w_)
        : maps(maps_), h(h_), w(w_), v(static_cast<std::size_t>(maps_) * h_ * w_, 0.0) {}

    const double& at(int m, int y, int x) const {
        return v[(static_cast<std::size_t>(m) * h + y) * w + x];
    }
    double& at(int m, int y, int x) { return v[(static_cast<std::size_t>(m) * h + y) * w + x]; }
    std::size_t size() const { return v.size(); }
};

struct ConvLayer {
    int in_maps = 0;
    int out_maps = 0;
    int kh = 0; // odd
    int kw = 0; // odd
    std::vector<double> weights; // [out][in][kh][kw]
    std::vector<double> biases;  // [out]

    std::size_t weight_index(int out, int in, int y, int x) const {
        return ((static_cast<std::size_t>(out) * in_maps + in) * kh + y) * kw + x;
    }
};

struct DenseLayer {
    int in_dim = 0;
    int out_dim = 0;
    bool relu = false;
    std::vector<double> weights; // [out][in]
    std::vector<double> biases;  // [out]
};

struct NetConfig {
    struct ConvSpec {
        int filters = 0;
        int kernel = 0;
        bool operator==(const ConvSpec&) const = default;
    };
    int input_w = 32;
    int input_h = 32;
    std::vector<ConvSpec> convs = {{8, 5}, {16, 5}, {32, 3}};
    int feat_dim = 64;
    int classes = 2;

    bool operator==(const NetConfig&) const = default;
};

NetConfig default_net_config(int classes);

// Layer order: conv layers, then fc_feat (ReLU), then fc_out (identity).
// The frozen flag per layer gates the SGD update, never the gradient.
class ConvNet {
public:
    static ConvNet init(const NetConfig& cfg, std::uint64_t seed);

    const NetConfig& config() const { return cfg_; }
    int n_conv() const { return static_cast<int>(convs_.size()); }
    int n_layers() const { return n_conv() + 2; }

    const ConvLayer& conv(int i) const { return convs_[i]; }
    ConvLayer& conv(int i) { return convs_[i]; }
    const DenseLayer& fc_feat() const { return fc_feat_; }
    DenseLayer& fc_feat() { return fc_feat_; }
    const DenseLayer& fc_out() const { return fc_out_; }
    DenseLayer& fc_out() { return fc_out_; }

    bool frozen(int layer) const { return frozen_[layer]; }
    void set_frozen(int layer, bool f) { frozen_[layer] = f; }

    // Flat views over a layer's parameters; layers indexed conv..., fc_feat, fc_out.
    std::vector<double>& layer_weights(int layer);
    std::vector<double>& layer_biases(int layer);
    const std::vector<double>& layer_weights(int layer) const;
    const std::vector<double>& layer_biases(int layer) const;
    std::string layer_name(int layer) const;

    void reinit_head(int classes, std::uint64_t seed);

private:
    NetConfig cfg_;
    std::vector<ConvLayer> convs_;
    DenseLayer fc_feat_;
    DenseLayer fc_out_;
    std::vector<bool> frozen_;
};

// Valid-padding correlation summed over input maps, bias add, ReLU, then
// 2x2 max-pool with stride 2: out dims are floor((n-k+1)/2) per axis.
// When prepool_out is given it receives the pre-pool post-ReLU maps.
Tensor3 conv_forward(const Tensor3& input, const ConvLayer& layer, Tensor3* prepool_out = nullptr);

struct ForwardCache {
    std::vector<Tensor3> conv_in;     // input to each conv layer
    std::vector<Tensor3> conv_prepool; // post-ReLU, pre-pool
    std::vector<Tensor3> conv_pooled; // post-ReLU, post-pool
    std::vector<double> flat;
    std::vector<double> feat_pre; // fc_feat pre-ReLU
    std::vector<double> feat;     // fc_feat post-ReLU
    std::vector<double> scores;   // fc_out output
};

std::vector<double> forward(const ConvNet& net, const imaging::Image& patch,
                            ForwardCache* cache = nullptr);

// Penultimate-layer (fc_feat, post-ReLU) feature vector.
std::vector<double> extract_features(const ConvNet& net, const imaging::Image& patch);

struct ParamBlock {
    std::vector<double> w;
    std::vector<double> b;
};

// One block per layer, same order and shapes as the net's layers.
using Gradients = std::vector<ParamBlock>;

Gradients zero_gradients(const ConvNet& net);

// Gradients of the mean softmax cross-entropy over the batch. Frozen layers
// still get gradients; freezing acts only in sgd_step.
Gradients backward(const ConvNet& net, std::span<const imaging::Image> batch,
                   std::span<const int> labels, double* mean_loss = nullptr);

struct TrainConfig {
    int batch_size = 100;
    double momentum = 0.5;
    double weight_decay = 5e-4;
    double learning_rate = 0.01;
    int epochs = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

using Velocity = Gradients;

// Per unfrozen parameter: v <- momentum*v - lr*(g + decay*w); w <- w + v.
// Frozen layers keep both parameters and velocity untouched.
void sgd_step(ConvNet& net, const Gradients& grads, const TrainConfig& cfg, Velocity& velocity);

struct TrainResult {
    std::vector<double> epoch_loss;
};

TrainResult train(ConvNet& net, std::span<const imaging::Image> patches,
                  std::span<const int> labels, const TrainConfig& cfg);

enum class Regime { FullAdapt, PartialAdapt, NoAdapt };

Regime regime_from_string(const std::string& s);
std::string regime_to_string(Regime r);

// Re-initializes the classification head for the target label set, applies
// the regime's freeze pattern (FA: none, PA: first two conv layers,
// NA: everything, no training), and fine-tunes unless NA.
ConvNet adapt(const ConvNet& pretrained, Regime regime, std::span<const imaging::Image> patches,
              std::span<const int> labels, const TrainConfig& cfg, TrainResult* history = nullptr);

// Per-filter pre-pool activation maps of one conv layer, each min-max
// normalized to [0,1]; constant maps normalize to all-zero.
std::vector<imaging::Image> response_maps(const ConvNet& net, const imaging::Image& patch,
                                          int conv_layer);

struct LayerChange {
    std::string name;
    std::vector<std::optional<double>> per_filter; // nullopt when the before-filter has zero norm
    int over_threshold = 0;
    int undefined = 0;
};

struct FilterChangeReport {
    double threshold = 0.40;
    std::vector<LayerChange> layers;
};

// Relative l2 change per filter (kernel and bias concatenated), counted
// against the threshold per layer. Dense layers count each output unit's
// row as one filter.
FilterChangeReport filter_change(const ConvNet& before, const ConvNet& after,
                                 double threshold = 0.40);

// Versioned binary container, magic "SDNET1".
void save_net(const ConvNet& net, const std::filesystem::path& path);
ConvNet load_net(const std::filesystem::path& path);

} // namespace sono::cnn
