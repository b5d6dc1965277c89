// Independent reference implementations used only by tests. Everything here
// is written the slow, obvious way and must stay decoupled from the library
// code paths it checks.
#pragma once

#include <cmath>
#include <vector>

#include "sonodetect/convnet.hpp"
#include "sonodetect/imaging.hpp"
#include "sonodetect/rng.hpp"
#include "sonodetect/texture.hpp"

namespace oracles {

// Dice by counting pixel membership on a discrete grid.
inline double dice_by_enumeration(const sono::imaging::Roi& a, const sono::imaging::Roi& b) {
    const int x0 = std::min(a.x, b.x);
    const int y0 = std::min(a.y, b.y);
    const int x1 = std::max(a.x + a.w, b.x + b.w);
    const int y1 = std::max(a.y + a.h, b.y + b.h);
    long long in_a = 0;
    long long in_b = 0;
    long long in_both = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const bool pa = x >= a.x && x < a.x + a.w && y >= a.y && y < a.y + a.h;
            const bool pb = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
            in_a += pa;
            in_b += pb;
            in_both += pa && pb;
        }
    return 2.0 * static_cast<double>(in_both) / static_cast<double>(in_a + in_b);
}

inline double naive_rect_sum(const sono::imaging::Image& img, const sono::imaging::Roi& r) {
    double acc = 0.0;
    for (int y = r.y; y < r.y + r.h; ++y)
        for (int x = r.x; x < r.x + r.w; ++x) acc += img.at(x, y);
    return acc;
}

inline sono::imaging::Image random_image(int w, int h, double spacing, sono::Rng& rng) {
    sono::imaging::Image img(w, h, spacing);
    for (double& v : img.pixels()) v = rng.next_double();
    return img;
}

// Quadruple-nested-loop valid correlation + bias + ReLU + 2x2/2 max pool.
inline sono::cnn::Tensor3 naive_conv_forward(const sono::cnn::Tensor3& in,
                                             const sono::cnn::ConvLayer& layer) {
    using sono::cnn::Tensor3;
    const int ph = in.h - layer.kh + 1;
    const int pw = in.w - layer.kw + 1;
    Tensor3 pre(layer.out_maps, ph, pw);
    for (int j = 0; j < layer.out_maps; ++j)
        for (int y = 0; y < ph; ++y)
            for (int x = 0; x < pw; ++x) {
                double acc = layer.biases[j];
                for (int k = 0; k < layer.in_maps; ++k)
                    for (int dy = 0; dy < layer.kh; ++dy)
                        for (int dx = 0; dx < layer.kw; ++dx)
                            acc += in.at(k, y + dy, x + dx) *
                                   layer.weights[layer.weight_index(j, k, dy, dx)];
                pre.at(j, y, x) = acc > 0.0 ? acc : 0.0;
            }
    Tensor3 out(layer.out_maps, ph / 2, pw / 2);
    for (int j = 0; j < out.maps; ++j)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                double best = pre.at(j, 2 * y, 2 * x);
                best = std::max(best, pre.at(j, 2 * y, 2 * x + 1));
                best = std::max(best, pre.at(j, 2 * y + 1, 2 * x));
                best = std::max(best, pre.at(j, 2 * y + 1, 2 * x + 1));
                out.at(j, y, x) = best;
            }
    return out;
}

// Straight-line reimplementation of the whole forward pass.
inline std::vector<double> naive_forward(const sono::cnn::ConvNet& net,
                                         const sono::imaging::Image& patch) {
    sono::cnn::Tensor3 t(1, patch.height(), patch.width());
    t.v = patch.pixels();
    for (int l = 0; l < net.n_conv(); ++l) t = naive_conv_forward(t, net.conv(l));
    std::vector<double> flat = t.v;
    const auto dense = [](const sono::cnn::DenseLayer& layer, const std::vector<double>& in) {
        std::vector<double> out(layer.out_dim);
        for (int o = 0; o < layer.out_dim; ++o) {
            double acc = layer.biases[o];
            for (int i = 0; i < layer.in_dim; ++i)
                acc += layer.weights[static_cast<std::size_t>(o) * layer.in_dim + i] * in[i];
            out[o] = layer.relu ? std::max(0.0, acc) : acc;
        }
        return out;
    };
    return dense(net.fc_out(), dense(net.fc_feat(), flat));
}

inline std::vector<double> naive_features(const sono::cnn::ConvNet& net,
                                          const sono::imaging::Image& patch) {
    sono::cnn::Tensor3 t(1, patch.height(), patch.width());
    t.v = patch.pixels();
    for (int l = 0; l < net.n_conv(); ++l) t = naive_conv_forward(t, net.conv(l));
    const auto& layer = net.fc_feat();
    std::vector<double> out(layer.out_dim);
    for (int o = 0; o < layer.out_dim; ++o) {
        double acc = layer.biases[o];
        for (int i = 0; i < layer.in_dim; ++i)
            acc += layer.weights[static_cast<std::size_t>(o) * layer.in_dim + i] * t.v[i];
        out[o] = std::max(0.0, acc);
    }
    return out;
}

// Per-pixel weighted sums for a Haar feature, no integral image involved.
inline double naive_haar_value(const sono::imaging::Image& patch,
                               const sono::haar::HaarFeature& feat) {
    double acc = 0.0;
    for (const auto& wr : feat.rects) {
        double s = 0.0;
        for (int y = wr.rect.y; y < wr.rect.y + wr.rect.h; ++y)
            for (int x = wr.rect.x; x < wr.rect.x + wr.rect.w; ++x) s += patch.at(x, y);
        acc += wr.weight * s / static_cast<double>(wr.rect.area());
    }
    return acc;
}

// Axis-aligned half-extents of an ellipse with semi-axes (a, b) rotated by
// theta: hx = sqrt(a^2 cos^2 + b^2 sin^2), hy likewise.
struct EllipseBox {
    double x0, y0, x1, y1;
};

inline EllipseBox analytic_ellipse_box(double cx, double cy, double a, double b, double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double hx = std::sqrt(a * a * c * c + b * b * s * s);
    const double hy = std::sqrt(a * a * s * s + b * b * c * c);
    return {cx - hx, cy - hy, cx + hx, cy + hy};
}

// Mean batch softmax cross-entropy as a plain function of the net, for
// central finite differences.
inline double batch_loss(const sono::cnn::ConvNet& net,
                         const std::vector<sono::imaging::Image>& batch,
                         const std::vector<int>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::vector<double> scores = naive_forward(net, batch[i]);
        double mx = scores[0];
        for (const double s : scores) mx = std::max(mx, s);
        double denom = 0.0;
        for (const double s : scores) denom += std::exp(s - mx);
        total += -(scores[labels[i]] - mx - std::log(denom));
    }
    return total / static_cast<double>(batch.size());
}

} // namespace oracles
