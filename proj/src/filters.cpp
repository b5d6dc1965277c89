#include "sonodetect/filters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sono::filters {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, in place. inverse=true omits the 1/N factor
// (callers normalize).
void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Bluestein chirp-z for arbitrary sizes, built on the power-of-two kernel.
void fft_any(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n <= 1) return;
    if (is_pow2(n)) {
        fft_pow2(a, inverse);
        return;
    }
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;
    std::vector<std::complex<double>> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // exp(-i*pi*k^2/n), with k^2 reduced mod 2n to keep the angle accurate.
        const std::size_t k2 = (k * k) % (2 * n);
        const double ang = (inverse ? 1.0 : -1.0) * kPi * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = {std::cos(ang), std::sin(ang)};
    }
    std::vector<std::complex<double>> fa(m, {0.0, 0.0});
    std::vector<std::complex<double>> fb(m, {0.0, 0.0});
    for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
    fb[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(chirp[k]);
    fft_pow2(fa, false);
    fft_pow2(fb, false);
    for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
    fft_pow2(fa, true);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * inv_m * chirp[k];
}

void fft_2d(Spectrum& s, bool inverse) {
    std::vector<std::complex<double>> line(std::max(s.width, s.height));
    for (int y = 0; y < s.height; ++y) {
        line.assign(s.v.begin() + static_cast<std::size_t>(y) * s.width,
                    s.v.begin() + static_cast<std::size_t>(y + 1) * s.width);
        fft_any(line, inverse);
        std::copy(line.begin(), line.end(), s.v.begin() + static_cast<std::size_t>(y) * s.width);
    }
    for (int x = 0; x < s.width; ++x) {
        line.resize(s.height);
        for (int y = 0; y < s.height; ++y) line[y] = s.at(x, y);
        fft_any(line, inverse);
        for (int y = 0; y < s.height; ++y) s.at(x, y) = line[y];
    }
}

int reflect_index(int i, int n) {
    // Half-sample symmetric: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

Grid conv_rows(const Grid& in, const std::vector<double>& kernel) {
    const int radius = static_cast<int>(kernel.size() / 2);
    Grid out(in.width, in.height);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += kernel[t + radius] * in.at(reflect_index(x + t, in.width), y);
            out.at(x, y) = acc;
        }
    return out;
}

Grid conv_cols(const Grid& in, const std::vector<double>& kernel) {
    const int radius = static_cast<int>(kernel.size() / 2);
    Grid out(in.width, in.height);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += kernel[t + radius] * in.at(x, reflect_index(y + t, in.height));
            out.at(x, y) = acc;
        }
    return out;
}

struct GaussianKernels {
    std::vector<double> g;  // smoothing, sums to 1
    std::vector<double> g1; // first derivative, sum(-t*g1) = 1
    std::vector<double> g2; // second derivative, sum(t^2*g2) = 2
};

// Sampled analytic kernels with discrete moment corrections so constants map
// to zero and quadratics differentiate exactly.
GaussianKernels gaussian_kernels(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    GaussianKernels k;
    k.g.resize(2 * radius + 1);
    k.g1.resize(2 * radius + 1);
    k.g2.resize(2 * radius + 1);
    const double s2 = sigma * sigma;
    for (int t = -radius; t <= radius; ++t) {
        const double gt = std::exp(-0.5 * t * t / s2);
        k.g[t + radius] = gt;
        k.g1[t + radius] = -t / s2 * gt;
        k.g2[t + radius] = (t * t - s2) / (s2 * s2) * gt;
    }
    const double gsum = std::accumulate(k.g.begin(), k.g.end(), 0.0);
    for (double& v : k.g) v /= gsum;

    double m1 = 0.0;
    for (int t = -radius; t <= radius; ++t) m1 += t * k.g1[t + radius];
    for (double& v : k.g1) v /= m1;

    double mean2 = std::accumulate(k.g2.begin(), k.g2.end(), 0.0) / k.g2.size();
    for (double& v : k.g2) v -= mean2;
    double m2 = 0.0;
    for (int t = -radius; t <= radius; ++t) m2 += t * t * k.g2[t + radius];
    for (double& v : k.g2) v *= 2.0 / m2;
    return k;
}

Grid to_grid(const imaging::Image& img) {
    Grid g(img.width(), img.height());
    g.v = img.pixels();
    return g;
}

double median_of(std::vector<double> values) {
    if (values.empty()) return 0.0;
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + mid, values.end());
    return values[mid];
}

} // namespace

HessianMaps gaussian_hessian(const imaging::Image& img, double sigma) {
    if (!(sigma > 0.0)) throw UsageError("gaussian_hessian: sigma must be positive");
    const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    if (radius >= img.width() || radius >= img.height())
        throw UsageError("gaussian_hessian: sigma too large for image");
    const GaussianKernels k = gaussian_kernels(sigma);
    const Grid src = to_grid(img);
    const double s2 = sigma * sigma;

    HessianMaps maps;
    maps.lxx = conv_cols(conv_rows(src, k.g2), k.g);
    maps.lyy = conv_rows(conv_cols(src, k.g2), k.g);
    maps.lxy = conv_cols(conv_rows(src, k.g1), k.g1);
    for (double& v : maps.lxx.v) v *= s2;
    for (double& v : maps.lyy.v) v *= s2;
    for (double& v : maps.lxy.v) v *= s2;
    return maps;
}

imaging::Image frangi(const imaging::Image& img, const FrangiConfig& cfg) {
    if (cfg.scales.empty()) throw UsageError("frangi: need at least one scale");
    if (!(cfg.beta > 0.0)) throw UsageError("frangi: beta must be positive");
    if (cfg.c && !(*cfg.c > 0.0)) throw UsageError("frangi: c must be positive");

    imaging::Image out(img.width(), img.height(), img.spacing(), 0.0);
    const std::size_t n = img.pixels().size();
    std::vector<double> lam1(n);
    std::vector<double> lam2(n);
    for (const double sigma : cfg.scales) {
        const HessianMaps maps = gaussian_hessian(img, sigma);
        double max_s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double xx = maps.lxx.v[i];
            const double yy = maps.lyy.v[i];
            const double xy = maps.lxy.v[i];
            const double half_tr = 0.5 * (xx + yy);
            const double disc = std::sqrt(0.25 * (xx - yy) * (xx - yy) + xy * xy);
            double a = half_tr - disc;
            double b = half_tr + disc;
            if (std::abs(a) > std::abs(b)) std::swap(a, b);
            lam1[i] = a; // |lam1| <= |lam2|
            lam2[i] = b;
            max_s = std::max(max_s, std::sqrt(a * a + b * b));
        }
        if (max_s < 1e-12) continue; // flat at this scale, Hessian is rounding noise
        const double c = cfg.c ? *cfg.c : 0.5 * max_s;
        if (!(c > 0.0)) continue;
        const double beta_den = 2.0 * cfg.beta * cfg.beta;
        const double c_den = 2.0 * c * c;
        for (std::size_t i = 0; i < n; ++i) {
            if (lam2[i] >= 0.0) continue; // bright-on-dark polarity rule
            const double rb = lam1[i] / lam2[i];
            const double s_sq = lam1[i] * lam1[i] + lam2[i] * lam2[i];
            const double v = std::exp(-rb * rb / beta_den) * (1.0 - std::exp(-s_sq / c_den));
            out.pixels()[i] = std::max(out.pixels()[i], v);
        }
    }
    return out;
}

Spectrum dft2(const Grid& img) {
    Spectrum s;
    s.width = img.width;
    s.height = img.height;
    s.v.resize(img.v.size());
    for (std::size_t i = 0; i < img.v.size(); ++i) s.v[i] = {img.v[i], 0.0};
    fft_2d(s, false);
    return s;
}

Spectrum idft2_complex(const Spectrum& spec) {
    Spectrum s = spec;
    fft_2d(s, true);
    const double inv = 1.0 / (static_cast<double>(s.width) * s.height);
    for (auto& c : s.v) c *= inv;
    return s;
}

Grid idft2(const Spectrum& spec) {
    const Spectrum s = idft2_complex(spec);
    Grid out(s.width, s.height);
    for (std::size_t i = 0; i < s.v.size(); ++i) out.v[i] = s.v[i].real();
    return out;
}

imaging::Image phase_congruency(const imaging::Image& img, const PhaseCongruencyConfig& cfg) {
    const int w = img.width();
    const int h = img.height();
    if (w < 8 || h < 8) throw UsageError("phase_congruency: image must be at least 8x8");
    if (cfg.scales < 2) throw UsageError("phase_congruency: need at least 2 scales");
    if (cfg.orientations < 2) throw UsageError("phase_congruency: need at least 2 orientations");
    if (!(cfg.epsilon > 0.0)) throw UsageError("phase_congruency: epsilon must be positive");
    if (cfg.noise_threshold && *cfg.noise_threshold < 0.0)
        throw UsageError("phase_congruency: noise threshold must be >= 0");

    const std::size_t n = static_cast<std::size_t>(w) * h;
    const Spectrum freq = dft2(to_grid(img));

    // Frequency coordinates in cycles per pixel.
    std::vector<double> fx(w);
    std::vector<double> fy(h);
    for (int x = 0; x < w; ++x) fx[x] = (x <= w / 2 ? x : x - w) / static_cast<double>(w);
    for (int y = 0; y < h; ++y) fy[y] = (y <= h / 2 ? y : y - h) / static_cast<double>(h);

    const double sigma_theta = kPi / (2.0 * cfg.orientations);
    const double log_sigma = std::log(cfg.sigma_on_f);

    std::vector<double> numerator(n, 0.0); // sum over orientations of W*max(E-T,0)
    std::vector<double> total_amp(n, 0.0); // sum over orientations and scales of A

    std::vector<std::vector<double>> even(cfg.scales, std::vector<double>(n));
    std::vector<std::vector<double>> odd(cfg.scales, std::vector<double>(n));
    std::vector<double> sum_e(n);
    std::vector<double> sum_o(n);
    std::vector<double> sum_a(n);
    std::vector<double> max_a(n);
    Spectrum filtered;
    filtered.width = w;
    filtered.height = h;
    filtered.v.resize(n);

    for (int o = 0; o < cfg.orientations; ++o) {
        const double theta = o * kPi / cfg.orientations;
        const double cos_t = std::cos(theta);
        const double sin_t = std::sin(theta);
        std::fill(sum_e.begin(), sum_e.end(), 0.0);
        std::fill(sum_o.begin(), sum_o.end(), 0.0);
        std::fill(sum_a.begin(), sum_a.end(), 0.0);
        std::fill(max_a.begin(), max_a.end(), 0.0);

        for (int s = 0; s < cfg.scales; ++s) {
            const double wavelength = cfg.min_wavelength * std::pow(cfg.mult, s);
            const double f0 = 1.0 / wavelength;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    const double r = std::hypot(fx[x], fy[y]);
                    if (r == 0.0) {
                        filtered.v[i] = 0.0; // log-Gabor has no DC component
                        continue;
                    }
                    const double lr = std::log(r / f0);
                    const double radial = std::exp(-lr * lr / (2.0 * log_sigma * log_sigma));
                    // One-sided angular window so the inverse transform yields
                    // the analytic (even + i*odd) response.
                    const double ds = sin_t * fx[x] - cos_t * fy[y];
                    const double dc = cos_t * fx[x] + sin_t * fy[y];
                    const double dtheta = std::abs(std::atan2(ds, dc));
                    const double angular = std::exp(-dtheta * dtheta / (2.0 * sigma_theta * sigma_theta));
                    filtered.v[i] = freq.v[i] * (radial * angular);
                }
            }
            const Spectrum resp = idft2_complex(filtered);
            for (std::size_t i = 0; i < n; ++i) {
                const double e = resp.v[i].real();
                const double od = resp.v[i].imag();
                even[s][i] = e;
                odd[s][i] = od;
                const double a = std::hypot(e, od);
                sum_e[i] += e;
                sum_o[i] += od;
                sum_a[i] += a;
                max_a[i] = std::max(max_a[i], a);
            }
        }

        double t_noise;
        if (cfg.noise_threshold) {
            t_noise = *cfg.noise_threshold;
        } else {
            // Crude noise proxy: scaled median of the smallest-scale amplitude.
            std::vector<double> a0(n);
            for (std::size_t i = 0; i < n; ++i) a0[i] = std::hypot(even[0][i], odd[0][i]);
            t_noise = 2.0 * median_of(std::move(a0));
        }

        // Relative epsilon keeps every ratio invariant to contrast scaling.
        const double peak = *std::max_element(max_a.begin(), max_a.end());
        const double eps_rel = cfg.epsilon * peak;

        for (std::size_t i = 0; i < n; ++i) {
            total_amp[i] += sum_a[i];
            const double mag = std::hypot(sum_e[i], sum_o[i]);
            if (mag <= 0.0 || peak <= 0.0) continue;
            const double me = sum_e[i] / mag;
            const double mo = sum_o[i] / mag;
            double energy = 0.0;
            for (int s = 0; s < cfg.scales; ++s)
                energy += even[s][i] * me + odd[s][i] * mo -
                          std::abs(even[s][i] * mo - odd[s][i] * me);
            const double spread = sum_a[i] / ((max_a[i] + eps_rel) * cfg.scales);
            const double weight = 1.0 / (1.0 + std::exp(cfg.gain * (cfg.cutoff - spread)));
            numerator[i] += weight * std::max(energy - t_noise, 0.0);
        }
    }

    imaging::Image out(w, h, img.spacing(), 0.0);
    const double global_peak = *std::max_element(total_amp.begin(), total_amp.end());
    if (global_peak > 0.0) {
        const double eps_rel = cfg.epsilon * global_peak;
        for (std::size_t i = 0; i < n; ++i)
            out.pixels()[i] = std::clamp(numerator[i] / (total_amp[i] + eps_rel), 0.0, 1.0);
    }
    return out;
}

ResponsePanel compare_responses(const cnn::ConvNet& net, const imaging::Image& patch,
                                int conv_layer, const FrangiConfig& frangi_cfg,
                                const PhaseCongruencyConfig& pc_cfg) {
    ResponsePanel panel;
    const std::vector<imaging::Image> net_maps = response_maps(net, patch, conv_layer);
    for (std::size_t j = 0; j < net_maps.size(); ++j) {
        const std::string name =
            "net_l" + std::to_string(conv_layer + 1) + "_f" + std::to_string(j);
        panel.maps.emplace_back(name, imaging::resample(net_maps[j], patch.width(), patch.height()));
    }
    panel.maps.emplace_back("frangi", frangi(patch, frangi_cfg));
    panel.maps.emplace_back("pc", phase_congruency(patch, pc_cfg));

    const std::size_t m = panel.maps.size();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const auto& a = panel.maps[i].second.pixels();
            const auto& b = panel.maps[j].second.pixels();
            const double inv_n = 1.0 / static_cast<double>(a.size());
            double ma = 0.0;
            double mb = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) {
                ma += a[k];
                mb += b[k];
            }
            ma *= inv_n;
            mb *= inv_n;
            double sab = 0.0;
            double saa = 0.0;
            double sbb = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) {
                sab += (a[k] - ma) * (b[k] - mb);
                saa += (a[k] - ma) * (a[k] - ma);
                sbb += (b[k] - mb) * (b[k] - mb);
            }
            ResponsePanel::Correlation corr{panel.maps[i].first, panel.maps[j].first, std::nullopt};
            if (saa > 0.0 && sbb > 0.0) corr.pearson = sab / std::sqrt(saa * sbb);
            panel.correlations.push_back(std::move(corr));
        }
    }
    return panel;
}

} // namespace sono::filters
