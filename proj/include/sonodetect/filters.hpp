#pragma once

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "sonodetect/convnet.hpp"
#include "sonodetect/imaging.hpp"

namespace sono::filters {

// Unconstrained raster for intermediate maps (derivatives, energies) whose
// values are not confined to [0,1].
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int w, int h) : width(w), height(h), v(static_cast<std::size_t>(w) * h, 0.0) {}

    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
    double& at(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
};

struct HessianMaps {
    Grid lxx;
    Grid lxy;
    Grid lyy;
};

// Scale-normalized (sigma^2) Gaussian second derivatives via separable
// convolution with analytic kernels; reflective boundary handling.
HessianMaps gaussian_hessian(const imaging::Image& img, double sigma);

struct FrangiConfig {
    std::vector<double> scales = {1.0, 2.0, 4.0};
    double beta = 0.5;
    // Structureness constant; unset means half the maximum Frobenius Hessian
    // norm of the image at each scale.
    std::optional<double> c;
};

// Multi-scale vesselness for bright ridges on dark background, in [0,1].
imaging::Image frangi(const imaging::Image& img, const FrangiConfig& cfg);

struct PhaseCongruencyConfig {
    int scales = 4;
    int orientations = 6;
    double min_wavelength = 3.0;
    double mult = 2.1;
    double sigma_on_f = 0.55; // log-Gabor radial bandwidth parameter
    // Unset means estimated from the smallest-scale amplitude median; 0
    // disables noise compensation.
    std::optional<double> noise_threshold;
    double epsilon = 1e-4;
    double cutoff = 0.4; // frequency-spread sigmoid midpoint
    double gain = 10.0;  // frequency-spread sigmoid gain
};

// Two-dimensional Kovesi-style phase congruency over a log-Gabor filter
// bank, orientation-summed, output in [0,1].
imaging::Image phase_congruency(const imaging::Image& img, const PhaseCongruencyConfig& cfg);

struct Spectrum {
    int width = 0;
    int height = 0;
    std::vector<std::complex<double>> v;

    std::complex<double> at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
    std::complex<double>& at(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
};

// Unnormalized forward DFT / 1/(WH)-normalized inverse, any size (radix-2
// plus Bluestein). idft2(dft2(x)) recovers x to machine precision.
Spectrum dft2(const Grid& img);
Grid idft2(const Spectrum& spec); // real part
Spectrum idft2_complex(const Spectrum& spec);

struct ResponsePanel {
    // Named maps, all resampled to the patch size: one per network filter of
    // the chosen layer, then "frangi" and "pc".
    std::vector<std::pair<std::string, imaging::Image>> maps;
    struct Correlation {
        std::string a;
        std::string b;
        std::optional<double> pearson; // absent when either map is constant
    };
    std::vector<Correlation> correlations;
};

// Side-by-side comparison of learned per-filter responses against the two
// hand-engineered references, with pairwise Pearson correlations.
ResponsePanel compare_responses(const cnn::ConvNet& net, const imaging::Image& patch,
                                int conv_layer, const FrangiConfig& frangi_cfg,
                                const PhaseCongruencyConfig& pc_cfg);

} // namespace sono::filters
