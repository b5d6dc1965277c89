#include "sonodetect/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sonodetect/rng.hpp"

namespace sono::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;

double smoothstep(double lo, double hi, double x) {
    const double t = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

PhantomGeometry draw_geometry(Rng& rng, const PhantomParams& p) {
    PhantomGeometry g;
    g.length_mm = rng.uniform(p.length_min_mm, p.length_max_mm);
    g.width_mm = rng.uniform(p.width_min_mm, p.width_max_mm);
    g.theta_rad = rng.uniform(p.orient_min_deg, p.orient_max_deg) * kPi / 180.0;
    g.a_px = 0.5 * g.length_mm / p.spacing;
    g.b_px = 0.5 * g.width_mm / p.spacing;
    const double c = std::cos(g.theta_rad);
    const double s = std::sin(g.theta_rad);
    const double hx = std::sqrt(g.a_px * g.a_px * c * c + g.b_px * g.b_px * s * s);
    const double hy = std::sqrt(g.a_px * g.a_px * s * s + g.b_px * g.b_px * c * c);
    const double m = p.placement_margin_px;
    g.cx_px = rng.uniform(hx + m, p.width - 1 - hx - m);
    g.cy_px = rng.uniform(hy + m, p.height - 1 - hy - m);
    g.distractors = rng.uniform_int(p.distractor_min, p.distractor_max);
    return g;
}

// Kidney cross-section intensity as a function of normalized elliptical
// radius: bright capsule rim, dark cortex, bright central sinus.
double kidney_profile(double r) {
    const double cortex = 0.13;
    const double sinus = 1.0 - smoothstep(0.42, 0.58, r);
    const double rim = smoothstep(0.80, 0.92, r);
    return cortex + (0.72 - cortex) * sinus + (0.88 - cortex) * rim;
}

} // namespace

void PhantomParams::validate() const {
    if (width < 16 || height < 16) throw UsageError("phantom: image too small");
    if (!(spacing > 0.0)) throw UsageError("phantom: spacing must be positive");
    if (!(length_min_mm > 0.0) || !(length_max_mm >= length_min_mm))
        throw UsageError("phantom: bad length range");
    if (!(width_min_mm > 0.0) || !(width_max_mm >= width_min_mm))
        throw UsageError("phantom: bad width range");
    if (!(length_min_mm > width_max_mm))
        throw UsageError("phantom: length range must lie strictly above width range");
    if (!(orient_max_deg >= orient_min_deg)) throw UsageError("phantom: bad orientation range");
    if (!(speckle_shape > 0.0)) throw UsageError("phantom: speckle shape must be positive");
    if (speckle_amplitude < 0.0 || speckle_amplitude > 1.0)
        throw UsageError("phantom: speckle amplitude must be in [0,1]");
    if (background_amplitude < 0.0 || background_amplitude > 1.0)
        throw UsageError("phantom: background amplitude must be in [0,1]");
    if (distractor_min < 0 || distractor_max < distractor_min)
        throw UsageError("phantom: bad distractor range");
    const double a_max = 0.5 * length_max_mm / spacing;
    const double half_fov = 0.5 * (std::min(width, height) - 1);
    if (a_max + placement_margin_px > half_fov)
        throw UsageError("phantom: kidney cannot fit in the field of view at this spacing");
}

PhantomGeometry sample_geometry(std::uint64_t seed, const PhantomParams& p) {
    p.validate();
    Rng rng(seed);
    return draw_geometry(rng, p);
}

Sample generate_phantom(std::uint64_t seed, const PhantomParams& p) {
    p.validate();
    Rng rng(seed);
    const PhantomGeometry g = draw_geometry(rng, p);

    const int w = p.width;
    const int h = p.height;
    imaging::Image img(w, h, p.spacing);

    // Low-frequency background texture: three random-phase plane waves.
    double bg_kx[3];
    double bg_ky[3];
    double bg_ph[3];
    for (int i = 0; i < 3; ++i) {
        const double ang = rng.uniform(0.0, kPi);
        const double freq = rng.uniform(0.02, 0.06); // cycles per pixel
        bg_kx[i] = 2.0 * kPi * freq * std::cos(ang);
        bg_ky[i] = 2.0 * kPi * freq * std::sin(ang);
        bg_ph[i] = rng.uniform(0.0, 2.0 * kPi);
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double tex = 0.0;
            for (int i = 0; i < 3; ++i) tex += std::sin(bg_kx[i] * x + bg_ky[i] * y + bg_ph[i]);
            img.at(x, y) = 0.28 + p.background_amplitude * 0.5 * (tex / 3.0);
        }
    }

    // Kidney ellipse; the ground-truth box is the tight extent of the mask.
    const double cth = std::cos(g.theta_rad);
    const double sth = std::sin(g.theta_rad);
    int min_x = w;
    int max_x = -1;
    int min_y = h;
    int max_y = -1;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dx = x - g.cx_px;
            const double dy = y - g.cy_px;
            const double u = (dx * cth + dy * sth) / g.a_px;
            const double v = (-dx * sth + dy * cth) / g.b_px;
            const double r = std::sqrt(u * u + v * v);
            if (r <= 1.0) {
                img.at(x, y) = kidney_profile(r);
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
            }
        }
    }
    if (max_x < 0) throw InternalError("phantom: empty kidney mask");

    // Distractor arcs (diaphragm / liver-boundary analogs).
    for (int d = 0; d < g.distractors; ++d) {
        const double acx = rng.uniform(0.0, w - 1.0);
        const double acy = rng.uniform(0.0, h - 1.0);
        const double radius = rng.uniform(25.0, 70.0) / p.spacing;
        const double thick = 2.5 / p.spacing;
        const double a0 = rng.uniform(0.0, 2.0 * kPi);
        const double span = rng.uniform(0.6, 2.0);
        const double intensity = rng.uniform(0.70, 0.92);
        const int x0 = std::max(0, static_cast<int>(std::floor(acx - radius - thick)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(acx + radius + thick)));
        const int y0 = std::max(0, static_cast<int>(std::floor(acy - radius - thick)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(acy + radius + thick)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - acx;
                const double dy = y - acy;
                const double rr = std::sqrt(dx * dx + dy * dy);
                if (std::abs(rr - radius) > 0.5 * thick) continue;
                double da = std::atan2(dy, dx) - a0;
                da -= 2.0 * kPi * std::floor(da / (2.0 * kPi));
                if (da > span) continue;
                const double fall = 1.0 - std::abs(rr - radius) / (0.5 * thick);
                img.at(x, y) = std::max(img.at(x, y), intensity * (0.5 + 0.5 * fall));
            }
        }
    }

    // Unit-mean multiplicative speckle, blended by amplitude.
    if (p.speckle_amplitude > 0.0) {
        const double amp = p.speckle_amplitude;
        const double shape = p.speckle_shape;
        for (double& v : img.pixels()) {
            const double field = (1.0 - amp) + amp * rng.gamma(shape) / shape;
            v *= field;
        }
    }
    for (double& v : img.pixels()) v = std::clamp(v, 0.0, 1.0);

    Sample sample{std::move(img), imaging::Roi{min_x, min_y, max_x - min_x + 1, max_y - min_y + 1},
                  seed};
    return sample;
}

DatasetManifest generate_dataset(int n, std::uint64_t seed, const PhantomParams& p,
                                 const std::string& split, const std::filesystem::path& out_dir) {
    if (n < 1) throw UsageError("generate_dataset: n must be >= 1");
    std::filesystem::create_directories(out_dir);
    DatasetManifest manifest;
    manifest.split = split;
    for (int i = 0; i < n; ++i) {
        const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
        Sample sample = generate_phantom(s, p);
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04d.pgm", split.c_str(), i);
        imaging::save_pgm(sample.image, out_dir / name);
        manifest.entries.push_back({name, sample.gt, s});
    }
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& csv_path) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + csv_path.string());
    out << "path,x,y,w,h,seed,split\n";
    for (const auto& e : manifest.entries) {
        out << e.path << ',' << e.gt.x << ',' << e.gt.y << ',' << e.gt.w << ',' << e.gt.h << ','
            << e.seed << ',' << manifest.split << '\n';
    }
    if (!out) throw DataError("write failed: " + csv_path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw DataError("cannot open " + csv_path.string());
    std::string line;
    if (!std::getline(in, line) || line != "path,x,y,w,h,seed,split")
        throw DataError("manifest: bad header in " + csv_path.string());
    DatasetManifest manifest;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        ManifestEntry e;
        std::string split;
        auto next = [&](const char* what) {
            if (!std::getline(ss, field, ',')) throw DataError(std::string("manifest: missing ") + what);
            return field;
        };
        e.path = next("path");
        e.gt.x = std::stoi(next("x"));
        e.gt.y = std::stoi(next("y"));
        e.gt.w = std::stoi(next("w"));
        e.gt.h = std::stoi(next("h"));
        e.seed = std::stoull(next("seed"));
        split = next("split");
        if (!e.gt.valid()) throw DataError("manifest: invalid ROI for " + e.path);
        if (manifest.entries.empty()) manifest.split = split;
        else if (split != manifest.split) throw DataError("manifest: mixed split tags");
        manifest.entries.push_back(std::move(e));
    }
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        for (std::size_t j = i + 1; j < manifest.entries.size(); ++j)
            if (manifest.entries[i].path == manifest.entries[j].path)
                throw DataError("manifest: duplicate path " + manifest.entries[i].path);
    return manifest;
}

std::vector<LabeledPatch> generate_source_task(int n, std::uint64_t seed, int classes,
                                               int patch_size) {
    if (classes < 2 || classes > 4) throw UsageError("source task: classes must be in [2,4]");
    if (n < 2 * classes) throw UsageError("source task: need at least 2 samples per class");
    if (patch_size < 16) throw UsageError("source task: patch too small");

    Rng rng(seed);
    std::vector<LabeledPatch> out;
    out.reserve(static_cast<std::size_t>(n));
    const double ps = patch_size;
    for (int i = 0; i < n; ++i) {
        const int label = i % classes;
        const double bg = rng.uniform(0.05, 0.30);
        const double fg = rng.uniform(0.55, 0.95);
        imaging::Image patch(patch_size, patch_size, 1.0, bg);
        const double cx = rng.uniform(0.40 * ps, 0.60 * ps);
        const double cy = rng.uniform(0.40 * ps, 0.60 * ps);
        const double size = rng.uniform(0.22 * ps, 0.36 * ps);
        const double rot = rng.uniform(0.0, kPi);
        // Round ellipses vs thin bars keeps the two blob classes separable.
        const double minor = size * (label == 1 ? rng.uniform(0.25, 0.50) : rng.uniform(0.55, 0.85));
        const double wavelength = rng.uniform(4.0, 9.0);
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        const double cr = std::cos(rot);
        const double sr = std::sin(rot);

        // Triangle vertices for label 2.
        double tx[3];
        double ty[3];
        for (int k = 0; k < 3; ++k) {
            tx[k] = cx + size * std::cos(rot + k * 2.0 * kPi / 3.0);
            ty[k] = cy + size * std::sin(rot + k * 2.0 * kPi / 3.0);
        }
        auto side = [](double ax, double ay, double bx, double by, double px, double py) {
            return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        };

        for (int y = 0; y < patch_size; ++y) {
            for (int x = 0; x < patch_size; ++x) {
                const double dx = x - cx;
                const double dy = y - cy;
                const double u = dx * cr + dy * sr;
                const double v = -dx * sr + dy * cr;
                bool inside = false;
                switch (label) {
                    case 0:
                        inside = (u * u) / (size * size) + (v * v) / (minor * minor) <= 1.0;
                        break;
                    case 1:
                        inside = std::abs(u) <= size && std::abs(v) <= minor;
                        break;
                    case 2: {
                        const double s0 = side(tx[0], ty[0], tx[1], ty[1], x, y);
                        const double s1 = side(tx[1], ty[1], tx[2], ty[2], x, y);
                        const double s2 = side(tx[2], ty[2], tx[0], ty[0], x, y);
                        inside = (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
                        break;
                    }
                    case 3: {
                        const double t = std::sin(2.0 * kPi / wavelength * u + phase);
                        patch.at(x, y) = bg + (fg - bg) * 0.5 * (1.0 + t);
                        break;
                    }
                    default: break;
                }
                if (label != 3 && inside) patch.at(x, y) = fg;
            }
        }
        out.push_back({std::move(patch), label});
    }
    return out;
}

} // namespace sono::synth
