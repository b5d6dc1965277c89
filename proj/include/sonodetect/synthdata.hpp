#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sonodetect/imaging.hpp"

namespace sono::synth {

// Parameters of the ultrasound-like kidney phantom. Defaults follow adult
// kidney dimension guidelines: 75-140 mm long axis, 35-70 mm short axis,
// orientation -25..+15 degrees.
struct PhantomParams {
    int width = 160;
    int height = 160;
    double spacing = 1.0; // mm per pixel

    double length_min_mm = 75.0;
    double length_max_mm = 140.0;
    double width_min_mm = 35.0;
    double width_max_mm = 70.0;
    double orient_min_deg = -25.0;
    double orient_max_deg = 15.0;

    double speckle_shape = 4.0;     // gamma shape of the multiplicative field
    double speckle_amplitude = 1.0; // 0 disables speckle, 1 is fully developed
    double background_amplitude = 0.15;

    int distractor_min = 0;
    int distractor_max = 3;

    int placement_margin_px = 6;

    void validate() const; // throws UsageError, including kidney-cannot-fit
};

// Geometry drawn for one phantom, before rendering. Exposed so tests can
// check sampled dimensions and the analytic bounding box independently.
struct PhantomGeometry {
    double length_mm = 0.0;
    double width_mm = 0.0;
    double theta_rad = 0.0;
    double cx_px = 0.0;
    double cy_px = 0.0;
    double a_px = 0.0; // semi-major axis
    double b_px = 0.0; // semi-minor axis
    int distractors = 0;
};

struct Sample {
    imaging::Image image;
    imaging::Roi gt;
    std::uint64_t seed = 0;
};

PhantomGeometry sample_geometry(std::uint64_t seed, const PhantomParams& p);

// Deterministic in (seed, params). Renders a bright-rim ellipse with darker
// interior and a bright central sinus blob, adds distractor arcs, multiplies
// by a unit-mean gamma speckle field. gt is the tight bounding box of the
// rendered ellipse mask.
Sample generate_phantom(std::uint64_t seed, const PhantomParams& p);

struct ManifestEntry {
    std::string path; // relative to the manifest file's directory
    imaging::Roi gt;
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    std::string split; // "train" or "validation"
    std::vector<ManifestEntry> entries;
};

// Writes n phantoms (seeds seed..seed+n-1) as PGM files under out_dir and
// returns the manifest. File names are "<split>_<index>.pgm".
DatasetManifest generate_dataset(int n, std::uint64_t seed, const PhantomParams& p,
                                 const std::string& split, const std::filesystem::path& out_dir);

// CSV with header path,x,y,w,h,seed,split.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& csv_path);
DatasetManifest load_manifest(const std::filesystem::path& csv_path);

struct LabeledPatch {
    imaging::Image patch;
    int label = 0;
};

// Source task for pretraining: noiseless 32x32 patches of `classes` shape
// categories (filled ellipse, filled box, filled triangle, grating) at random
// pose and contrast. Labels cycle 0,1,2,... so class counts differ by at most 1.
std::vector<LabeledPatch> generate_source_task(int n, std::uint64_t seed, int classes = 4,
                                               int patch_size = 32);

} // namespace sono::synth
