#pragma once

#include <vector>

#include "sonodetect/imaging.hpp"

namespace sono::haar {

// One Haar-like feature: weighted rectangles in canonical patch coordinates.
// Per-rectangle weights are balanced so any constant image responds 0.
struct WeightedRect {
    imaging::Roi rect;
    double weight = 0.0;
};

struct HaarFeature {
    std::vector<WeightedRect> rects;
};

struct HaarBank {
    int patch_size = 32;
    std::vector<HaarFeature> features;
};

// Enumerates five template families (horizontal/vertical 2-rect, horizontal/
// vertical 3-rect, 4-rect checker) over window sizes {8,12,16,24,32} on a
// 4 px position grid, in that fixed order (family, then width, then height,
// then y, then x). For the 32 px patch this yields 1848 features.
HaarBank build_bank(int patch_size = 32);

// Feature value: sum of weight * rect_sum / rect_area over the rectangles.
std::vector<double> extract(const imaging::IntegralImage& ii, const HaarBank& bank);

} // namespace sono::haar
