#include "sonodetect/texture.hpp"

namespace sono::haar {

namespace {

constexpr int kScales[] = {8, 12, 16, 24, 32};
constexpr int kStride = 4;

enum class Family { TwoH, TwoV, ThreeH, ThreeV, Four };

bool admissible(Family f, int w, int h) {
    switch (f) {
        case Family::TwoH: return w % 2 == 0;
        case Family::TwoV: return h % 2 == 0;
        case Family::ThreeH: return w % 3 == 0;
        case Family::ThreeV: return h % 3 == 0;
        case Family::Four: return w % 2 == 0 && h % 2 == 0;
    }
    return false;
}

HaarFeature make_feature(Family f, int x, int y, int w, int h) {
    using imaging::Roi;
    HaarFeature feat;
    switch (f) {
        case Family::TwoH:
            feat.rects = {{Roi{x, y, w / 2, h}, +1.0}, {Roi{x + w / 2, y, w / 2, h}, -1.0}};
            break;
        case Family::TwoV:
            feat.rects = {{Roi{x, y, w, h / 2}, +1.0}, {Roi{x, y + h / 2, w, h / 2}, -1.0}};
            break;
        case Family::ThreeH:
            feat.rects = {{Roi{x, y, w / 3, h}, +1.0},
                          {Roi{x + w / 3, y, w / 3, h}, -2.0},
                          {Roi{x + 2 * w / 3, y, w / 3, h}, +1.0}};
            break;
        case Family::ThreeV:
            feat.rects = {{Roi{x, y, w, h / 3}, +1.0},
                          {Roi{x, y + h / 3, w, h / 3}, -2.0},
                          {Roi{x, y + 2 * h / 3, w, h / 3}, +1.0}};
            break;
        case Family::Four:
            feat.rects = {{Roi{x, y, w / 2, h / 2}, +1.0},
                          {Roi{x + w / 2, y, w / 2, h / 2}, -1.0},
                          {Roi{x, y + h / 2, w / 2, h / 2}, -1.0},
                          {Roi{x + w / 2, y + h / 2, w / 2, h / 2}, +1.0}};
            break;
    }
    return feat;
}

} // namespace

HaarBank build_bank(int patch_size) {
    if (patch_size < kScales[0]) throw UsageError("build_bank: patch smaller than smallest window");
    HaarBank bank;
    bank.patch_size = patch_size;
    for (const Family f : {Family::TwoH, Family::TwoV, Family::ThreeH, Family::ThreeV, Family::Four})
        for (const int w : kScales) {
            if (w > patch_size) continue;
            for (const int h : kScales) {
                if (h > patch_size || !admissible(f, w, h)) continue;
                for (int y = 0; y + h <= patch_size; y += kStride)
                    for (int x = 0; x + w <= patch_size; x += kStride)
                        bank.features.push_back(make_feature(f, x, y, w, h));
            }
        }
    return bank;
}

std::vector<double> extract(const imaging::IntegralImage& ii, const HaarBank& bank) {
    if (ii.width() != bank.patch_size || ii.height() != bank.patch_size)
        throw UsageError("haar extract: integral image does not match the bank's patch size");
    std::vector<double> out;
    out.reserve(bank.features.size());
    for (const HaarFeature& feat : bank.features) {
        double acc = 0.0;
        for (const WeightedRect& wr : feat.rects)
            acc += wr.weight * ii.rect_sum(wr.rect) / static_cast<double>(wr.rect.area());
        out.push_back(acc);
    }
    return out;
}

} // namespace sono::haar
