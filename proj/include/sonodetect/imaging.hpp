#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sonodetect/errors.hpp"

namespace sono::imaging {

// Axis-aligned rectangle in pixel coordinates. (x,y) is the top-left pixel,
// (w,h) the extent; the rectangle covers pixels [x, x+w) x [y, y+h).
struct Roi {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool valid() const { return w > 0 && h > 0; }
    std::int64_t area() const { return static_cast<std::int64_t>(w) * h; }
    bool operator==(const Roi&) const = default;
};

// Single-channel raster with values in [0,1] and isotropic pixel spacing in
// millimeters per pixel. Row-major storage.
class Image {
public:
    Image() : Image(1, 1, 1.0, 0.0) {} // 1x1 placeholder
    Image(int width, int height, double spacing_mm, double fill = 0.0);
    static Image from_pixels(int width, int height, double spacing_mm, std::vector<double> pixels);

    int width() const { return width_; }
    int height() const { return height_; }
    double spacing() const { return spacing_; }

    double at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
    double& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

    const std::vector<double>& pixels() const { return pixels_; }
    std::vector<double>& pixels() { return pixels_; }

    bool contains(const Roi& r) const {
        return r.valid() && r.x >= 0 && r.y >= 0 && r.x + r.w <= width_ && r.y + r.h <= height_;
    }

private:
    int width_;
    int height_;
    double spacing_;
    std::vector<double> pixels_;
};

// Dice similarity coefficient of two rectangles, 2|A^B| / (|A|+|B|),
// with areas counted in pixels. Disjoint rectangles give 0.
double dice(const Roi& a, const Roi& b);

// Cumulative-sum table of size (width+1) x (height+1); entry (i,j) holds the
// sum of all pixels with x < i and y < j. Enables O(1) rectangle sums.
class IntegralImage {
public:
    explicit IntegralImage(const Image& img);

    int width() const { return width_; }
    int height() const { return height_; }

    double rect_sum(const Roi& r) const;

private:
    int width_;
    int height_;
    std::vector<double> sums_; // (width_+1) * (height_+1), row-major
};

// Bilinear resampling with corner-aligned coordinates; resampling to the
// input size is an exact identity. Output spacing is rescaled by the
// geometric mean of the two axis scale factors.
Image resample(const Image& img, int out_w, int out_h);

// Exact pixel copy of the sub-rectangle; spacing preserved.
Image crop(const Image& img, const Roi& r);

// Binary PGM (P5, maxval 255). Pixels quantize as round(v*255) on encode and
// byte/255 on decode, so encode(decode(f)) is byte-identical for files this
// codec wrote. Spacing rides in a "# spacing <mm>" header comment and
// defaults to 1.0 when absent.
Image decode_pgm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_pgm(const Image& img);

Image load_pgm(const std::filesystem::path& path);
void save_pgm(const Image& img, const std::filesystem::path& path);

} // namespace sono::imaging
