#include "sonodetect/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace sono::imaging {

Image::Image(int width, int height, double spacing_mm, double fill)
    : width_(width), height_(height), spacing_(spacing_mm) {
    if (width <= 0 || height <= 0) throw UsageError("Image: dimensions must be positive");
    if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm))
        throw UsageError("Image: spacing must be positive and finite");
    pixels_.assign(static_cast<std::size_t>(width) * height, fill);
}

Image Image::from_pixels(int width, int height, double spacing_mm, std::vector<double> pixels) {
    Image img(width, height, spacing_mm);
    if (pixels.size() != img.pixels_.size())
        throw UsageError("Image::from_pixels: pixel count does not match dimensions");
    img.pixels_ = std::move(pixels);
    return img;
}

double dice(const Roi& a, const Roi& b) {
    if (!a.valid() || !b.valid()) throw UsageError("dice: invalid ROI");
    const int ix0 = std::max(a.x, b.x);
    const int iy0 = std::max(a.y, b.y);
    const int ix1 = std::min(a.x + a.w, b.x + b.w);
    const int iy1 = std::min(a.y + a.h, b.y + b.h);
    const std::int64_t iw = std::max(0, ix1 - ix0);
    const std::int64_t ih = std::max(0, iy1 - iy0);
    const std::int64_t inter = iw * ih;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a.area() + b.area());
}

IntegralImage::IntegralImage(const Image& img) : width_(img.width()), height_(img.height()) {
    const int w = width_;
    const int h = height_;
    sums_.assign(static_cast<std::size_t>(w + 1) * (h + 1), 0.0);
    for (int y = 0; y < h; ++y) {
        double row = 0.0;
        const std::size_t above = static_cast<std::size_t>(y) * (w + 1);
        const std::size_t here = static_cast<std::size_t>(y + 1) * (w + 1);
        for (int x = 0; x < w; ++x) {
            row += img.at(x, y);
            sums_[here + x + 1] = sums_[above + x + 1] + row;
        }
    }
}

double IntegralImage::rect_sum(const Roi& r) const {
    if (r.w == 0 || r.h == 0) return 0.0;
    if (r.w < 0 || r.h < 0 || r.x < 0 || r.y < 0 || r.x + r.w > width_ || r.y + r.h > height_)
        throw UsageError("rect_sum: rectangle out of bounds");
    const std::size_t stride = static_cast<std::size_t>(width_) + 1;
    const std::size_t x0 = static_cast<std::size_t>(r.x);
    const std::size_t y0 = static_cast<std::size_t>(r.y);
    const std::size_t x1 = x0 + r.w;
    const std::size_t y1 = y0 + r.h;
    return sums_[y1 * stride + x1] - sums_[y0 * stride + x1] - sums_[y1 * stride + x0] +
           sums_[y0 * stride + x0];
}

Image resample(const Image& img, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw UsageError("resample: output size must be >= 1");
    const int in_w = img.width();
    const int in_h = img.height();
    const double sx = out_w > 1 ? static_cast<double>(in_w - 1) / (out_w - 1) : 0.0;
    const double sy = out_h > 1 ? static_cast<double>(in_h - 1) / (out_h - 1) : 0.0;
    const double cx = out_w > 1 ? 0.0 : (in_w - 1) / 2.0;
    const double cy = out_h > 1 ? 0.0 : (in_h - 1) / 2.0;
    const double spacing =
        img.spacing() * std::sqrt((static_cast<double>(in_w) / out_w) * (static_cast<double>(in_h) / out_h));
    Image out(out_w, out_h, spacing);
    for (int y = 0; y < out_h; ++y) {
        const double fy = cy + sy * y;
        const int y0 = std::min(static_cast<int>(fy), in_h - 1);
        const int y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = cx + sx * x;
            const int x0 = std::min(static_cast<int>(fx), in_w - 1);
            const int x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - x0;
            const double top = img.at(x0, y0) * (1.0 - wx) + img.at(x1, y0) * wx;
            const double bot = img.at(x0, y1) * (1.0 - wx) + img.at(x1, y1) * wx;
            out.at(x, y) = top * (1.0 - wy) + bot * wy;
        }
    }
    return out;
}

Image crop(const Image& img, const Roi& r) {
    if (!img.contains(r)) throw UsageError("crop: rectangle out of bounds");
    Image out(r.w, r.h, img.spacing());
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) out.at(x, y) = img.at(r.x + x, r.y + y);
    return out;
}

namespace {

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    bool eof() const { return pos_ >= bytes_.size(); }
    std::uint8_t peek() const { return bytes_[pos_]; }
    std::uint8_t take() { return bytes_[pos_++]; }
    std::size_t pos() const { return pos_; }

    // Skips whitespace and '#' comments; captures a "spacing" comment if present.
    void skip_separators(double* spacing_out) {
        while (!eof()) {
            const std::uint8_t c = peek();
            if (c == '#') {
                std::string line;
                while (!eof() && peek() != '\n') line.push_back(static_cast<char>(take()));
                double sp = 0.0;
                if (std::sscanf(line.c_str(), "# spacing %lf", &sp) == 1 && sp > 0.0 && spacing_out)
                    *spacing_out = sp;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                take();
            } else {
                return;
            }
        }
    }

    int read_uint(double* spacing_out) {
        skip_separators(spacing_out);
        if (eof() || peek() < '0' || peek() > '9') throw DataError("PGM: malformed header");
        long v = 0;
        while (!eof() && peek() >= '0' && peek() <= '9') {
            v = v * 10 + (take() - '0');
            if (v > 1 << 28) throw DataError("PGM: header value out of range");
        }
        return static_cast<int>(v);
    }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

Image decode_pgm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw DataError("PGM: not a binary P5 file");
    ByteReader rd(bytes);
    rd.take();
    rd.take();
    double spacing = 1.0;
    const int w = rd.read_uint(&spacing);
    const int h = rd.read_uint(&spacing);
    const int maxval = rd.read_uint(&spacing);
    if (w <= 0 || h <= 0) throw DataError("PGM: bad dimensions");
    if (maxval != 255) throw DataError("PGM: only maxval 255 is supported");
    if (rd.eof()) throw DataError("PGM: truncated header");
    const std::uint8_t sep = rd.take();
    if (sep != '\n' && sep != ' ' && sep != '\t' && sep != '\r')
        throw DataError("PGM: malformed header");
    const std::size_t need = static_cast<std::size_t>(w) * h;
    if (bytes.size() - rd.pos() < need) throw DataError("PGM: truncated pixel payload");
    std::vector<double> px(need);
    for (std::size_t i = 0; i < need; ++i) px[i] = bytes[rd.pos() + i] / 255.0;
    return Image::from_pixels(w, h, spacing, std::move(px));
}

std::vector<std::uint8_t> encode_pgm(const Image& img) {
    char header[128];
    const int n = std::snprintf(header, sizeof(header), "P5\n# spacing %.17g\n%d %d\n255\n",
                                img.spacing(), img.width(), img.height());
    std::vector<std::uint8_t> out(header, header + n);
    out.reserve(out.size() + img.pixels().size());
    for (const double v : img.pixels()) {
        const double c = std::clamp(v, 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
    }
    return out;
}

Image load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_pgm(bytes);
}

void save_pgm(const Image& img, const std::filesystem::path& path) {
    const auto bytes = encode_pgm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

} // namespace sono::imaging
