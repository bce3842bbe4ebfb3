#ifndef GENHOWTO_IMAGE_HPP
#define GENHOWTO_IMAGE_HPP

#include <zlib.h>

#include <array>
#include <cstring>

#include "genhowto/tensor.hpp"

namespace genhowto {

// 8-bit image buffer; channels = 3 (RGB) or 1 (mask/grayscale)
struct ByteImage {
    int w = 0, h = 0, channels = 0;
    std::vector<uint8_t> pixels;

    ByteImage() = default;
    ByteImage(int w_, int h_, int c_) : w(w_), h(h_), channels(c_), pixels(static_cast<size_t>(w_) * h_ * c_, 0) {}

    uint8_t& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * w + x) * channels + c]; }
    uint8_t at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * w + x) * channels + c]; }
};

// Float image sample: shape (3, H, W), values in [-1, 1]
struct ImageSample {
    Tensor pixels;

    int height() const { return static_cast<int>(pixels.shape[1]); }
    int width() const { return static_cast<int>(pixels.shape[2]); }

    static ImageSample zeros(int h, int w) {
        ImageSample s;
        s.pixels = Tensor::zeros({3, h, w});
        return s;
    }

    float& at(int c, int y, int x) { return pixels.data[(static_cast<size_t>(c) * height() + y) * width() + x]; }
    float at(int c, int y, int x) const { return pixels.data[(static_cast<size_t>(c) * height() + y) * width() + x]; }

    void clamp_range() {
        for (auto& v : pixels.data) v = std::min(1.0f, std::max(-1.0f, v));
    }
};

inline ByteImage to_bytes(const ImageSample& img) {
    int h = img.height(), w = img.width();
    ByteImage out(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = (img.at(c, y, x) + 1.0f) * 0.5f;
                v       = std::min(1.0f, std::max(0.0f, v));
                out.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0f));
            }
    return out;
}

inline ImageSample from_bytes(const ByteImage& b) {
    assert(b.channels == 3);
    ImageSample out = ImageSample::zeros(b.h, b.w);
    for (int y = 0; y < b.h; ++y)
        for (int x = 0; x < b.w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = static_cast<float>(b.at(y, x, c)) / 255.0f * 2.0f - 1.0f;
    return out;
}

// ----------------------------------------------------------------------------
// Minimal PNG codec (8-bit RGB / grayscale, zlib-backed). Writing uses filter
// type 0 and a fixed compression level so output bytes are reproducible.
// ----------------------------------------------------------------------------
namespace pngdetail {

inline void put_u32(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>((v >> 24) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>(v & 0xff));
}

inline uint32_t get_u32(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void write_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
    put_u32(out, static_cast<uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace pngdetail

inline void save_png(const std::filesystem::path& path, const ByteImage& img) {
    using namespace pngdetail;
    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    put_u32(ihdr, static_cast<uint32_t>(img.w));
    put_u32(ihdr, static_cast<uint32_t>(img.h));
    ihdr.push_back(8);                                  // bit depth
    ihdr.push_back(img.channels == 3 ? 2 : 0);          // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);

    size_t stride = static_cast<size_t>(img.w) * img.channels;
    std::string raw;
    raw.reserve((stride + 1) * img.h);
    for (int y = 0; y < img.h; ++y) {
        raw.push_back(0);  // filter: none
        raw.append(reinterpret_cast<const char*>(img.pixels.data() + y * stride), stride);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<Bytef> comp(bound);
    if (compress2(comp.data(), &bound, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: zlib compression failed");
    write_chunk(out, "IDAT", std::string(reinterpret_cast<char*>(comp.data()), bound));
    write_chunk(out, "IEND", "");
    write_file(path, out);
}

inline ByteImage load_png(const std::filesystem::path& path) {
    using namespace pngdetail;
    std::string bytes = read_file(path);
    if (bytes.size() < 8 || memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
        throw std::runtime_error("png: bad signature in " + path.string());
    const unsigned char* p   = reinterpret_cast<const unsigned char*>(bytes.data()) + 8;
    const unsigned char* end = reinterpret_cast<const unsigned char*>(bytes.data()) + bytes.size();
    int w = 0, h = 0, channels = 0;
    std::string idat;
    while (p + 8 <= end) {
        uint32_t len = get_u32(p);
        std::string type(reinterpret_cast<const char*>(p + 4), 4);
        const unsigned char* payload = p + 8;
        if (payload + len + 4 > end) break;
        if (type == "IHDR") {
            w = static_cast<int>(get_u32(payload));
            h = static_cast<int>(get_u32(payload + 4));
            int depth = payload[8], color = payload[9];
            if (depth != 8 || (color != 0 && color != 2))
                throw std::runtime_error("png: unsupported format in " + path.string());
            channels = color == 2 ? 3 : 1;
        } else if (type == "IDAT") {
            idat.append(reinterpret_cast<const char*>(payload), len);
        } else if (type == "IEND") {
            break;
        }
        p = payload + len + 4;
    }
    if (w <= 0 || h <= 0) throw std::runtime_error("png: missing IHDR in " + path.string());
    size_t stride = static_cast<size_t>(w) * channels;
    std::vector<unsigned char> raw((stride + 1) * h);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, reinterpret_cast<const Bytef*>(idat.data()),
                   static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("png: inflate failed for " + path.string());

    ByteImage img(w, h, channels);
    int bpp = channels;
    for (int y = 0; y < h; ++y) {
        int filter           = raw[y * (stride + 1)];
        unsigned char* cur   = raw.data() + y * (stride + 1) + 1;
        unsigned char* above = y > 0 ? img.pixels.data() + (y - 1) * stride : nullptr;
        unsigned char* line  = img.pixels.data() + y * stride;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<size_t>(bpp) ? line[i - bpp] : 0;
            int b = above ? above[i] : 0;
            int c = (above && i >= static_cast<size_t>(bpp)) ? above[i - bpp] : 0;
            int x = cur[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += paeth(a, b, c); break;
                default: throw std::runtime_error("png: bad filter");
            }
            line[i] = static_cast<unsigned char>(x & 0xff);
        }
    }
    return img;
}

inline void save_image(const std::filesystem::path& path, const ImageSample& img) {
    save_png(path, to_bytes(img));
}

inline ImageSample load_image(const std::filesystem::path& path) {
    return from_bytes(load_png(path));
}

// ----------------------------------------------------------------------------
// drawing primitives on float images; every object/tool draw also paints the
// mask when one is attached
// ----------------------------------------------------------------------------
struct Painter {
    ImageSample* img;
    ByteImage* mask = nullptr;  // optional single-channel mask of drawn content

    void pixel(int x, int y, float r, float g, float b) {
        if (x < 0 || y < 0 || x >= img->width() || y >= img->height()) return;
        img->at(0, y, x) = r;
        img->at(1, y, x) = g;
        img->at(2, y, x) = b;
        if (mask) mask->at(y, x, 0) = 255;
    }

    void rect(double x0, double y0, double x1, double y1, float r, float g, float b) {
        int ix0 = static_cast<int>(std::floor(x0)), iy0 = static_cast<int>(std::floor(y0));
        int ix1 = static_cast<int>(std::ceil(x1)), iy1 = static_cast<int>(std::ceil(y1));
        for (int y = iy0; y < iy1; ++y)
            for (int x = ix0; x < ix1; ++x) pixel(x, y, r, g, b);
    }

    void circle(double cx, double cy, double rad, float r, float g, float b) {
        int x0 = static_cast<int>(std::floor(cx - rad)), x1 = static_cast<int>(std::ceil(cx + rad));
        int y0 = static_cast<int>(std::floor(cy - rad)), y1 = static_cast<int>(std::ceil(cy + rad));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                if (dx * dx + dy * dy <= rad * rad) pixel(x, y, r, g, b);
            }
    }

    void ellipse(double cx, double cy, double rx, double ry, float r, float g, float b) {
        int x0 = static_cast<int>(std::floor(cx - rx)), x1 = static_cast<int>(std::ceil(cx + rx));
        int y0 = static_cast<int>(std::floor(cy - ry)), y1 = static_cast<int>(std::ceil(cy + ry));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
                if (dx * dx + dy * dy <= 1.0) pixel(x, y, r, g, b);
            }
    }

    void line(double x0, double y0, double x1, double y1, double thick, float r, float g, float b) {
        double len = std::hypot(x1 - x0, y1 - y0);
        int steps  = std::max(2, static_cast<int>(len * 2));
        for (int i = 0; i <= steps; ++i) {
            double t  = static_cast<double>(i) / steps;
            double cx = x0 + (x1 - x0) * t, cy = y0 + (y1 - y0) * t;
            circle(cx, cy, thick * 0.5, r, g, b);
        }
    }
};

inline double image_mse(const ImageSample& a, const ImageSample& b) {
    assert(a.pixels.same_shape(b.pixels));
    double s = 0;
    for (int64_t i = 0; i < a.pixels.numel(); ++i) {
        double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        s += d * d;
    }
    return s / static_cast<double>(a.pixels.numel());
}

// MSE restricted to pixels where the mask union is zero (background region)
inline double background_mse(const ImageSample& a, const ImageSample& b, const ByteImage& mask) {
    int h = a.height(), w = a.width();
    double s  = 0;
    int64_t n = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (mask.at(y, x, 0) != 0) continue;
            for (int c = 0; c < 3; ++c) {
                double d = static_cast<double>(a.at(c, y, x)) - b.at(c, y, x);
                s += d * d;
            }
            n += 3;
        }
    return n > 0 ? s / static_cast<double>(n) : 0.0;
}

inline ByteImage mask_union(const ByteImage& a, const ByteImage& b) {
    ByteImage out(a.w, a.h, 1);
    for (size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = (a.pixels[i] || b.pixels[i]) ? 255 : 0;
    return out;
}

}  // namespace genhowto

#endif
