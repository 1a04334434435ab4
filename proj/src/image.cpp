#include "splat/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace splat {

namespace {
void require_same(const Image& a, const Image& b, const char* what) {
    if (!a.same_dims(b))
        throw ValidationError(std::string(what) + ": image dimension mismatch");
}
}  // namespace

double image_max_abs_diff(const Image& a, const Image& b) {
    require_same(a, b, "image_max_abs_diff");
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

double image_l1(const Image& a, const Image& b) {
    require_same(a, b, "image_l1");
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += std::fabs(a.data[i] - b.data[i]);
    return s / double(a.data.size());
}

double image_psnr(const Image& a, const Image& b) {
    require_same(a, b, "image_psnr");
    double mse = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= double(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma < 0) throw ValidationError("blur sigma must be >= 0");
    if (sigma == 0.0) return img;
    int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(std::size_t(2 * radius + 1));
    double total = 0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
        kernel[std::size_t(i + radius)] = v;
        total += v;
    }
    for (auto& v : kernel) v /= total;

    auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t hi) {
        return std::size_t(std::min(std::max(v, std::ptrdiff_t(0)), hi));
    };
    Image tmp(img.width, img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[std::size_t(i + radius)] *
                           img.at(clampi(std::ptrdiff_t(x) + i, std::ptrdiff_t(img.width) - 1), y,
                                  c);
                tmp.at(x, y, c) = acc;
            }
    Image out(img.width, img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[std::size_t(i + radius)] *
                           tmp.at(x, clampi(std::ptrdiff_t(y) + i, std::ptrdiff_t(img.height) - 1),
                                  c);
                out.at(x, y, c) = acc;
            }
    return out;
}

void write_ppm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open for write: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> buf(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        double v = std::min(std::max(img.data[i], 0.0), 1.0);
        buf[i] = std::uint8_t(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!f) throw ValidationError("short write: " + path);
}

namespace {
int read_pnm_token(std::istream& s) {
    // Skips whitespace and '#' comments.
    int c;
    while ((c = s.get()) != EOF) {
        if (c == '#') {
            while ((c = s.get()) != EOF && c != '\n') {}
        } else if (!std::isspace(c)) {
            s.unget();
            int v;
            s >> v;
            return v;
        }
    }
    throw ValidationError("truncated PNM header");
}
}  // namespace

Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open: " + path);
    char m0 = char(f.get()), m1 = char(f.get());
    if (m0 != 'P' || m1 != '6') throw ValidationError("not a P6 PPM: " + path);
    int w = read_pnm_token(f), h = read_pnm_token(f), maxv = read_pnm_token(f);
    if (w <= 0 || h <= 0 || maxv != 255) throw ValidationError("unsupported PPM: " + path);
    f.get();  // single whitespace after maxval
    Image img{std::size_t(w), std::size_t(h)};
    std::vector<std::uint8_t> buf(img.data.size());
    f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!f) throw ValidationError("truncated PPM data: " + path);
    for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = double(buf[i]) / 255.0;
    return img;
}

void write_pgm(const std::string& path, const Mask& mask) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open for write: " + path);
    f << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    std::vector<std::uint8_t> buf(mask.data.size());
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        buf[i] = mask.data[i] > 0.5 ? 255 : 0;
    f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!f) throw ValidationError("short write: " + path);
}

Mask read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open: " + path);
    char m0 = char(f.get()), m1 = char(f.get());
    if (m0 != 'P' || m1 != '5') throw ValidationError("not a P5 PGM: " + path);
    int w = read_pnm_token(f), h = read_pnm_token(f), maxv = read_pnm_token(f);
    if (w <= 0 || h <= 0 || maxv != 255) throw ValidationError("unsupported PGM: " + path);
    f.get();
    Mask mask{std::size_t(w), std::size_t(h)};
    std::vector<std::uint8_t> buf(mask.data.size());
    f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!f) throw ValidationError("truncated PGM data: " + path);
    for (std::size_t i = 0; i < buf.size(); ++i) mask.data[i] = buf[i] > 127 ? 1.0 : 0.0;
    return mask;
}

void write_image_f64(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open for write: " + path);
    std::uint32_t w = std::uint32_t(img.width), h = std::uint32_t(img.height);
    f.write("SIMG", 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(img.data.data()),
            std::streamsize(img.data.size() * sizeof(double)));
    if (!f) throw ValidationError("short write: " + path);
}

Image read_image_f64(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "SIMG") throw ValidationError("bad SIMG magic: " + path);
    std::uint32_t w = 0, h = 0;
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    Image img(w, h);
    f.read(reinterpret_cast<char*>(img.data.data()),
           std::streamsize(img.data.size() * sizeof(double)));
    if (!f) throw ValidationError("truncated SIMG data: " + path);
    return img;
}

}  // namespace splat
