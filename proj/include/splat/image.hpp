#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "splat/tensor.hpp"

namespace splat {

/// H x W x 3 image, row-major, linear RGB doubles in [0,1].
struct Image {
    std::size_t width = 0, height = 0;
    std::vector<double> data;  // 3 * width * height

    Image() = default;
    Image(std::size_t w, std::size_t h, std::array<double, 3> fill = {0, 0, 0})
        : width(w), height(h), data(3 * w * h) {
        for (std::size_t i = 0; i < w * h; ++i)
            for (int c = 0; c < 3; ++c) data[3 * i + std::size_t(c)] = fill[std::size_t(c)];
    }
    double& at(std::size_t x, std::size_t y, int c) {
        return data[3 * (y * width + x) + std::size_t(c)];
    }
    double at(std::size_t x, std::size_t y, int c) const {
        return data[3 * (y * width + x) + std::size_t(c)];
    }
    std::size_t npix() const { return width * height; }
    bool same_dims(const Image& o) const { return width == o.width && height == o.height; }
};

/// Grayscale mask, 0/1 doubles.
struct Mask {
    std::size_t width = 0, height = 0;
    std::vector<double> data;

    Mask() = default;
    Mask(std::size_t w, std::size_t h, double fill = 0.0)
        : width(w), height(h), data(w * h, fill) {}
    double& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
    double at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
};

double image_max_abs_diff(const Image& a, const Image& b);
double image_l1(const Image& a, const Image& b);
double image_psnr(const Image& a, const Image& b);  // dB, peak 1.0

/// Separable Gaussian blur, kernel truncated at 3 sigma and renormalized to
/// sum exactly 1. sigma == 0 is the identity.
Image gaussian_blur(const Image& img, double sigma);

// Binary PPM (P6, maxval 255) and PGM (P5, 0/255) serialization.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Mask& mask);
Mask read_pgm(const std::string& path);

// Raw f64 image dumps for bit-exact test round trips.
void write_image_f64(const std::string& path, const Image& img);
Image read_image_f64(const std::string& path);

}  // namespace splat
