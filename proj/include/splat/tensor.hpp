#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace splat {

/// Validation failures (bad shapes, bad files, bad configs). CLI exit code 2.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical failures (NaN/Inf mid-computation, divergence). CLI exit code 3.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s);

/// Dense row-major 64-bit float tensor.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw ValidationError("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }
    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }

    // 2-D accessors; valid only when ndim()==2.
    std::size_t rows() const { return shape[0]; }
    std::size_t cols() const { return shape[1]; }
    double& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

using Rng = std::mt19937_64;

Tensor randn(Shape s, Rng& rng, double stddev = 1.0);
Tensor rand_uniform(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace splat
