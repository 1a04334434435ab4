#include "splat/tensor.hpp"

#include <cmath>
#include <sstream>

namespace splat {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor randn(Shape s, Rng& rng, double stddev) {
    Tensor t(std::move(s));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

Tensor rand_uniform(Shape s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ValidationError("max_abs_diff shape mismatch: " + shape_str(a.shape) + " vs " +
                              shape_str(b.shape));
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace splat
