#include "splat/gaussian.hpp"

#include <cmath>

namespace splat {

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quat Quat::normalized() const {
    double n = norm();
    if (n == 0.0) throw ValidationError("zero quaternion");
    if (std::fabs(n - 1.0) >= 1e-3)
        throw ValidationError("quaternion norm " + std::to_string(n) +
                              " deviates too far from 1");
    return {w / n, x / n, y / n, z / n};
}

Mat3 Quat::to_matrix() const {
    Mat3 m;
    m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return m;
}

Quat Quat::from_axis_angle(const Vec3& axis, double angle_rad) {
    Vec3 a = axis.normalized();
    double h = angle_rad / 2.0;
    double s = std::sin(h);
    return {std::cos(h), a.x() * s, a.y() * s, a.z() * s};
}

int GaussianPrimitive::sh_degree() const {
    std::size_t terms = sh.size() / 3;
    for (int d = 0; d <= 3; ++d)
        if (terms == std::size_t((d + 1) * (d + 1)) && sh.size() % 3 == 0) return d;
    throw ValidationError("sh length " + std::to_string(sh.size()) +
                          " is not 3*(degree+1)^2 for degree <= 3");
}

void GaussianPrimitive::validate() const {
    (void)r.normalized();
    if (!(s.x() > 0 && s.y() > 0 && s.z() > 0)) throw ValidationError("non-positive scale");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("opacity outside [0,1]");
    (void)sh_degree();
}

void CameraModel::validate() const {
    if (!(f > 0)) throw ValidationError("focal length must be > 0");
    if (!(near_plane > 0)) throw ValidationError("near plane must be > 0");
    if ((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
        throw ValidationError("camera rotation is not orthonormal");
}

Mat3 covariance_from_rs(const Quat& r, const Vec3& s) {
    if (!(s.x() > 0 && s.y() > 0 && s.z() > 0)) throw ValidationError("non-positive scale");
    Mat3 R = r.normalized().to_matrix();
    Mat3 M = R * s.asDiagonal();
    return M * M.transpose();
}

double eval_density(const GaussianPrimitive& g, const Vec3& x) {
    Mat3 sigma = covariance_from_rs(g.r, g.s);
    Vec3 d = x - g.mu;
    double q = d.dot(sigma.llt().solve(d));
    return std::exp(-0.5 * q);
}

std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g,
                                                  const CameraModel& cam) {
    Vec3 tc = cam.to_camera(g.mu);
    if (tc.z() <= cam.near_plane) return std::nullopt;
    double z = tc.z();
    Eigen::Matrix<double, 2, 3> J;
    J << cam.f / z, 0, -cam.f * tc.x() / (z * z),
        0, cam.f / z, -cam.f * tc.y() / (z * z);
    Eigen::Matrix<double, 2, 3> A = J * cam.R;
    Mat3 sigma = covariance_from_rs(g.r, g.s);
    ProjectedGaussian out;
    out.cov = A * sigma * A.transpose() + kCovDilation * Mat2::Identity();
    out.mean2d = Vec2(cam.f * tc.x() / z, cam.f * tc.y() / z) + cam.principal;
    out.depth = z;
    return out;
}

namespace {
constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                           0.3731763325901154, -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};
}  // namespace

std::vector<double> sh_basis(const Vec3& dir, int degree) {
    double x = dir.x(), y = dir.y(), z = dir.z();
    std::vector<double> b;
    b.reserve(std::size_t((degree + 1) * (degree + 1)));
    b.push_back(kC0);
    if (degree >= 1) {
        b.push_back(-kC1 * y);
        b.push_back(kC1 * z);
        b.push_back(-kC1 * x);
    }
    if (degree >= 2) {
        b.push_back(kC2[0] * x * y);
        b.push_back(kC2[1] * y * z);
        b.push_back(kC2[2] * (2 * z * z - x * x - y * y));
        b.push_back(kC2[3] * x * z);
        b.push_back(kC2[4] * (x * x - y * y));
    }
    if (degree >= 3) {
        b.push_back(kC3[0] * y * (3 * x * x - y * y));
        b.push_back(kC3[1] * x * y * z);
        b.push_back(kC3[2] * y * (4 * z * z - x * x - y * y));
        b.push_back(kC3[3] * z * (2 * z * z - 3 * x * x - 3 * y * y));
        b.push_back(kC3[4] * x * (4 * z * z - x * x - y * y));
        b.push_back(kC3[5] * z * (x * x - y * y));
        b.push_back(kC3[6] * x * (x * x - 3 * y * y));
    }
    return b;
}

std::vector<Vec3> sh_basis_grad(const Vec3& dir, int degree) {
    double x = dir.x(), y = dir.y(), z = dir.z();
    std::vector<Vec3> g;
    g.reserve(std::size_t((degree + 1) * (degree + 1)));
    g.emplace_back(0, 0, 0);
    if (degree >= 1) {
        g.emplace_back(0, -kC1, 0);
        g.emplace_back(0, 0, kC1);
        g.emplace_back(-kC1, 0, 0);
    }
    if (degree >= 2) {
        g.emplace_back(kC2[0] * y, kC2[0] * x, 0);
        g.emplace_back(0, kC2[1] * z, kC2[1] * y);
        g.emplace_back(-2 * kC2[2] * x, -2 * kC2[2] * y, 4 * kC2[2] * z);
        g.emplace_back(kC2[3] * z, 0, kC2[3] * x);
        g.emplace_back(2 * kC2[4] * x, -2 * kC2[4] * y, 0);
    }
    if (degree >= 3) {
        g.emplace_back(kC3[0] * 6 * x * y, kC3[0] * (3 * x * x - 3 * y * y), 0);
        g.emplace_back(kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y);
        g.emplace_back(-2 * kC3[2] * x * y, kC3[2] * (4 * z * z - x * x - 3 * y * y),
                       kC3[2] * 8 * y * z);
        g.emplace_back(-6 * kC3[3] * x * z, -6 * kC3[3] * y * z,
                       kC3[3] * (6 * z * z - 3 * x * x - 3 * y * y));
        g.emplace_back(kC3[4] * (4 * z * z - 3 * x * x - y * y), -2 * kC3[4] * x * y,
                       kC3[4] * 8 * x * z);
        g.emplace_back(2 * kC3[5] * x * z, -2 * kC3[5] * y * z, kC3[5] * (x * x - y * y));
        g.emplace_back(kC3[6] * (3 * x * x - 3 * y * y), -6 * kC3[6] * x * y, 0);
    }
    return g;
}

Quat quat_mul(const Quat& a, const Quat& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

std::array<double, 3> sh_to_color(const std::vector<double>& sh, const Vec3& view_dir) {
    if (sh.size() % 3 != 0) throw ValidationError("sh length must be a multiple of 3");
    std::size_t terms = sh.size() / 3;
    int degree = -1;
    for (int d = 0; d <= 3; ++d)
        if (terms == std::size_t((d + 1) * (d + 1))) degree = d;
    if (degree < 0) throw ValidationError("sh length not 3*(degree+1)^2 for degree <= 3");
    auto basis = sh_basis(view_dir, degree);
    std::array<double, 3> rgb{0.5, 0.5, 0.5};
    for (std::size_t k = 0; k < terms; ++k)
        for (int c = 0; c < 3; ++c) rgb[std::size_t(c)] += basis[k] * sh[3 * k + std::size_t(c)];
    for (auto& v : rgb) v = std::min(std::max(v, 0.0), 1.0);
    return rgb;
}

}  // namespace splat
