#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <vector>

#include "splat/tensor.hpp"

namespace splat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const;
    /// Silently renormalizes when the deviation from unit norm is < 1e-3,
    /// rejects otherwise; zero quaternions are always rejected.
    Quat normalized() const;
    Mat3 to_matrix() const;  // assumes *this is unit norm
    static Quat from_axis_angle(const Vec3& axis, double angle_rad);
    static Quat identity() { return {}; }
};

/// Hamilton product a*b.
Quat quat_mul(const Quat& a, const Quat& b);

struct GaussianPrimitive {
    Vec3 mu = Vec3::Zero();
    Quat r;
    Vec3 s = Vec3::Ones();
    double alpha = 1.0;
    std::vector<double> sh;  // 3*(degree+1)^2 coefficients, channel-major per basis term

    int sh_degree() const;
    void validate() const;
};

struct CameraModel {
    double f = 1.0;                  // focal length, pixels
    Vec2 principal = Vec2::Zero();   // principal point, pixels
    Mat3 R = Mat3::Identity();       // world-to-camera rotation
    Vec3 t = Vec3::Zero();           // world-to-camera translation
    std::size_t width = 0, height = 0;
    double near_plane = 0.01;

    void validate() const;
    Vec3 to_camera(const Vec3& p) const { return R * p + t; }
    Vec3 center_world() const { return -R.transpose() * t; }
};

/// Sigma = R S S^T R^T.
Mat3 covariance_from_rs(const Quat& r, const Vec3& s);

/// exp(-1/2 (x-mu)^T Sigma^-1 (x-mu)); 1 exactly at the mean.
double eval_density(const GaussianPrimitive& g, const Vec3& x);

struct ProjectedGaussian {
    Vec2 mean2d;
    Mat2 cov;  // includes the low-pass dilation
    double depth;
};

// Screen-space low-pass dilation added to every projected covariance (px^2).
inline constexpr double kCovDilation = 0.3;

/// EWA projection; nullopt when the primitive is behind the near plane.
std::optional<ProjectedGaussian> project_gaussian(const GaussianPrimitive& g,
                                                  const CameraModel& cam);

/// View-dependent color: clamp(0.5 + sum of SH bands at view_dir, 0, 1).
std::array<double, 3> sh_to_color(const std::vector<double>& sh, const Vec3& view_dir);

/// Real SH basis values at a unit direction, bands 0..degree (degree <= 3).
std::vector<double> sh_basis(const Vec3& dir, int degree);
/// d(basis)/d(dir components), one Vec3 per basis term.
std::vector<Vec3> sh_basis_grad(const Vec3& dir, int degree);

}  // namespace splat
