#pragma once

#include <vector>

#include "splat/gaussian.hpp"
#include "splat/rasterizer.hpp"

namespace splat::testing {

inline CameraModel test_camera(std::size_t w, std::size_t h, double f = 60.0) {
    CameraModel cam;
    cam.f = f;
    cam.principal = Vec2(double(w) / 2.0, double(h) / 2.0);
    cam.width = w;
    cam.height = h;
    return cam;
}

/// Random scene in front of the camera, degree-1 SH, opacities kept away
/// from the fragment-cutoff discontinuity.
inline std::vector<GaussianPrimitive> random_scene(std::size_t n, Rng& rng,
                                                   double spread = 0.6) {
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<GaussianPrimitive> scene;
    scene.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        GaussianPrimitive g;
        g.mu = Vec3(spread * u(rng), spread * u(rng), 3.0 + 0.8 * u(rng));
        Vec3 axis(u(rng), u(rng), u(rng));
        if (axis.norm() < 1e-6) axis = Vec3::UnitY();
        g.r = Quat::from_axis_angle(axis, 2.0 * u(rng));
        g.s = Vec3(0.05 + 0.08 * std::fabs(u(rng)), 0.05 + 0.08 * std::fabs(u(rng)),
                   0.05 + 0.08 * std::fabs(u(rng)));
        g.alpha = 0.3 + 0.25 * (u(rng) + 1.0);
        g.sh.assign(12, 0.0);
        for (auto& v : g.sh) v = 0.25 * u(rng);
        scene.push_back(g);
    }
    return scene;
}

/// True when no pixel sits close to the fragment-cutoff or the
/// transmittance-stop discontinuity, so central differences stay on one side.
inline bool scene_has_fd_margin(const std::vector<GaussianPrimitive>& scene,
                                const CameraModel& cam, const RenderTarget& target,
                                double margin = 1e-4) {
    ForwardContext ctx;
    rasterize(scene, cam, target, &ctx);
    for (std::size_t y = 0; y < target.height; ++y)
        for (std::size_t x = 0; x < target.width; ++x) {
            double trans = 1.0;
            for (const auto& f : ctx.frags) {  // any order is fine for the margin test
                double dx = double(x) - f.mean2d.x(), dy = double(y) - f.mean2d.y();
                double q = f.inv_cov(0, 0) * dx * dx + 2 * f.inv_cov(0, 1) * dx * dy +
                           f.inv_cov(1, 1) * dy * dy;
                double at = f.alpha * std::exp(-0.5 * q);
                if (std::fabs(at - kAlphaCutoff) < margin) return false;
                if (at < kAlphaCutoff) continue;
                trans *= 1.0 - std::min(at, kAlphaMax);
                if (std::fabs(trans - kTransmittanceStop) < margin * 0.1) return false;
                if (trans < kTransmittanceStop) break;
            }
        }
    return true;
}

/// Random scene guaranteed clear of compositing discontinuities.
inline std::vector<GaussianPrimitive> random_scene_fd_safe(std::size_t n, Rng& rng,
                                                           const CameraModel& cam,
                                                           const RenderTarget& target,
                                                           double spread = 0.6) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        auto scene = random_scene(n, rng, spread);
        if (scene_has_fd_margin(scene, cam, target)) return scene;
    }
    throw std::runtime_error("could not sample an fd-safe scene");
}

}  // namespace splat::testing
