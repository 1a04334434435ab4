#pragma once

#include <array>
#include <vector>

#include "splat/gaussian.hpp"
#include "splat/image.hpp"

namespace splat {

struct RenderTarget {
    std::size_t width = 0, height = 0;
    std::array<double, 3> background = {0, 0, 0};
    std::size_t tile_size = 16;  // power of two

    void validate() const;
};

// Compositing constants, matched exactly between the tiled path and the
// naive oracle so the two agree to float noise.
inline constexpr double kAlphaCutoff = 1.0 / 255.0;
inline constexpr double kAlphaMax = 0.9999;
inline constexpr double kTransmittanceStop = 1e-4;

/// Projected per-primitive data retained from the forward pass; required by
/// rasterize_backward.
struct SplatFragment {
    std::size_t prim;
    Vec2 mean2d;
    Mat2 inv_cov;
    double depth;
    std::array<double, 3> color;
    double alpha;
    double radius;  // conservative screen-space footprint
};

struct ForwardContext {
    bool valid = false;
    std::vector<SplatFragment> frags;
};

/// Tile-parallel forward splatting; output is bit-identical for any tile size
/// and worker count. Pixel sample points sit at integer coordinates (x, y).
Image rasterize(const std::vector<GaussianPrimitive>& scene, const CameraModel& cam,
                const RenderTarget& target, ForwardContext* ctx = nullptr);

/// Serial reference: per-pixel global depth sort over all primitives, no
/// tiling. Same cutoffs; semantics identical to rasterize.
Image rasterize_naive_oracle(const std::vector<GaussianPrimitive>& scene, const CameraModel& cam,
                             const RenderTarget& target);

struct SceneGrads {
    std::vector<Vec3> mu;
    std::vector<std::array<double, 4>> r;  // w,x,y,z of the stored quaternion
    std::vector<Vec3> s;
    std::vector<double> alpha;
    std::vector<std::vector<double>> sh;

    explicit SceneGrads(const std::vector<GaussianPrimitive>& scene);
};

/// Analytic gradients of the compositing + projection chain w.r.t. every
/// primitive attribute. Deterministic reduction order (tile, then fragment)
/// independent of worker count.
SceneGrads rasterize_backward(const std::vector<GaussianPrimitive>& scene, const CameraModel& cam,
                              const RenderTarget& target, const Image& dL_dimage,
                              const ForwardContext& ctx);

}  // namespace splat
