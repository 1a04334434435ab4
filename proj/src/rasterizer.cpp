#include "splat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace splat {

void RenderTarget::validate() const {
    if (width == 0 || height == 0) throw ValidationError("zero-sized render target");
    if (tile_size == 0 || (tile_size & (tile_size - 1)) != 0)
        throw ValidationError("tile size must be a power of two");
    for (double c : background)
        if (c < 0.0 || c > 1.0) throw ValidationError("background outside [0,1]");
}

namespace {

// Footprint radius from the alpha cutoff: beyond it alpha*exp(-q/2) < 1/255,
// so tile binning can never drop a fragment the cutoff would keep.
double cutoff_radius(double alpha, const Mat2& cov) {
    double a = cov(0, 0), b = cov(0, 1), c = cov(1, 1);
    double lam_max = 0.5 * ((a + c) + std::sqrt((a - c) * (a - c) + 4.0 * b * b));
    double q_max = 2.0 * std::log(255.0 * alpha);
    return std::sqrt(std::max(q_max, 0.0) * lam_max) + 1e-6;
}

std::vector<SplatFragment> build_fragments(const std::vector<GaussianPrimitive>& scene,
                                           const CameraModel& cam) {
    std::vector<SplatFragment> frags;
    frags.reserve(scene.size());
    Vec3 cam_center = cam.center_world();
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto& g = scene[i];
        if (g.alpha < kAlphaCutoff) continue;
        auto proj = project_gaussian(g, cam);
        if (!proj) continue;  // culled
        SplatFragment f;
        f.prim = i;
        f.mean2d = proj->mean2d;
        f.depth = proj->depth;
        double det = proj->cov.determinant();
        if (det <= 0.0) throw NumericalError("projected covariance not positive definite");
        f.inv_cov << proj->cov(1, 1) / det, -proj->cov(0, 1) / det, -proj->cov(1, 0) / det,
            proj->cov(0, 0) / det;
        Vec3 dir = (g.mu - cam_center).normalized();
        f.color = sh_to_color(g.sh, dir);
        f.alpha = g.alpha;
        f.radius = cutoff_radius(g.alpha, proj->cov);
        frags.push_back(f);
    }
    return frags;
}

bool frag_order(const SplatFragment& a, const SplatFragment& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.prim < b.prim;  // stable tie break
}

struct PixelContribution {
    std::size_t frag;   // index into the (sorted) fragment list
    double alphat;      // clamped alpha tilde
    double trans;       // transmittance in front of this fragment
    bool clamped;
};

// Shared compositing walk; fills `kept` when requested (backward pass).
template <typename FragRange>
std::array<double, 3> composite_pixel(double px, double py, const FragRange& sorted,
                                      const std::array<double, 3>& background,
                                      std::vector<PixelContribution>* kept,
                                      double* out_trans = nullptr) {
    std::array<double, 3> color{0, 0, 0};
    double trans = 1.0;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        const SplatFragment& f = sorted[k];
        double dx = px - f.mean2d.x(), dy = py - f.mean2d.y();
        double q = f.inv_cov(0, 0) * dx * dx + 2.0 * f.inv_cov(0, 1) * dx * dy +
                   f.inv_cov(1, 1) * dy * dy;
        double at = f.alpha * std::exp(-0.5 * q);
        if (at < kAlphaCutoff) continue;
        bool clamped = at > kAlphaMax;
        if (clamped) at = kAlphaMax;
        if (kept) kept->push_back({k, at, trans, clamped});
        for (int c = 0; c < 3; ++c) color[std::size_t(c)] += trans * at * f.color[std::size_t(c)];
        trans *= 1.0 - at;
        if (trans < kTransmittanceStop) break;
    }
    for (int c = 0; c < 3; ++c) color[std::size_t(c)] += trans * background[std::size_t(c)];
    if (out_trans) *out_trans = trans;
    return color;
}

struct TileGrid {
    std::size_t tiles_x, tiles_y, tile;
    // Per tile: indices into the fragment array, already in (depth, prim) order.
    std::vector<std::vector<std::size_t>> bins;
};

TileGrid bin_fragments(std::vector<SplatFragment>& frags, const RenderTarget& target) {
    std::sort(frags.begin(), frags.end(), frag_order);
    TileGrid grid;
    grid.tile = target.tile_size;
    grid.tiles_x = (target.width + grid.tile - 1) / grid.tile;
    grid.tiles_y = (target.height + grid.tile - 1) / grid.tile;
    grid.bins.resize(grid.tiles_x * grid.tiles_y);
    for (std::size_t fi = 0; fi < frags.size(); ++fi) {
        const auto& f = frags[fi];
        double x0 = f.mean2d.x() - f.radius, x1 = f.mean2d.x() + f.radius;
        double y0 = f.mean2d.y() - f.radius, y1 = f.mean2d.y() + f.radius;
        if (x1 < 0 || y1 < 0 || x0 > double(target.width - 1) || y0 > double(target.height - 1))
            continue;
        std::size_t tx0 = std::size_t(std::max(x0, 0.0)) / grid.tile;
        std::size_t ty0 = std::size_t(std::max(y0, 0.0)) / grid.tile;
        std::size_t tx1 = std::min(std::size_t(std::max(x1, 0.0)) / grid.tile, grid.tiles_x - 1);
        std::size_t ty1 = std::min(std::size_t(std::max(y1, 0.0)) / grid.tile, grid.tiles_y - 1);
        for (std::size_t ty = ty0; ty <= ty1; ++ty)
            for (std::size_t tx = tx0; tx <= tx1; ++tx)
                grid.bins[ty * grid.tiles_x + tx].push_back(fi);
    }
    return grid;
}

struct FragView {
    const std::vector<SplatFragment>& frags;
    const std::vector<std::size_t>& idx;
    std::size_t size() const { return idx.size(); }
    const SplatFragment& operator[](std::size_t i) const { return frags[idx[i]]; }
};

}  // namespace

Image rasterize(const std::vector<GaussianPrimitive>& scene, const CameraModel& cam,
                const RenderTarget& target, ForwardContext* ctx) {
    target.validate();
    cam.validate();
    auto frags = build_fragments(scene, cam);
    TileGrid grid = bin_fragments(frags, target);
    Image img(target.width, target.height, target.background);

    std::ptrdiff_t ntiles = std::ptrdiff_t(grid.bins.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < ntiles; ++t) {
        std::size_t tx = std::size_t(t) % grid.tiles_x, ty = std::size_t(t) / grid.tiles_x;
        const auto& bin = grid.bins[std::size_t(t)];
        if (bin.empty()) continue;
        FragView view{frags, bin};
        std::size_t x0 = tx * grid.tile, y0 = ty * grid.tile;
        std::size_t x1 = std::min(x0 + grid.tile, target.width);
        std::size_t y1 = std::min(y0 + grid.tile, target.height);
        for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) {
                auto c = composite_pixel(double(x), double(y), view, target.background, nullptr);
                for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[std::size_t(ch)];
            }
    }
    if (ctx) {
        ctx->valid = true;
        ctx->frags = std::move(frags);
    }
    return img;
}

Image rasterize_naive_oracle(const std::vector<GaussianPrimitive>& scene, const CameraModel& cam,
                             const RenderTarget& target) {
    target.validate();
    cam.validate();
    auto frags = build_fragments(scene, cam);
    std::sort(frags.begin(), frags.end(), frag_order);
    Image img(target.width, target.height, target.background);
    for (std::size_t y = 0; y < target.height; ++y)
        for (std::size_t x = 0; x < target.width; ++x) {
            auto c = composite_pixel(double(x), double(y), frags, target.background, nullptr);
            for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[std::size_t(ch)];
        }
    return img;
}

SceneGrads::SceneGrads(const std::vector<GaussianPrimitive>& scene)
    : mu(scene.size(), Vec3::Zero()),
      r(scene.size(), {0, 0, 0, 0}),
      s(scene.size(), Vec3::Zero()),
      alpha(scene.size(), 0.0),
      sh(scene.size()) {
    for (std::size_t i = 0; i < scene.size(); ++i) sh[i].assign(scene[i].sh.size(), 0.0);
}

namespace {

// Screen-space accumulators per primitive, before chaining into 3-D attributes.
struct PrimAccum {
    Vec2 d_mean = Vec2::Zero();
    Mat2 d_invcov = Mat2::Zero();
    double d_alpha = 0.0;
    std::array<double, 3> d_color = {0, 0, 0};
};

void backward_pixel(double px, double py, const FragView& view,
                    const std::array<double, 3>& background, const std::array<double, 3>& adj,
                    std::map<std::size_t, PrimAccum>& accum) {
    std::vector<PixelContribution> kept;
    double t_end = 1.0;
    composite_pixel(px, py, view, background, &kept, &t_end);
    std::array<double, 3> suffix;
    for (int c = 0; c < 3; ++c) suffix[std::size_t(c)] = t_end * background[std::size_t(c)];
    for (auto it = kept.rbegin(); it != kept.rend(); ++it) {
        const SplatFragment& f = view[it->frag];
        PrimAccum& pa = accum[f.prim];
        double d_alphat = 0.0;
        for (int ci = 0; ci < 3; ++ci) {
            std::size_t c = std::size_t(ci);
            pa.d_color[c] += adj[c] * it->alphat * it->trans;
            d_alphat += adj[c] * (f.color[c] * it->trans - suffix[c] / (1.0 - it->alphat));
            suffix[c] += f.color[c] * it->alphat * it->trans;
        }
        if (it->clamped) continue;  // flat region of min(alpha*G, kAlphaMax)
        double g_exp = it->alphat / f.alpha;  // exp(-q/2)
        pa.d_alpha += g_exp * d_alphat;
        double dq = -0.5 * f.alpha * g_exp * d_alphat;
        Vec2 d(px - f.mean2d.x(), py - f.mean2d.y());
        Vec2 qd = f.inv_cov * d;
        pa.d_mean += dq * (-2.0) * qd;  // dq/dmean = -2*Q*(p - mean)
        pa.d_invcov += dq * (d * d.transpose());
    }
}

Mat3 quat_rot_partial(const Quat& q, int k) {
    double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 m;
    switch (k) {
        case 0:
            m << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
            break;
        case 1:
            m << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
            break;
        case 2:
            m << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
            break;
        default:
            m << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
            break;
    }
    return m;
}

}  // namespace

SceneGrads rasterize_backward(const std::vector<GaussianPrimitive>& scene, const CameraModel& cam,
                              const RenderTarget& target, const Image& dL_dimage,
                              const ForwardContext& ctx) {
    if (!ctx.valid) throw ValidationError("rasterize_backward requires forward-pass metadata");
    if (dL_dimage.width != target.width || dL_dimage.height != target.height)
        throw ValidationError("dL/dImage dimension mismatch");
    // Re-bin the retained fragments; binning is deterministic, so the pixel
    // walk repeats the forward pass exactly.
    std::vector<SplatFragment> frags = ctx.frags;
    TileGrid grid = bin_fragments(frags, target);

    std::vector<std::map<std::size_t, PrimAccum>> tile_accums(grid.bins.size());
    std::ptrdiff_t ntiles = std::ptrdiff_t(grid.bins.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < ntiles; ++t) {
        std::size_t tx = std::size_t(t) % grid.tiles_x, ty = std::size_t(t) / grid.tiles_x;
        const auto& bin = grid.bins[std::size_t(t)];
        if (bin.empty()) continue;
        FragView view{frags, bin};
        std::size_t x0 = tx * grid.tile, y0 = ty * grid.tile;
        std::size_t x1 = std::min(x0 + grid.tile, target.width);
        std::size_t y1 = std::min(y0 + grid.tile, target.height);
        auto& accum = tile_accums[std::size_t(t)];
        for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) {
                std::array<double, 3> adj = {dL_dimage.at(x, y, 0), dL_dimage.at(x, y, 1),
                                             dL_dimage.at(x, y, 2)};
                if (adj[0] == 0 && adj[1] == 0 && adj[2] == 0) continue;
                backward_pixel(double(x), double(y), view, target.background, adj, accum);
            }
    }

    // Fixed tile-order merge keeps the reduction deterministic for any
    // worker count.
    std::map<std::size_t, PrimAccum> global;
    for (auto& ta : tile_accums)
        for (auto& [prim, pa] : ta) {
            PrimAccum& g = global[prim];
            g.d_mean += pa.d_mean;
            g.d_invcov += pa.d_invcov;
            g.d_alpha += pa.d_alpha;
            for (int c = 0; c < 3; ++c) g.d_color[std::size_t(c)] += pa.d_color[std::size_t(c)];
        }

    SceneGrads grads(scene);
    Vec3 cam_center = cam.center_world();
    for (auto& [i, pa] : global) {
        const GaussianPrimitive& g = scene[i];
        Vec3 tc = cam.to_camera(g.mu);
        double z = tc.z();
        Eigen::Matrix<double, 2, 3> J;
        J << cam.f / z, 0, -cam.f * tc.x() / (z * z), 0, cam.f / z, -cam.f * tc.y() / (z * z);
        Eigen::Matrix<double, 2, 3> A = J * cam.R;
        Quat qn = g.r.normalized();
        Mat3 Rq = qn.to_matrix();
        Mat3 M = Rq * g.s.asDiagonal();
        Mat3 sigma = M * M.transpose();
        Mat2 cov = A * sigma * A.transpose() + kCovDilation * Mat2::Identity();
        Mat2 Q = cov.inverse();

        // inv_cov -> cov -> {sigma, A}
        Mat2 d_cov = -Q * pa.d_invcov * Q;
        Mat3 d_sigma = A.transpose() * d_cov * A;
        Eigen::Matrix<double, 2, 3> d_A = 2.0 * d_cov * A * sigma;
        Eigen::Matrix<double, 2, 3> d_J = d_A * cam.R.transpose();

        // mean2d + Jacobian entries -> camera-space position
        Vec3 d_tc = Vec3::Zero();
        d_tc.x() += pa.d_mean.x() * cam.f / z;
        d_tc.y() += pa.d_mean.y() * cam.f / z;
        d_tc.z() += pa.d_mean.x() * (-cam.f * tc.x() / (z * z)) +
                    pa.d_mean.y() * (-cam.f * tc.y() / (z * z));
        d_tc.x() += d_J(0, 2) * (-cam.f / (z * z));
        d_tc.y() += d_J(1, 2) * (-cam.f / (z * z));
        d_tc.z() += (d_J(0, 0) + d_J(1, 1)) * (-cam.f / (z * z)) +
                    d_J(0, 2) * (2.0 * cam.f * tc.x() / (z * z * z)) +
                    d_J(1, 2) * (2.0 * cam.f * tc.y() / (z * z * z));
        Vec3 d_mu = cam.R.transpose() * d_tc;

        // color -> {sh, view dir}
        int degree = g.sh_degree();
        Vec3 v = g.mu - cam_center;
        double vn = v.norm();
        Vec3 dir = v / vn;
        auto basis = sh_basis(dir, degree);
        std::array<double, 3> raw{0.5, 0.5, 0.5};
        for (std::size_t k = 0; k < basis.size(); ++k)
            for (int c = 0; c < 3; ++c)
                raw[std::size_t(c)] += basis[k] * g.sh[3 * k + std::size_t(c)];
        std::array<double, 3> dc{};
        for (int c = 0; c < 3; ++c)
            dc[std::size_t(c)] = (raw[std::size_t(c)] > 0.0 && raw[std::size_t(c)] < 1.0)
                                     ? pa.d_color[std::size_t(c)]
                                     : 0.0;
        auto dbasis = sh_basis_grad(dir, degree);
        Vec3 d_dir = Vec3::Zero();
        for (std::size_t k = 0; k < basis.size(); ++k) {
            double coeff = 0.0;
            for (int c = 0; c < 3; ++c) {
                grads.sh[i][3 * k + std::size_t(c)] += basis[k] * dc[std::size_t(c)];
                coeff += dc[std::size_t(c)] * g.sh[3 * k + std::size_t(c)];
            }
            d_dir += coeff * dbasis[k];
        }
        d_mu += (d_dir - dir * dir.dot(d_dir)) / vn;

        // sigma -> {quaternion, scale}
        Mat3 d_M = 2.0 * d_sigma * M;
        Vec3 d_s = Vec3::Zero();
        for (int k = 0; k < 3; ++k)
            for (int row = 0; row < 3; ++row) d_s(k) += d_M(row, k) * Rq(row, k);
        Mat3 d_Rq = d_M * Vec3(g.s).asDiagonal();
        Eigen::Vector4d d_qu = Eigen::Vector4d::Zero();
        for (int k = 0; k < 4; ++k)
            d_qu(k) = (quat_rot_partial(qn, k).array() * d_Rq.array()).sum();
        // through quaternion normalization
        Eigen::Vector4d u(qn.w, qn.x, qn.y, qn.z);
        double rn = g.r.norm();
        Eigen::Vector4d d_q = (d_qu - u * u.dot(d_qu)) / rn;

        grads.mu[i] += d_mu;
        for (int k = 0; k < 4; ++k) grads.r[i][std::size_t(k)] += d_q(k);
        grads.s[i] += d_s;
        grads.alpha[i] += pa.d_alpha;
    }
    return grads;
}

}  // namespace splat
