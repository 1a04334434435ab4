#include "splat/head_sync.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "splat/adam.hpp"

namespace splat {

void MorphableBasis::validate() const {
    if (mean.ndim() != 2 || mean.shape[1] != 3)
        throw ValidationError("morphable basis: mean must be [V,3]");
    std::size_t v3 = 3 * n_vertices();
    if (id_basis.ndim() != 2 || id_basis.rows() != v3)
        throw ValidationError("morphable basis: id_basis must be [3V,k_id]");
    if (exp_basis.ndim() != 2 || exp_basis.rows() != v3)
        throw ValidationError("morphable basis: exp_basis must be [3V,k_exp]");
    for (auto idx : landmark_indices)
        if (idx >= n_vertices()) throw ValidationError("morphable basis: landmark index range");
    if (!mean.all_finite() || !id_basis.all_finite() || !exp_basis.all_finite())
        throw NumericalError("morphable basis: non-finite entries");
}

std::vector<Vec3> MorphableBasis::landmarks_3d(const Tensor& a_id, const Tensor& a_exp) const {
    if (a_id.numel() != k_id() || a_exp.numel() != k_exp())
        throw ValidationError("morphable basis: coefficient length mismatch");
    std::vector<Vec3> out;
    out.reserve(landmark_indices.size());
    for (auto idx : landmark_indices) {
        Vec3 p(mean.at2(idx, 0), mean.at2(idx, 1), mean.at2(idx, 2));
        for (int c = 0; c < 3; ++c) {
            std::size_t row = 3 * idx + std::size_t(c);
            for (std::size_t m = 0; m < k_id(); ++m)
                p(c) += id_basis.at2(row, m) * a_id.data[m];
            for (std::size_t m = 0; m < k_exp(); ++m)
                p(c) += exp_basis.at2(row, m) * a_exp.data[m];
        }
        out.push_back(p);
    }
    return out;
}

namespace {

constexpr double kNear = 1e-3;

/// Rotation of a possibly non-unit quaternion plus the partials of R(q/|q|)
/// w.r.t. the raw components.
struct QuatRot {
    Mat3 R;
    std::array<Mat3, 4> dR;  // d/dqw, d/dqx, d/dqy, d/dqz
};

QuatRot quat_rot(const Quat& q) {
    double n = q.norm();
    if (n < 1e-9) throw NumericalError("degenerate quaternion in pose");
    double w = q.w / n, x = q.x / n, y = q.y / n, z = q.z / n;
    QuatRot out;
    out.R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    std::array<Mat3, 4> du;  // partials w.r.t. the unit components
    du[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    du[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    du[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    du[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    for (auto& m : du) m *= 2.0;
    // Chain through normalization: du_j/dq_k = (delta - u_j u_k)/n.
    double u[4] = {w, x, y, z};
    for (int k = 0; k < 4; ++k) {
        Mat3 acc = Mat3::Zero();
        for (int j = 0; j < 4; ++j) {
            double jac = ((j == k ? 1.0 : 0.0) - u[j] * u[k]) / n;
            acc += du[std::size_t(j)] * jac;
        }
        out.dR[std::size_t(k)] = acc;
    }
    return out;
}

struct FitProblem {
    const MorphableBasis* basis;
    const Tensor* a_id;
    const std::vector<io::LandmarkObs>* obs;
    double f;
    Vec2 principal;
    bool fit_expression;
    std::size_t k_exp;

    // Parameter layout: q(4), t(3)[, a_exp(k_exp)].
    std::size_t dim() const { return 7 + (fit_expression ? k_exp : 0); }

    double eval(const Tensor& p, Tensor* grad, const Tensor& a_exp_fixed) const {
        Quat q{p.data[0], p.data[1], p.data[2], p.data[3]};
        Vec3 T(p.data[4], p.data[5], p.data[6]);
        Tensor a_exp = a_exp_fixed;
        if (fit_expression)
            for (std::size_t m = 0; m < k_exp; ++m) a_exp.data[m] = p.data[7 + m];

        auto qr = quat_rot(q);
        auto lms = basis->landmarks_3d(*a_id, a_exp);
        if (grad) std::fill(grad->data.begin(), grad->data.end(), 0.0);
        double wsum = 0, esum = 0;
        for (const auto& ob : *obs) {
            if (ob.point_id < 0 || std::size_t(ob.point_id) >= lms.size())
                throw ValidationError("landmark observation id out of range");
            const Vec3& v = lms[std::size_t(ob.point_id)];
            Vec3 pc = qr.R * v + T;
            double w = ob.weight;
            wsum += w;
            if (pc.z() < kNear) {
                // Soft barrier keeps the optimizer on the visible side.
                double pen = kNear - pc.z();
                esum += w * (1e4 * pen * pen + 1e2);
                if (grad) {
                    Vec3 dpc(0, 0, -2e4 * pen * w);
                    for (int k = 0; k < 4; ++k)
                        grad->data[std::size_t(k)] += dpc.dot(qr.dR[std::size_t(k)] * v);
                    for (int k = 0; k < 3; ++k) grad->data[4 + std::size_t(k)] += dpc(k);
                }
                continue;
            }
            double invz = 1.0 / pc.z();
            Vec2 proj(f * pc.x() * invz + principal.x(), f * pc.y() * invz + principal.y());
            Vec2 r = proj - Vec2(ob.x, ob.y);
            esum += w * r.squaredNorm();
            if (grad) {
                Eigen::Matrix<double, 2, 3> J;
                J << f * invz, 0, -f * pc.x() * invz * invz, 0, f * invz,
                    -f * pc.y() * invz * invz;
                Vec3 dpc = J.transpose() * (2.0 * w * r);
                for (int k = 0; k < 4; ++k)
                    grad->data[std::size_t(k)] += dpc.dot(qr.dR[std::size_t(k)] * v);
                for (int k = 0; k < 3; ++k) grad->data[4 + std::size_t(k)] += dpc(k);
                if (fit_expression) {
                    Vec3 dv = qr.R.transpose() * dpc;
                    std::size_t vi = basis->landmark_indices[std::size_t(ob.point_id)];
                    for (std::size_t m = 0; m < k_exp; ++m) {
                        double acc = 0;
                        for (int c = 0; c < 3; ++c)
                            acc += dv(c) * basis->exp_basis.at2(3 * vi + std::size_t(c), m);
                        grad->data[7 + m] += acc;
                    }
                }
            }
        }
        if (wsum == 0.0) throw ValidationError("pose fit: all observation weights zero");
        if (grad)
            for (auto& g : grad->data) g /= wsum;
        return esum / wsum;
    }
};

/// Adam with halving backtracking; the returned trace of accepted residuals
/// is non-increasing.
double descend(Tensor& p, const std::function<double(const Tensor&, Tensor*)>& eval, int iters,
               double lr, std::vector<double>* trace = nullptr) {
    AdamState st;
    AdamHyper hyper;
    hyper.lr = lr;
    Tensor grad(p.shape);
    double err = eval(p, &grad);
    auto try_step = [&] {
        for (int halve = 0; halve < 24; ++halve) {
            Tensor p2 = p;
            AdamState st2 = st;
            adam_step(p2, grad, st2, hyper);
            double e2 = eval(p2, nullptr);
            if (e2 <= err) {
                p = std::move(p2);
                st = std::move(st2);
                err = e2;
                return true;
            }
            hyper.lr *= 0.5;
        }
        return false;
    };
    for (int it = 0; it < iters; ++it) {
        bool accepted = try_step();
        if (!accepted) {
            // Stale momentum can point uphill at every step size even when the
            // raw gradient does not; discard it once and retry before treating
            // the stall as convergence.
            st = AdamState{};
            hyper.lr = lr;
            accepted = try_step();
        }
        if (!accepted) break;
        // Adam steps are not descent-guaranteed, so a single rejected step
        // must not pin the rate at the halved value for the rest of the run.
        // Recovery is much slower than backtracking: the rate settles where
        // rejections balance successes instead of ping-ponging.
        hyper.lr = std::min(lr, hyper.lr * 1.05);
        if (trace) trace->push_back(err);
        if (it + 1 < iters) err = eval(p, &grad);
    }
    return err;
}

}  // namespace

std::vector<Vec2> project_landmarks(const MorphableBasis& basis, const Tensor& a_id,
                                    const Tensor& a_exp, double f, const Quat& R, const Vec3& T,
                                    const Vec2& principal) {
    if (f <= 0) throw ValidationError("project_landmarks: focal must be positive");
    Mat3 rot = quat_rot(R).R;
    std::vector<Vec2> out;
    for (const Vec3& v : basis.landmarks_3d(a_id, a_exp)) {
        Vec3 pc = rot * v + T;
        if (pc.z() < kNear) throw ValidationError("project_landmarks: landmark behind camera");
        out.emplace_back(f * pc.x() / pc.z() + principal.x(),
                         f * pc.y() / pc.z() + principal.y());
    }
    return out;
}

io::PoseRecord init_pose_guess(const MorphableBasis& basis, const Tensor& a_id,
                               const std::vector<io::LandmarkObs>& obs, double f,
                               const Vec2& principal) {
    if (obs.empty()) throw ValidationError("init_pose_guess: no observations");
    Tensor a_exp = Tensor::zeros({basis.k_exp()});
    auto lms = basis.landmarks_3d(a_id, a_exp);
    Vec3 c3 = Vec3::Zero();
    for (const auto& v : lms) c3 += v;
    c3 /= double(lms.size());
    double s3 = 0;
    for (const auto& v : lms) s3 += (v - c3).squaredNorm();
    s3 = std::sqrt(s3 / double(lms.size()));

    Vec2 c2 = Vec2::Zero();
    for (const auto& ob : obs) c2 += Vec2(ob.x, ob.y);
    c2 /= double(obs.size());
    double s2 = 0;
    for (const auto& ob : obs) s2 += (Vec2(ob.x, ob.y) - c2).squaredNorm();
    s2 = std::sqrt(s2 / double(obs.size()));
    if (s2 < 1e-9 || s3 < 1e-9)
        throw ValidationError("init_pose_guess: degenerate landmark spread");

    double z = f * s3 / s2;
    io::PoseRecord rec;
    rec.f = f;
    rec.t = Vec3((c2.x() - principal.x()) * z / f - c3.x(),
                 (c2.y() - principal.y()) * z / f - c3.y(), z - c3.z());
    return rec;
}

FrameFit fit_frame_pose(const MorphableBasis& basis, const Tensor& a_id,
                        const std::vector<io::LandmarkObs>& obs, double f,
                        const io::PoseRecord& init, const Tensor& a_exp_init,
                        const PoseFitConfig& cfg) {
    basis.validate();
    FitProblem prob{&basis, &a_id, &obs, f, cfg.principal, cfg.fit_expression, basis.k_exp()};
    Tensor p({prob.dim()});
    p.data[0] = init.q.w;
    p.data[1] = init.q.x;
    p.data[2] = init.q.y;
    p.data[3] = init.q.z;
    for (int k = 0; k < 3; ++k) p.data[4 + std::size_t(k)] = init.t(k);
    if (cfg.fit_expression)
        for (std::size_t m = 0; m < basis.k_exp(); ++m) p.data[7 + m] = a_exp_init.data[m];

    Tensor a_exp_fixed = a_exp_init;
    auto eval = [&](const Tensor& pp, Tensor* g) { return prob.eval(pp, g, a_exp_fixed); };
    FrameFit fit;
    fit.initial_err = eval(p, nullptr);
    fit.final_err = descend(p, eval, cfg.iters, cfg.lr);

    Quat q{p.data[0], p.data[1], p.data[2], p.data[3]};
    double n = q.norm();
    fit.pose.q = Quat{q.w / n, q.x / n, q.y / n, q.z / n};
    fit.pose.t = Vec3(p.data[4], p.data[5], p.data[6]);
    fit.pose.f = f;
    fit.a_exp = a_exp_init;
    if (cfg.fit_expression)
        for (std::size_t m = 0; m < basis.k_exp(); ++m) fit.a_exp.data[m] = p.data[7 + m];
    return fit;
}

std::vector<FrameFit> refine_pose(const io::LandmarkTrack& track, const MorphableBasis& basis,
                                  const Tensor& a_id, double f,
                                  const std::vector<io::PoseRecord>& init,
                                  const PoseFitConfig& cfg) {
    if (init.size() != track.frames.size())
        throw ValidationError("refine_pose: init pose count mismatch");
    std::vector<FrameFit> out(track.frames.size());
    Tensor a_exp0 = Tensor::zeros({basis.k_exp()});
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(track.frames.size()); ++i)
        out[std::size_t(i)] = fit_frame_pose(basis, a_id, track.frames[std::size_t(i)], f,
                                             init[std::size_t(i)], a_exp0, cfg);
    return out;
}

FocalSearchResult search_focal(const io::LandmarkTrack& track, const MorphableBasis& basis,
                               const Tensor& a_id, const std::vector<double>& candidates,
                               const PoseFitConfig& cfg) {
    if (candidates.empty()) throw ValidationError("search_focal: empty candidate list");
    bool degenerate = true;
    for (const auto& fr : track.frames)
        for (std::size_t i = 1; i < fr.size(); ++i)
            if (fr[i].x != fr[0].x || fr[i].y != fr[0].y) degenerate = false;
    if (degenerate) throw ValidationError("search_focal: degenerate track");

    FocalSearchResult res;
    for (double f : candidates) {
        if (f <= 0) throw ValidationError("search_focal: non-positive candidate");
        std::vector<io::PoseRecord> init;
        for (const auto& fr : track.frames)
            init.push_back(init_pose_guess(basis, a_id, fr, f, cfg.principal));
        auto fits = refine_pose(track, basis, a_id, f, init, cfg);
        double mse = 0;
        for (const auto& fit : fits) mse += fit.final_err;
        res.mse.push_back(mse / double(fits.size()));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < res.mse.size(); ++i)
        if (res.mse[i] < res.mse[best]) best = i;
    res.f_opt = candidates[best];
    return res;
}

std::vector<double> flow_laplacian_abs(const io::FlowFrame& frame, std::size_t width,
                                       std::size_t height) {
    if (width == 0 || height == 0 || frame.u.size() != width * height ||
        frame.v.size() != width * height)
        throw ValidationError("flow frame size mismatch");
    std::vector<double> mag(width * height);
    for (std::size_t i = 0; i < mag.size(); ++i)
        mag[i] = std::sqrt(frame.u[i] * frame.u[i] + frame.v[i] * frame.v[i]);
    auto at = [&](std::ptrdiff_t x, std::ptrdiff_t y) {
        x = std::clamp(x, std::ptrdiff_t(0), std::ptrdiff_t(width) - 1);
        y = std::clamp(y, std::ptrdiff_t(0), std::ptrdiff_t(height) - 1);
        return mag[std::size_t(y) * width + std::size_t(x)];
    };
    std::vector<double> lap(width * height);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            auto xi = std::ptrdiff_t(x), yi = std::ptrdiff_t(y);
            lap[y * width + x] = std::fabs(at(xi + 1, yi) + at(xi - 1, yi) + at(xi, yi + 1) +
                                           at(xi, yi - 1) - 4.0 * at(xi, yi));
        }
    return lap;
}

std::vector<PixelKey> select_keypoints(const io::FlowFrame& frame, std::size_t width,
                                       std::size_t height, double theta) {
    if (theta < 0) throw ValidationError("select_keypoints: negative threshold");
    auto lap = flow_laplacian_abs(frame, width, height);
    std::vector<PixelKey> out;
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            if (lap[y * width + x] > theta) out.push_back({x, y});
    return out;
}

double adaptive_flow_threshold(const io::FlowFrame& frame, std::size_t width,
                               std::size_t height) {
    auto lap = flow_laplacian_abs(frame, width, height);
    std::sort(lap.begin(), lap.end());
    std::size_t idx = std::size_t(0.95 * double(lap.size() - 1));
    return lap[idx];
}

bool point_in_polygon(const Vec2& p, const Polygon& poly) {
    if (poly.size() < 3) throw ValidationError("polygon needs at least 3 vertices");
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[j];
        if ((a.y() > p.y()) != (b.y() > p.y())) {
            double xint = a.x() + (p.y() - a.y()) / (b.y() - a.y()) * (b.x() - a.x());
            if (p.x() < xint) inside = !inside;
        }
    }
    return inside;
}

std::vector<io::LandmarkObs> semantic_weighting(const std::vector<io::LandmarkObs>& keypoints,
                                                const std::vector<Polygon>& regions,
                                                double gamma) {
    std::vector<io::LandmarkObs> out = keypoints;
    for (auto& p : out) {
        bool in_region = false;
        for (const auto& poly : regions)
            if (point_in_polygon(Vec2(p.x, p.y), poly)) in_region = true;
        p.weight = in_region ? gamma : 1.0;
    }
    return out;
}

namespace {

/// Weighted sum of plain reprojection norms over all frames; gradient layout
/// [points(3J) | per-frame q(4), t(3)].
struct BaProblem {
    const io::LandmarkTrack* track;
    std::vector<int> ids;  // column -> point id
    std::size_t n_frames, n_points;
    double f;
    Vec2 principal;
    bool fit_poses;

    std::size_t col_of(int id) const {
        auto it = std::lower_bound(ids.begin(), ids.end(), id);
        if (it == ids.end() || *it != id) throw ValidationError("bundle: unknown point id");
        return std::size_t(it - ids.begin());
    }

    double eval(const Tensor& p, Tensor* grad) const {
        if (grad) std::fill(grad->data.begin(), grad->data.end(), 0.0);
        double total = 0;
        for (std::size_t fi = 0; fi < n_frames; ++fi) {
            std::size_t pbase = 3 * n_points + 7 * fi;
            Quat q{p.data[pbase], p.data[pbase + 1], p.data[pbase + 2], p.data[pbase + 3]};
            Vec3 T(p.data[pbase + 4], p.data[pbase + 5], p.data[pbase + 6]);
            auto qr = quat_rot(q);
            for (const auto& ob : track->frames[fi]) {
                std::size_t j = col_of(ob.point_id);
                Vec3 P(p.data[3 * j], p.data[3 * j + 1], p.data[3 * j + 2]);
                Vec3 pc = qr.R * P + T;
                double w = ob.weight;
                if (pc.z() < kNear) {
                    double pen = kNear - pc.z();
                    total += w * (1e4 * pen * pen + 1e2);
                    if (grad) {
                        Vec3 dpc(0, 0, -2e4 * pen * w);
                        Vec3 dP = qr.R.transpose() * dpc;
                        for (int k = 0; k < 3; ++k) grad->data[3 * j + std::size_t(k)] += dP(k);
                        if (fit_poses) {
                            for (int k = 0; k < 4; ++k)
                                grad->data[pbase + std::size_t(k)] +=
                                    dpc.dot(qr.dR[std::size_t(k)] * P);
                            for (int k = 0; k < 3; ++k)
                                grad->data[pbase + 4 + std::size_t(k)] += dpc(k);
                        }
                    }
                    continue;
                }
                double invz = 1.0 / pc.z();
                Vec2 proj(f * pc.x() * invz + principal.x(),
                          f * pc.y() * invz + principal.y());
                Vec2 r = proj - Vec2(ob.x, ob.y);
                double rho = std::sqrt(r.squaredNorm() + 1e-12);
                total += w * rho;
                if (grad) {
                    Eigen::Matrix<double, 2, 3> J;
                    J << f * invz, 0, -f * pc.x() * invz * invz, 0, f * invz,
                        -f * pc.y() * invz * invz;
                    Vec3 dpc = J.transpose() * (w / rho * r);
                    Vec3 dP = qr.R.transpose() * dpc;
                    for (int k = 0; k < 3; ++k) grad->data[3 * j + std::size_t(k)] += dP(k);
                    if (fit_poses) {
                        for (int k = 0; k < 4; ++k)
                            grad->data[pbase + std::size_t(k)] +=
                                dpc.dot(qr.dR[std::size_t(k)] * P);
                        for (int k = 0; k < 3; ++k)
                            grad->data[pbase + 4 + std::size_t(k)] += dpc(k);
                    }
                }
            }
        }
        return total;
    }
};

}  // namespace

BundleResult bundle_adjust(const io::LandmarkTrack& tracks,
                           const std::vector<io::PoseRecord>& init_poses,
                           const BundleConfig& cfg) {
    if (tracks.frames.size() < 3)
        throw ValidationError("bundle_adjust: need at least 3 frames");
    if (init_poses.size() != tracks.frames.size())
        throw ValidationError("bundle_adjust: pose count mismatch");

    BaProblem prob;
    prob.track = &tracks;
    std::vector<int> ids;
    for (const auto& fr : tracks.frames)
        for (const auto& ob : fr) ids.push_back(ob.point_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.size() < 6) throw ValidationError("bundle_adjust: need at least 6 points");
    prob.ids = ids;
    prob.n_frames = tracks.frames.size();
    prob.n_points = ids.size();
    prob.f = cfg.f;
    prob.principal = cfg.principal;

    // Parameter vector: points first, then per-frame poses.
    Tensor p({3 * prob.n_points + 7 * prob.n_frames});
    for (std::size_t fi = 0; fi < prob.n_frames; ++fi) {
        std::size_t base = 3 * prob.n_points + 7 * fi;
        const auto& ip = init_poses[fi];
        p.data[base] = ip.q.w;
        p.data[base + 1] = ip.q.x;
        p.data[base + 2] = ip.q.y;
        p.data[base + 3] = ip.q.z;
        for (int k = 0; k < 3; ++k) p.data[base + 4 + std::size_t(k)] = ip.t(k);
    }
    // Random point init: first-frame back-projection at a nominal depth plus
    // seeded noise ("randomly initialize the 3D coordinates").
    Rng rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    double z0 = std::max(init_poses[0].t.norm(), 1.0);
    Mat3 R0 = quat_rot(init_poses[0].q).R;
    std::map<int, Vec2> first_obs;
    for (const auto& ob : tracks.frames[0]) first_obs.emplace(ob.point_id, Vec2(ob.x, ob.y));
    for (std::size_t j = 0; j < prob.n_points; ++j) {
        Vec2 o = first_obs.count(ids[j]) ? first_obs[ids[j]] : cfg.principal;
        Vec3 cam((o.x() - cfg.principal.x()) * z0 / cfg.f,
                 (o.y() - cfg.principal.y()) * z0 / cfg.f, z0);
        Vec3 world = R0.transpose() * (cam - init_poses[0].t);
        for (int k = 0; k < 3; ++k)
            p.data[3 * j + std::size_t(k)] = world(k) + noise(rng);
    }

    BundleResult res;

    prob.fit_poses = false;
    auto eval1 = [&](const Tensor& pp, Tensor* g) { return prob.eval(pp, g); };
    res.stage1_residual = descend(p, eval1, cfg.stage1_iters, cfg.stage1_lr,
                                  &res.residual_trace);

    prob.fit_poses = true;
    res.stage2_residual = descend(p, eval1, cfg.stage2_iters, cfg.stage2_lr,
                                  &res.residual_trace);

    for (std::size_t j = 0; j < prob.n_points; ++j)
        res.points.emplace_back(p.data[3 * j], p.data[3 * j + 1], p.data[3 * j + 2]);
    for (std::size_t fi = 0; fi < prob.n_frames; ++fi) {
        std::size_t base = 3 * prob.n_points + 7 * fi;
        Quat q{p.data[base], p.data[base + 1], p.data[base + 2], p.data[base + 3]};
        double n = q.norm();
        io::PoseRecord rec;
        rec.q = Quat{q.w / n, q.x / n, q.y / n, q.z / n};
        rec.t = Vec3(p.data[base + 4], p.data[base + 5], p.data[base + 6]);
        rec.f = cfg.f;
        res.poses.push_back(rec);
    }
    return res;
}

std::vector<io::PoseRecord> smooth_poses(const std::vector<io::PoseRecord>& track, int window) {
    if (window < 1 || window % 2 == 0) throw ValidationError("smooth_poses: window odd, >= 1");
    if (std::size_t(window) > track.size())
        throw ValidationError("smooth_poses: window larger than sequence");
    if (window == 1) return track;
    int half = window / 2;
    std::vector<io::PoseRecord> out = track;
    for (std::size_t i = 0; i < track.size(); ++i) {
        Vec3 t = Vec3::Zero();
        double qacc[4] = {0, 0, 0, 0};
        const Quat& ref = track[i].q;
        for (int d = -half; d <= half; ++d) {
            std::size_t j = std::size_t(
                std::clamp(std::ptrdiff_t(i) + d, std::ptrdiff_t(0),
                           std::ptrdiff_t(track.size()) - 1));
            t += track[j].t;
            Quat q = track[j].q;
            // Sign-align against the window center before averaging.
            double dot = q.w * ref.w + q.x * ref.x + q.y * ref.y + q.z * ref.z;
            double s = dot < 0 ? -1.0 : 1.0;
            qacc[0] += s * q.w;
            qacc[1] += s * q.x;
            qacc[2] += s * q.y;
            qacc[3] += s * q.z;
        }
        out[i].t = t / double(window);
        Quat q{qacc[0], qacc[1], qacc[2], qacc[3]};
        double n = q.norm();
        if (n < 1e-9) throw NumericalError("smooth_poses: degenerate quaternion average");
        out[i].q = Quat{q.w / n, q.x / n, q.y / n, q.z / n};
    }
    return out;
}

double rotation_geodesic(const Mat3& a, const Mat3& b) {
    // atan2 of (sin, cos) instead of acos(cos): acos loses half the digits
    // near 0 and pi, and identical inputs must give ~0, not ~1e-8.
    Mat3 r = a.transpose() * b;
    double c = (r.trace() - 1.0) / 2.0;
    Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    return std::atan2(0.5 * w.norm(), std::clamp(c, -1.0, 1.0));
}

SimilarityTransform align_similarity(const std::vector<Vec3>& src,
                                     const std::vector<Vec3>& dst) {
    if (src.size() != dst.size() || src.size() < 3)
        throw ValidationError("align_similarity: need >= 3 matched points");
    Eigen::MatrixXd S(3, src.size()), D(3, dst.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        S.col(std::ptrdiff_t(i)) = src[i];
        D.col(std::ptrdiff_t(i)) = dst[i];
    }
    Eigen::Matrix4d T = Eigen::umeyama(S, D, true);
    SimilarityTransform out;
    Mat3 sR = T.block<3, 3>(0, 0);
    out.scale = std::cbrt(sR.determinant());
    out.R = sR / out.scale;
    out.t = T.block<3, 1>(0, 3);
    return out;
}

}  // namespace splat
