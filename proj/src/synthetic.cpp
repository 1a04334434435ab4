#include "splat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace splat {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kHeadDepth = 2.5;  // object-to-camera z offset, scene units

GaussianPrimitive random_splat(Rng& rng, const Vec3& mu, double scale_base) {
    GaussianPrimitive g;
    g.mu = mu;
    Tensor q = randn({4}, rng);
    double n = std::sqrt(q.data[0] * q.data[0] + q.data[1] * q.data[1] + q.data[2] * q.data[2] +
                         q.data[3] * q.data[3]);
    g.r = Quat{q.data[0] / n, q.data[1] / n, q.data[2] / n, q.data[3] / n};
    Tensor su = rand_uniform({3}, rng, 0.5, 1.5);
    g.s = Vec3(scale_base * su.data[0], scale_base * su.data[1], scale_base * su.data[2]);
    g.alpha = rand_uniform({1}, rng, 0.3, 0.9).data[0];
    g.sh.resize(12);  // degree 1
    Tensor dc = randn({3}, rng, 0.25), hi = randn({9}, rng, 0.05);
    for (int c = 0; c < 3; ++c) g.sh[std::size_t(c)] = dc.data[std::size_t(c)];
    for (int k = 0; k < 9; ++k) g.sh[std::size_t(3 + k)] = hi.data[std::size_t(k)];
    return g;
}

std::vector<double> feature_at(std::size_t dim, std::size_t frame, std::size_t frames,
                               double phase_step) {
    std::vector<double> f(dim);
    double t = frames > 1 ? double(frame) / double(frames) : 0.0;
    for (std::size_t k = 0; k < dim; ++k)
        f[k] = std::sin(2.0 * kPi * t * double(1 + k % 3) + phase_step * double(k));
    return f;
}

Vec3 apply_map(const Tensor& A, const std::vector<double>& f) {
    Vec3 d = Vec3::Zero();
    for (int c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < f.size(); ++k)
            d(c) += A.at2(std::size_t(c), k) * f[k];
    return d;
}

Vec2 project_point(const Vec3& p_cam, double f, const Vec2& pp) {
    return {f * p_cam.x() / p_cam.z() + pp.x(), f * p_cam.y() / p_cam.z() + pp.y()};
}

}  // namespace

std::vector<GaussianPrimitive> apply_pose(const std::vector<GaussianPrimitive>& scene,
                                          const io::PoseRecord& pose) {
    Mat3 R = pose.q.normalized().to_matrix();
    std::vector<GaussianPrimitive> out = scene;
    for (auto& g : out) {
        g.mu = R * g.mu + pose.t;
        g.r = quat_mul(pose.q, g.r);
    }
    return out;
}

SyntheticDataset gen_head_dataset(const SyntheticSceneSpec& spec) {
    if (spec.n_primitives < 12) throw ValidationError("synthetic: need at least 12 primitives");
    if (spec.frames == 0) throw ValidationError("synthetic: need at least one frame");
    if (spec.n_landmarks < 4) throw ValidationError("synthetic: need at least 4 landmarks");

    SyntheticDataset ds;
    ds.spec = spec;
    ds.cam.f = spec.focal;
    ds.cam.principal = Vec2(double(spec.width) / 2.0, double(spec.height) / 2.0);
    ds.cam.width = spec.width;
    ds.cam.height = spec.height;
    ds.cam.validate();

    Rng rng(spec.seed);

    // Canonical head: an ellipsoid shell plus two movable clusters. The jaw
    // sits low on the face (image y grows downward), the brow high; both are
    // pushed toward the camera-facing side (negative z before posing).
    std::size_t jaw_n = std::max<std::size_t>(2, spec.n_primitives / 6);
    std::size_t brow_n = jaw_n;
    std::size_t shell_n = spec.n_primitives - jaw_n - brow_n;
    const Vec3 semi(0.55, 0.75, 0.55);
    for (std::size_t i = 0; i < shell_n; ++i) {
        Tensor d = randn({3}, rng);
        Vec3 dir(d.data[0], d.data[1], d.data[2]);
        double n = dir.norm();
        if (n < 1e-9) dir = Vec3(1, 0, 0), n = 1.0;
        dir /= n;
        double radial = rand_uniform({1}, rng, 0.9, 1.0).data[0];
        Vec3 mu(dir.x() * semi.x() * radial, dir.y() * semi.y() * radial,
                dir.z() * semi.z() * radial);
        ds.canonical.push_back(random_splat(rng, mu, 0.05));
    }
    const Vec3 jaw_center(0.0, 0.45, -0.35), brow_center(0.0, -0.35, -0.40);
    for (std::size_t i = 0; i < jaw_n; ++i) {
        Tensor d = randn({3}, rng, 0.08);
        ds.jaw_idx.push_back(ds.canonical.size());
        ds.canonical.push_back(
            random_splat(rng, jaw_center + Vec3(d.data[0], d.data[1], d.data[2]), 0.04));
    }
    for (std::size_t i = 0; i < brow_n; ++i) {
        Tensor d = randn({3}, rng, 0.06);
        ds.brow_idx.push_back(ds.canonical.size());
        ds.canonical.push_back(
            random_splat(rng, brow_center + Vec3(d.data[0], d.data[1], d.data[2]), 0.04));
    }
    for (const auto& g : ds.canonical) g.validate();

    // Landmarks live on the rigid shell so deformation never moves them.
    if (shell_n < spec.n_landmarks)
        throw ValidationError("synthetic: fewer shell primitives than landmarks");
    for (std::size_t j = 0; j < spec.n_landmarks; ++j)
        ds.landmark_prims.push_back(j * shell_n / spec.n_landmarks);

    std::size_t v = spec.n_landmarks;
    ds.basis.mean = Tensor({v, 3});
    for (std::size_t j = 0; j < v; ++j)
        for (int c = 0; c < 3; ++c)
            ds.basis.mean.at2(j, std::size_t(c)) = ds.canonical[ds.landmark_prims[j]].mu(c);
    ds.basis.id_basis = randn({3 * v, 4}, rng, 0.02);
    ds.basis.exp_basis = randn({3 * v, 4}, rng, 0.02);
    for (std::size_t j = 0; j < v; ++j) ds.basis.landmark_indices.push_back(j);
    ds.basis.validate();
    ds.a_id = Tensor::zeros({4});

    // Feature trajectories and the linear maps driving the clusters. The maps
    // are rescaled so the peak cluster displacement equals deform_amp exactly;
    // with deform_amp == 0 the deltas are identically zero.
    ds.fl_track.dim = spec.fl_dim;
    ds.fe_track.dim = spec.fe_dim;
    for (std::size_t t = 0; t < spec.frames; ++t) {
        ds.fl_track.frames.push_back(feature_at(spec.fl_dim, t, spec.frames, 0.37));
        ds.fe_track.frames.push_back(feature_at(spec.fe_dim, t, spec.frames, 0.71));
    }
    Tensor A_jaw = randn({3, spec.fl_dim}, rng);
    Tensor A_brow = randn({3, spec.fe_dim}, rng);
    double peak_jaw = 0, peak_brow = 0;
    for (std::size_t t = 0; t < spec.frames; ++t) {
        peak_jaw = std::max(peak_jaw, apply_map(A_jaw, ds.fl_track.frames[t]).norm());
        peak_brow = std::max(peak_brow, apply_map(A_brow, ds.fe_track.frames[t]).norm());
    }
    double cj = peak_jaw > 0 ? spec.deform_amp / peak_jaw : 0.0;
    double cb = peak_brow > 0 ? spec.deform_amp / peak_brow : 0.0;
    for (auto& x : A_jaw.data) x *= cj;
    for (auto& x : A_brow.data) x *= cb;

    const Vec3 pose_axis = Vec3(0.2, 1.0, 0.1).normalized();
    ds.flow.width = spec.width;
    ds.flow.height = spec.height;
    std::vector<std::vector<Vec2>> lm_px(spec.frames);

    for (std::size_t t = 0; t < spec.frames; ++t) {
        double phase = spec.frames > 1 ? double(t) / double(spec.frames) : 0.0;
        io::PoseRecord pose;
        pose.q = spec.pose_amp == 0.0
                     ? Quat::identity()
                     : Quat::from_axis_angle(pose_axis,
                                             spec.pose_amp * std::sin(2.0 * kPi * phase));
        pose.t = Vec3(0.1 * spec.pose_amp * std::sin(2.0 * kPi * phase), 0.0, kHeadDepth);
        pose.f = spec.focal;
        ds.poses.push_back(pose);

        auto scene = ds.canonical;
        Vec3 dj = apply_map(A_jaw, ds.fl_track.frames[t]);
        Vec3 db = apply_map(A_brow, ds.fe_track.frames[t]);
        for (auto i : ds.jaw_idx) scene[i].mu += dj;
        for (auto i : ds.brow_idx) scene[i].mu += db;
        ds.frame_scenes.push_back(apply_pose(scene, pose));

        FrameSample sample;
        RenderTarget target{spec.width, spec.height, {0, 0, 0}};
        sample.target = rasterize(ds.frame_scenes.back(), ds.cam, target);
        sample.cam = ds.cam;
        sample.input.f_l = ds.fl_track.frames[t];
        sample.input.f_e = ds.fe_track.frames[t];
        sample.input.R = pose.q;
        sample.input.T = pose.t;
        sample.index = t;
        ds.samples.push_back(std::move(sample));

        std::vector<io::LandmarkObs> obs;
        lm_px[t].resize(v);
        Mat3 R = pose.q.to_matrix();
        for (std::size_t j = 0; j < v; ++j) {
            Vec3 p_cam = R * ds.canonical[ds.landmark_prims[j]].mu + pose.t;
            if (p_cam.z() <= ds.cam.near_plane)
                throw NumericalError("synthetic: landmark behind camera");
            Vec2 px = project_point(p_cam, spec.focal, ds.cam.principal);
            lm_px[t][j] = px;
            obs.push_back({int(j), px.x(), px.y(), 1.0});
        }
        ds.landmarks.frames.push_back(std::move(obs));
    }

    // Flow impulses: frame t stores the landmark motion toward frame t+1 at
    // the rounded landmark pixel; the final frame is all zeros.
    for (std::size_t t = 0; t < spec.frames; ++t) {
        io::FlowFrame fr;
        fr.u.assign(spec.width * spec.height, 0.0);
        fr.v.assign(spec.width * spec.height, 0.0);
        if (t + 1 < spec.frames) {
            for (std::size_t j = 0; j < v; ++j) {
                long px = std::lround(lm_px[t][j].x()), py = std::lround(lm_px[t][j].y());
                if (px < 0 || py < 0 || std::size_t(px) >= spec.width ||
                    std::size_t(py) >= spec.height)
                    continue;
                std::size_t at = std::size_t(py) * spec.width + std::size_t(px);
                fr.u[at] = lm_px[t + 1][j].x() - lm_px[t][j].x();
                fr.v[at] = lm_px[t + 1][j].y() - lm_px[t][j].y();
            }
        }
        ds.flow.frames.push_back(std::move(fr));
    }
    return ds;
}

io::LandmarkTrack gen_jitter_track(const io::LandmarkTrack& clean,
                                   const std::vector<int>& jitter_ids, double amplitude,
                                   Rng& rng) {
    io::LandmarkTrack out = clean;
    for (std::size_t t = 0; t < out.frames.size(); ++t) {
        double sign = (t % 2 == 0) ? 1.0 : -1.0;
        for (auto& ob : out.frames[t]) {
            if (std::find(jitter_ids.begin(), jitter_ids.end(), ob.point_id) ==
                jitter_ids.end())
                continue;
            Tensor d = rand_uniform({2}, rng, 0.5, 1.0);
            ob.x += sign * amplitude * d.data[0];
            ob.y += sign * amplitude * d.data[1];
        }
    }
    return out;
}

std::vector<Polygon> jitter_region_polygons(const io::LandmarkTrack& track,
                                            const std::vector<int>& jitter_ids, double margin) {
    std::vector<Polygon> regions;
    for (int id : jitter_ids) {
        double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x;
        double hi_x = -lo_x, hi_y = -lo_y;
        bool seen = false;
        for (const auto& frame : track.frames)
            for (const auto& ob : frame)
                if (ob.point_id == id) {
                    lo_x = std::min(lo_x, ob.x);
                    hi_x = std::max(hi_x, ob.x);
                    lo_y = std::min(lo_y, ob.y);
                    hi_y = std::max(hi_y, ob.y);
                    seen = true;
                }
        if (!seen) continue;
        lo_x -= margin, lo_y -= margin, hi_x += margin, hi_y += margin;
        regions.push_back({{lo_x, lo_y}, {hi_x, lo_y}, {hi_x, hi_y}, {lo_x, hi_y}});
    }
    return regions;
}

std::vector<io::BlendshapeFrame> gen_blendshape_track(std::size_t frames, std::uint64_t seed) {
    Rng rng(seed);
    std::array<double, 52> phase, freq, amp, base;
    for (int k = 0; k < 52; ++k) {
        phase[std::size_t(k)] = rand_uniform({1}, rng, 0.0, 2.0 * kPi).data[0];
        freq[std::size_t(k)] = rand_uniform({1}, rng, 0.5, 3.0).data[0];
        amp[std::size_t(k)] = rand_uniform({1}, rng, 0.1, 0.4).data[0];
        base[std::size_t(k)] = rand_uniform({1}, rng, 0.3, 0.6).data[0];
    }
    std::vector<io::BlendshapeFrame> track(frames);
    for (std::size_t t = 0; t < frames; ++t) {
        double u = frames > 1 ? double(t) / double(frames - 1) : 0.0;
        for (std::size_t k = 0; k < 52; ++k) {
            double x = base[k] + amp[k] * std::sin(2.0 * kPi * freq[k] * u + phase[k]);
            track[t][k] = std::min(std::max(x, 0.0), 1.0);
        }
    }
    return track;
}

std::string write_dataset(const std::string& dir, const SyntheticDataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::string> files;
    auto emit = [&](const std::string& name, auto&& writer) {
        io::atomic_write((fs::path(dir) / name).string(), writer);
        files.push_back(name);
    };

    for (std::size_t t = 0; t < ds.samples.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.simg", t);
        emit(name, [&](const std::string& p) { write_image_f64(p, ds.samples[t].target); });
    }
    emit("poses.csv", [&](const std::string& p) { io::write_pose_csv(p, ds.poses); });
    emit("landmarks.csv",
         [&](const std::string& p) { io::write_landmarks_csv(p, ds.landmarks); });
    emit("features_lip.sftf", [&](const std::string& p) { io::write_sftf(p, ds.fl_track); });
    emit("features_exp.sftf", [&](const std::string& p) { io::write_sftf(p, ds.fe_track); });
    emit("flow.sflo", [&](const std::string& p) { io::write_sflo(p, ds.flow); });
    emit("blendshapes.csv", [&](const std::string& p) {
        io::write_blendshapes_csv(p, gen_blendshape_track(200, ds.spec.seed));
    });

    std::map<std::string, Tensor> sections;
    std::size_t n = ds.canonical.size(), shd = ds.canonical[0].sh.size();
    Tensor mu({n, 3}), r({n, 4}), s({n, 3}), alpha({n, 1}), sh({n, shd});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& g = ds.canonical[i];
        for (int c = 0; c < 3; ++c) {
            mu.at2(i, std::size_t(c)) = g.mu(c);
            s.at2(i, std::size_t(c)) = g.s(c);
        }
        r.at2(i, 0) = g.r.w, r.at2(i, 1) = g.r.x, r.at2(i, 2) = g.r.y, r.at2(i, 3) = g.r.z;
        alpha.at2(i, 0) = g.alpha;
        for (std::size_t k = 0; k < shd; ++k) sh.at2(i, k) = g.sh[k];
    }
    sections["scene.mu"] = mu;
    sections["scene.r"] = r;
    sections["scene.s"] = s;
    sections["scene.alpha"] = alpha;
    sections["scene.sh"] = sh;
    sections["scene.cam"] = Tensor({5}, {ds.cam.f, ds.cam.principal.x(), ds.cam.principal.y(),
                                         double(ds.cam.width), double(ds.cam.height)});
    sections["basis.mean"] = ds.basis.mean;
    sections["basis.id"] = ds.basis.id_basis;
    sections["basis.exp"] = ds.basis.exp_basis;
    sections["basis.a_id"] = ds.a_id;
    emit("scene_gt.spck",
         [&](const std::string& p) { io::write_checkpoint(p, sections); });

    std::string manifest = (fs::path(dir) / "manifest.txt").string();
    write_manifest(manifest, dir, files);
    return manifest;
}

void write_manifest(const std::string& path, const std::string& dir,
                    const std::vector<std::string>& files) {
    io::atomic_write(path, [&](const std::string& tmp) {
        std::ofstream f(tmp);
        if (!f) throw ValidationError("cannot open for write: " + tmp);
        for (const auto& name : files) {
            std::uint64_t h = io::hash_file((std::filesystem::path(dir) / name).string());
            std::ostringstream hex;
            hex << std::hex << std::setw(16) << std::setfill('0') << h;
            f << name << " = " << hex.str() << "\n";
        }
        if (!f) throw ValidationError("short write: " + tmp);
    });
}

}  // namespace splat
