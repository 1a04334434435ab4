#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "splat/synthetic.hpp"

using namespace splat;
namespace fs = std::filesystem;

namespace {

SyntheticSceneSpec tiny_spec() {
    SyntheticSceneSpec spec;
    spec.n_primitives = 60;
    spec.frames = 4;
    spec.width = 32;
    spec.height = 32;
    spec.focal = 60.0;
    spec.fl_dim = 6;
    spec.fe_dim = 4;
    spec.n_landmarks = 8;
    spec.seed = 5;
    return spec;
}

}  // namespace

TEST_CASE("apply_pose: identity is bitwise, rotation matches the matrix oracle") {
    Rng rng(3);
    SyntheticSceneSpec spec = tiny_spec();
    auto ds = gen_head_dataset(spec);
    io::PoseRecord ident;
    auto same = apply_pose(ds.canonical, ident);
    for (std::size_t i = 0; i < same.size(); ++i) {
        CHECK(same[i].mu.x() == ds.canonical[i].mu.x());
        CHECK(same[i].r.w == ds.canonical[i].r.w);
        CHECK(same[i].r.z == ds.canonical[i].r.z);
    }
    io::PoseRecord pose;
    pose.q = Quat::from_axis_angle(Vec3(0.3, 1, 0).normalized(), 0.4);
    pose.t = Vec3(0.1, -0.2, 2.0);
    auto posed = apply_pose(ds.canonical, pose);
    Mat3 R = pose.q.to_matrix();
    for (std::size_t i = 0; i < posed.size(); i += 7) {
        Vec3 expect = R * ds.canonical[i].mu + pose.t;
        CHECK((posed[i].mu - expect).norm() < 1e-12);
        CHECK(posed[i].r.norm() == doctest::Approx(1.0));
        // Rotating by the pose quaternion composes on the left.
        Quat expect_r = quat_mul(pose.q, ds.canonical[i].r);
        CHECK(posed[i].r.w == doctest::Approx(expect_r.w));
        CHECK(posed[i].r.y == doctest::Approx(expect_r.y));
    }
}

TEST_CASE("generation is deterministic in the seed") {
    auto a = gen_head_dataset(tiny_spec());
    auto b = gen_head_dataset(tiny_spec());
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t t = 0; t < a.samples.size(); ++t)
        CHECK(a.samples[t].target.data == b.samples[t].target.data);
    auto spec2 = tiny_spec();
    spec2.seed = 6;
    auto c = gen_head_dataset(spec2);
    CHECK(a.samples[0].target.data != c.samples[0].target.data);
}

TEST_CASE("dataset shapes and track lengths are consistent") {
    auto spec = tiny_spec();
    auto ds = gen_head_dataset(spec);
    CHECK(ds.canonical.size() == spec.n_primitives);
    CHECK(ds.frame_scenes.size() == spec.frames);
    CHECK(ds.samples.size() == spec.frames);
    CHECK(ds.poses.size() == spec.frames);
    CHECK(ds.landmarks.frames.size() == spec.frames);
    CHECK(ds.fl_track.frames.size() == spec.frames);
    CHECK(ds.fl_track.dim == spec.fl_dim);
    CHECK(ds.fe_track.dim == spec.fe_dim);
    CHECK(ds.flow.frames.size() == spec.frames);
    CHECK(ds.basis.n_vertices() == spec.n_landmarks);
    for (const auto& frame : ds.landmarks.frames) {
        REQUIRE(frame.size() == spec.n_landmarks);
        for (const auto& ob : frame) CHECK(ob.weight == 1.0);
    }
    for (const auto& g : ds.canonical) g.validate();
    for (auto i : ds.jaw_idx) CHECK(ds.canonical[i].mu.y() > 0.0);
    for (auto i : ds.brow_idx) CHECK(ds.canonical[i].mu.y() < 0.0);
}

TEST_CASE("landmarks re-project exactly from the posed canonical scene") {
    auto spec = tiny_spec();
    spec.pose_amp = 0.2;
    auto ds = gen_head_dataset(spec);
    for (std::size_t t = 0; t < spec.frames; ++t) {
        Mat3 R = ds.poses[t].q.to_matrix();
        for (std::size_t j = 0; j < spec.n_landmarks; ++j) {
            Vec3 pc = R * ds.canonical[ds.landmark_prims[j]].mu + ds.poses[t].t;
            double x = spec.focal * pc.x() / pc.z() + double(spec.width) / 2.0;
            double y = spec.focal * pc.y() / pc.z() + double(spec.height) / 2.0;
            CHECK(ds.landmarks.frames[t][j].x == doctest::Approx(x).epsilon(1e-12));
            CHECK(ds.landmarks.frames[t][j].y == doctest::Approx(y).epsilon(1e-12));
        }
    }
}

TEST_CASE("zero deformation and pose: all frames are bit-identical renders") {
    auto spec = tiny_spec();
    spec.deform_amp = 0.0;
    spec.pose_amp = 0.0;
    auto ds = gen_head_dataset(spec);
    for (std::size_t t = 1; t < spec.frames; ++t)
        CHECK(ds.samples[t].target.data == ds.samples[0].target.data);
    // And the frame scenes equal the posed canonical exactly.
    auto posed = apply_pose(ds.canonical, ds.poses[0]);
    for (std::size_t i = 0; i < posed.size(); ++i) {
        CHECK(ds.frame_scenes[2][i].mu.x() == posed[i].mu.x());
        CHECK(ds.frame_scenes[2][i].r.w == posed[i].r.w);
    }
}

TEST_CASE("nonzero deformation moves only the jaw and brow clusters") {
    auto spec = tiny_spec();
    auto ds = gen_head_dataset(spec);
    std::set<std::size_t> movable(ds.jaw_idx.begin(), ds.jaw_idx.end());
    movable.insert(ds.brow_idx.begin(), ds.brow_idx.end());
    auto posed = apply_pose(ds.canonical, ds.poses[1]);
    double peak = 0;
    for (std::size_t i = 0; i < posed.size(); ++i) {
        double d = (ds.frame_scenes[1][i].mu - posed[i].mu).norm();
        if (movable.count(i))
            peak = std::max(peak, d);
        else
            CHECK(d == 0.0);
    }
    CHECK(peak > 0.0);
    CHECK(peak <= spec.deform_amp + 1e-12);
}

TEST_CASE("flow impulses encode landmark displacement; last frame is zero") {
    auto spec = tiny_spec();
    spec.pose_amp = 0.3;
    auto ds = gen_head_dataset(spec);
    const auto& last = ds.flow.frames.back();
    for (double v : last.u) CHECK(v == 0.0);
    for (double v : last.v) CHECK(v == 0.0);
    std::size_t hits = 0;
    for (std::size_t t = 0; t + 1 < spec.frames; ++t)
        for (std::size_t j = 0; j < spec.n_landmarks; ++j) {
            const auto& cur = ds.landmarks.frames[t][j];
            const auto& nxt = ds.landmarks.frames[t + 1][j];
            long px = std::lround(cur.x), py = std::lround(cur.y);
            if (px < 0 || py < 0 || std::size_t(px) >= spec.width ||
                std::size_t(py) >= spec.height)
                continue;
            std::size_t at = std::size_t(py) * spec.width + std::size_t(px);
            CHECK(ds.flow.frames[t].u[at] == doctest::Approx(nxt.x - cur.x));
            CHECK(ds.flow.frames[t].v[at] == doctest::Approx(nxt.y - cur.y));
            ++hits;
        }
    CHECK(hits > 0);
}

TEST_CASE("gen_jitter_track perturbs only the requested ids") {
    auto ds = gen_head_dataset(tiny_spec());
    Rng rng(9);
    std::vector<int> ids = {1, 3};
    auto jittered = gen_jitter_track(ds.landmarks, ids, 2.0, rng);
    for (std::size_t t = 0; t < jittered.frames.size(); ++t)
        for (std::size_t j = 0; j < jittered.frames[t].size(); ++j) {
            const auto& a = ds.landmarks.frames[t][j];
            const auto& b = jittered.frames[t][j];
            bool is_jittered = j == 1 || j == 3;
            if (is_jittered) {
                CHECK(b.x != a.x);
                CHECK(std::fabs(b.x - a.x) <= 2.0);
                CHECK(std::fabs(b.y - a.y) <= 2.0);
            } else {
                CHECK(b.x == a.x);
                CHECK(b.y == a.y);
            }
        }
}

TEST_CASE("jitter_region_polygons cover the jittered trajectories") {
    auto ds = gen_head_dataset(tiny_spec());
    Rng rng(9);
    std::vector<int> ids = {2, 5};
    auto jittered = gen_jitter_track(ds.landmarks, ids, 2.0, rng);
    auto regions = jitter_region_polygons(jittered, ids, 2.0);
    REQUIRE(regions.size() == 2);
    for (const auto& frame : jittered.frames)
        for (const auto& ob : frame) {
            if (ob.point_id != 2 && ob.point_id != 5) continue;
            bool inside = false;
            for (const auto& poly : regions)
                inside |= point_in_polygon({ob.x, ob.y}, poly);
            CHECK(inside);
        }
}

TEST_CASE("gen_blendshape_track: range, determinism, length") {
    auto a = gen_blendshape_track(50, 7);
    auto b = gen_blendshape_track(50, 7);
    REQUIRE(a.size() == 50);
    CHECK(a == b);
    for (const auto& frame : a)
        for (double v : frame) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    auto c = gen_blendshape_track(50, 8);
    CHECK(a != c);
}

TEST_CASE("write_dataset emits verifiable files and a matching manifest") {
    auto spec = tiny_spec();
    spec.frames = 2;
    auto ds = gen_head_dataset(spec);
    std::string dir = (fs::temp_directory_path() / "t_synth_ds").string();
    fs::remove_all(dir);
    std::string manifest = write_dataset(dir, ds);
    REQUIRE(fs::exists(manifest));

    std::ifstream mf(manifest);
    std::string line;
    std::size_t entries = 0;
    while (std::getline(mf, line)) {
        auto eq = line.find(" = ");
        REQUIRE(eq != std::string::npos);
        std::string name = line.substr(0, eq);
        std::uint64_t recorded = std::stoull(line.substr(eq + 3), nullptr, 16);
        CHECK(io::hash_file((fs::path(dir) / name).string()) == recorded);
        ++entries;
    }
    CHECK(entries >= 8);

    // Frame payloads round trip bitwise and the tracks reload.
    Image back = read_image_f64((fs::path(dir) / "frame_0001.simg").string());
    CHECK(back.data == ds.samples[1].target.data);
    auto poses = io::read_pose_csv((fs::path(dir) / "poses.csv").string());
    CHECK(poses.size() == 2);
    auto fl = io::read_sftf((fs::path(dir) / "features_lip.sftf").string());
    CHECK(fl.dim == spec.fl_dim);
    auto sections = io::read_checkpoint((fs::path(dir) / "scene_gt.spck").string());
    CHECK(sections.count("scene.mu") == 1);
    CHECK(sections.at("scene.mu").rows() == spec.n_primitives);
    fs::remove_all(dir);
}
