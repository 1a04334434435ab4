#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "splat/io.hpp"

using namespace splat;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("SFTF round trip is bitwise exact") {
    io::FeatureTrack t;
    t.dim = 3;
    t.frames = {{1.0, -2.5, 3.125}, {0.0, 1e-300, -0.1}};
    auto p = tmp_path("t_io_track.sftf");
    io::write_sftf(p, t);
    auto back = io::read_sftf(p);
    REQUIRE(back.dim == t.dim);
    REQUIRE(back.frames.size() == t.frames.size());
    for (std::size_t i = 0; i < t.frames.size(); ++i)
        for (std::size_t k = 0; k < t.dim; ++k) CHECK(back.frames[i][k] == t.frames[i][k]);
    fs::remove(p);
}

TEST_CASE("SFTF rejects garbage and truncation") {
    auto p = tmp_path("t_io_bad.sftf");
    {
        std::ofstream f(p, std::ios::binary);
        f << "not a track";
    }
    CHECK_THROWS_AS(io::read_sftf(p), ValidationError);
    io::FeatureTrack t;
    t.dim = 4;
    t.frames = {{1, 2, 3, 4}};
    io::write_sftf(p, t);
    fs::resize_file(p, fs::file_size(p) - 8);
    CHECK_THROWS_AS(io::read_sftf(p), ValidationError);
    fs::remove(p);
}

TEST_CASE("SFLO round trip preserves every plane") {
    io::FlowField flow;
    flow.width = 3;
    flow.height = 2;
    io::FlowFrame fr;
    for (int i = 0; i < 6; ++i) {
        fr.u.push_back(0.5 * i);
        fr.v.push_back(-0.25 * i);
    }
    flow.frames = {fr, fr};
    auto p = tmp_path("t_io_flow.sflo");
    io::write_sflo(p, flow);
    auto back = io::read_sflo(p);
    REQUIRE(back.width == 3);
    REQUIRE(back.height == 2);
    REQUIRE(back.frames.size() == 2);
    for (int i = 0; i < 6; ++i) {
        CHECK(back.frames[1].u[std::size_t(i)] == fr.u[std::size_t(i)]);
        CHECK(back.frames[1].v[std::size_t(i)] == fr.v[std::size_t(i)]);
    }
    fs::remove(p);
}

TEST_CASE("landmark CSV round trip") {
    io::LandmarkTrack t;
    t.frames = {{{0, 1.5, 2.5, 1.0}, {3, -0.25, 4.0, 0.1}}, {{1, 9.0, 9.0, 1.0}}};
    auto p = tmp_path("t_io_lm.csv");
    io::write_landmarks_csv(p, t);
    auto back = io::read_landmarks_csv(p);
    REQUIRE(back.frames.size() == 2);
    REQUIRE(back.frames[0].size() == 2);
    CHECK(back.frames[0][1].point_id == 3);
    CHECK(back.frames[0][1].x == doctest::Approx(-0.25));
    CHECK(back.frames[0][1].weight == doctest::Approx(0.1));
    CHECK(back.frames[1][0].y == doctest::Approx(9.0));
    fs::remove(p);
}

TEST_CASE("landmark CSV reports the offending line") {
    auto p = tmp_path("t_io_lm_bad.csv");
    {
        std::ofstream f(p);
        f << "frame,point_id,x,y,weight\n0,0,1.0,2.0,1.0\n0,oops,3,4,1\n";
    }
    try {
        io::read_landmarks_csv(p);
        FAIL("expected a throw");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
    fs::remove(p);
}

TEST_CASE("pose CSV round trip keeps 17 significant digits") {
    std::vector<io::PoseRecord> poses(2);
    poses[0].q = Quat{0.5, 0.5, 0.5, 0.5};
    poses[0].t = Vec3(1.0 / 3.0, -2.0 / 7.0, 2.5);
    poses[0].f = 123.456;
    poses[1].f = 60.0;
    auto p = tmp_path("t_io_pose.csv");
    io::write_pose_csv(p, poses);
    auto back = io::read_pose_csv(p);
    REQUIRE(back.size() == 2);
    CHECK(back[0].t.x() == poses[0].t.x());
    CHECK(back[0].t.y() == poses[0].t.y());
    CHECK(back[0].q.w == 0.5);
    CHECK(back[1].f == 60.0);
    fs::remove(p);
}

TEST_CASE("blendshape CSV round trip") {
    std::vector<io::BlendshapeFrame> track(3);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t k = 0; k < 52; ++k) track[t][k] = double(t * 52 + k) / 200.0;
    auto p = tmp_path("t_io_bs.csv");
    io::write_blendshapes_csv(p, track);
    auto back = io::read_blendshapes_csv(p);
    REQUIRE(back.size() == 3);
    for (std::size_t k = 0; k < 52; ++k) CHECK(back[2][k] == track[2][k]);
    fs::remove(p);
}

TEST_CASE("checkpoint round trip with several named tensors") {
    std::map<std::string, Tensor> sections;
    sections["a.weights"] = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
    sections["b"] = Tensor({4}, {-1.5, 0.0, 1e-12, 7.0});
    auto p = tmp_path("t_io_ckpt.spck");
    io::write_checkpoint(p, sections);
    auto back = io::read_checkpoint(p);
    REQUIRE(back.size() == 2);
    CHECK((back.at("a.weights").shape == Shape{2, 3}));
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(back.at("a.weights").data[i] == sections["a.weights"].data[i]);
    CHECK(back.at("b").data[2] == 1e-12);
    fs::remove(p);
}

TEST_CASE("checkpoint rejects non-finite payloads") {
    std::map<std::string, Tensor> sections;
    sections["x"] = Tensor({1}, {std::numeric_limits<double>::quiet_NaN()});
    auto p = tmp_path("t_io_nan.spck");
    CHECK_THROWS_AS(io::write_checkpoint(p, sections), ValidationError);
}

TEST_CASE("config parsing: comments, whitespace, typed getters") {
    auto cfg = io::parse_config_text("# header\n key = 12 \nname= hello\nratio =2.5\n\n");
    CHECK(cfg.get_int("key", 0) == 12);
    CHECK(cfg.get_str("name", "") == "hello");
    CHECK(cfg.get_double("ratio", 0) == 2.5);
    CHECK(cfg.get_int("missing", 7) == 7);
    CHECK_THROWS_AS(io::parse_config_text("novalue\n"), ValidationError);
    CHECK_THROWS_AS(cfg.get_int("name", 0), ValidationError);
}

TEST_CASE("atomic_write leaves no file behind on failure") {
    auto p = tmp_path("t_io_atomic.bin");
    fs::remove(p);
    CHECK_THROWS(io::atomic_write(p, [](const std::string&) {
        throw ValidationError("simulated failure");
    }));
    CHECK(!fs::exists(p));
    io::atomic_write(p, [](const std::string& tmp) {
        std::ofstream f(tmp);
        f << "ok";
    });
    CHECK(fs::exists(p));
    fs::remove(p);
}

TEST_CASE("fnv1a matches the published test vectors") {
    // Reference values of the 64-bit FNV-1a for short ASCII strings.
    CHECK(io::fnv1a("", 0) == 0xcbf29ce484222325ull);
    CHECK(io::fnv1a("a", 1) == 0xaf63dc4c8601ec8cull);
    CHECK(io::fnv1a("foobar", 6) == 0x85944171f73967e8ull);
}

TEST_CASE("hash_file equals fnv1a of the content") {
    auto p = tmp_path("t_io_hash.bin");
    {
        std::ofstream f(p, std::ios::binary);
        f << "foobar";
    }
    CHECK(io::hash_file(p) == io::fnv1a("foobar", 6));
    fs::remove(p);
}
