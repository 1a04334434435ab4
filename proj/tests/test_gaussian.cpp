#include <cmath>

#include "doctest.h"
#include "splat/gaussian.hpp"

using namespace splat;

namespace {
GaussianPrimitive make_prim(Rng& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    GaussianPrimitive g;
    g.mu = Vec3(u(rng), u(rng), u(rng));
    Vec3 axis(u(rng), u(rng), u(rng));
    if (axis.norm() < 1e-6) axis = Vec3::UnitX();
    g.r = Quat::from_axis_angle(axis, u(rng) * 3.0);
    g.s = Vec3(0.2 + std::fabs(u(rng)), 0.2 + std::fabs(u(rng)), 0.2 + std::fabs(u(rng)));
    g.alpha = 0.5;
    g.sh.assign(12, 0.0);
    return g;
}
}  // namespace

TEST_CASE("covariance_from_rs: identity and axis-aligned scaling") {
    Mat3 c = covariance_from_rs(Quat::identity(), Vec3(1, 1, 1));
    CHECK((c - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    Mat3 c2 = covariance_from_rs(Quat::identity(), Vec3(2, 1, 1));
    CHECK(c2(0, 0) == doctest::Approx(4.0));
    CHECK(c2(1, 1) == doctest::Approx(1.0));
    CHECK(c2(2, 2) == doctest::Approx(1.0));
}

TEST_CASE("covariance_from_rs: 90 deg about z swaps x/y variances") {
    Quat r = Quat::from_axis_angle(Vec3::UnitZ(), M_PI / 2);
    Mat3 c = covariance_from_rs(r, Vec3(2, 1, 1));
    Mat3 expect = Vec3(1, 4, 1).asDiagonal();
    CHECK((c - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("covariance_from_rs: dense oracle, symmetry, positive eigenvalues") {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        auto g = make_prim(rng);
        Mat3 c = covariance_from_rs(g.r, g.s);
        Mat3 R = g.r.normalized().to_matrix();
        Mat3 S = g.s.asDiagonal();
        Mat3 oracle = R * S * S.transpose() * R.transpose();
        CHECK((c - oracle).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((c - c.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3> es(c);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("covariance_from_rs rejects bad inputs") {
    CHECK_THROWS_AS(covariance_from_rs(Quat{0, 0, 0, 0}, Vec3(1, 1, 1)), ValidationError);
    CHECK_THROWS_AS(covariance_from_rs(Quat::identity(), Vec3(1, -1, 1)), ValidationError);
}

TEST_CASE("eval_density: mean value and unit Mahalanobis") {
    GaussianPrimitive g;
    g.sh.assign(3, 0.0);
    CHECK(eval_density(g, g.mu) == doctest::Approx(1.0));
    CHECK(eval_density(g, g.mu + Vec3::UnitX()) == doctest::Approx(std::exp(-0.5)));
}

TEST_CASE("eval_density: random oracle and monotone decay") {
    Rng rng(6);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 30; ++t) {
        auto g = make_prim(rng);
        Vec3 x(u(rng), u(rng), u(rng));
        Mat3 sigma = covariance_from_rs(g.r, g.s);
        Vec3 d = x - g.mu;
        double oracle = std::exp(-0.5 * d.dot(sigma.inverse() * d));
        CHECK(eval_density(g, x) == doctest::Approx(oracle).epsilon(1e-12));

        Vec3 v(u(rng), u(rng), u(rng));
        double prev = 2.0;
        for (double tt = 0.0; tt <= 2.0; tt += 0.25) {
            double dens = eval_density(g, g.mu + tt * v);
            CHECK(dens <= prev + 1e-15);
            prev = dens;
        }
    }
}

TEST_CASE("project_gaussian: unit-depth pinhole") {
    GaussianPrimitive g;
    g.mu = Vec3(0, 0, 1);
    g.sh.assign(3, 0.0);
    CameraModel cam;
    cam.f = 1.0;
    cam.width = cam.height = 8;
    auto p = project_gaussian(g, cam);
    REQUIRE(p.has_value());
    CHECK(p->mean2d.norm() < 1e-12);
    CHECK(p->depth == doctest::Approx(1.0));
    Mat2 expect = (1.0 + kCovDilation) * Mat2::Identity();
    CHECK((p->cov - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("project_gaussian: doubling depth halves projected stddev") {
    GaussianPrimitive g;
    g.sh.assign(3, 0.0);
    CameraModel cam;
    cam.f = 100.0;
    cam.width = cam.height = 8;
    g.mu = Vec3(0, 0, 2);
    auto p1 = project_gaussian(g, cam);
    g.mu = Vec3(0, 0, 4);
    auto p2 = project_gaussian(g, cam);
    REQUIRE(p1);
    REQUIRE(p2);
    double s1 = std::sqrt(p1->cov(0, 0) - kCovDilation);
    double s2 = std::sqrt(p2->cov(0, 0) - kCovDilation);
    CHECK(s1 == doctest::Approx(2.0 * s2).epsilon(1e-10));
}

TEST_CASE("project_gaussian: culls behind the near plane") {
    GaussianPrimitive g;
    g.mu = Vec3(0, 0, -1);
    g.sh.assign(3, 0.0);
    CameraModel cam;
    cam.width = cam.height = 8;
    CHECK_FALSE(project_gaussian(g, cam).has_value());
}

TEST_CASE("project_gaussian: dense J*W*Sigma*Wt*Jt oracle") {
    Rng rng(8);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 30; ++t) {
        auto g = make_prim(rng);
        g.mu.z() += 4.0;
        CameraModel cam;
        cam.f = 120.0;
        cam.principal = Vec2(32, 32);
        cam.width = cam.height = 64;
        cam.R = Quat::from_axis_angle(Vec3(u(rng), u(rng), 1.0), 0.3 * u(rng))
                    .normalized()
                    .to_matrix();
        cam.t = Vec3(0.2 * u(rng), 0.2 * u(rng), 0.5 * u(rng));
        auto p = project_gaussian(g, cam);
        REQUIRE(p);
        Vec3 tc = cam.R * g.mu + cam.t;
        double z = tc.z();
        Eigen::Matrix<double, 2, 3> J;
        J << cam.f / z, 0, -cam.f * tc.x() / (z * z), 0, cam.f / z, -cam.f * tc.y() / (z * z);
        Mat2 oracle = J * cam.R * covariance_from_rs(g.r, g.s) * cam.R.transpose() *
                          J.transpose() +
                      kCovDilation * Mat2::Identity();
        CHECK((p->cov - oracle).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("project_gaussian: rotation equivariance") {
    Rng rng(13);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 20; ++t) {
        auto g = make_prim(rng);
        g.mu.z() += 4.0;
        CameraModel cam;
        cam.f = 80.0;
        cam.width = cam.height = 32;
        auto p0 = project_gaussian(g, cam);
        REQUIRE(p0);

        // rotate both the primitive and the camera by the same rigid motion
        Quat gq = Quat::from_axis_angle(Vec3(u(rng), 1.0, u(rng)), 0.7 * u(rng)).normalized();
        Mat3 G = gq.to_matrix();
        Vec3 shift(u(rng), u(rng), u(rng));
        GaussianPrimitive g2 = g;
        g2.mu = G * g.mu + shift;
        Mat3 R2 = G * g.r.normalized().to_matrix();
        Eigen::Quaterniond eq(R2);
        g2.r = Quat{eq.w(), eq.x(), eq.y(), eq.z()};
        CameraModel cam2 = cam;
        cam2.R = cam.R * G.transpose();
        cam2.t = cam.t - cam2.R * shift;
        auto p1 = project_gaussian(g2, cam2);
        REQUIRE(p1);
        CHECK((p0->mean2d - p1->mean2d).norm() < 1e-9);
        CHECK((p0->cov - p1->cov).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(p0->depth == doctest::Approx(p1->depth).epsilon(1e-9));
    }
}

TEST_CASE("sh_to_color: zero coefficients give mid gray") {
    std::vector<double> sh(12, 0.0);
    auto c = sh_to_color(sh, Vec3::UnitZ());
    for (double v : c) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("sh_to_color: band-0 constant") {
    std::vector<double> sh = {0.7, 0.7, 0.7};
    auto c = sh_to_color(sh, Vec3::UnitX());
    for (double v : c) CHECK(v == doctest::Approx(0.5 + 0.2820948 * 0.7).epsilon(1e-6));
}

TEST_CASE("sh_to_color: band 1 flips sign under antipodal views") {
    std::vector<double> sh(12, 0.0);
    sh[3 * 2 + 0] = 0.3;  // z-linear term, red channel
    Vec3 d = Vec3(0.3, -0.2, 0.9).normalized();
    auto cp = sh_to_color(sh, d);
    auto cm = sh_to_color(sh, -d);
    CHECK(cp[0] - 0.5 == doctest::Approx(-(cm[0] - 0.5)).epsilon(1e-12));
}

TEST_CASE("sh_to_color rejects bad lengths") {
    CHECK_THROWS_AS(sh_to_color(std::vector<double>(7, 0.0), Vec3::UnitZ()), ValidationError);
}
