#include <cmath>

#include "doctest.h"
#include "splat/torso.hpp"

using namespace splat;

namespace {

Mask random_mask(std::size_t w, std::size_t h, double fill_prob, Rng& rng) {
    Mask m(w, h);
    for (auto& v : m.data) v = rand_uniform({1}, rng).data[0] < fill_prob ? 1.0 : 0.0;
    return m;
}

std::vector<double> brute_force_dist_sq(const Mask& m) {
    std::vector<double> d(m.width * m.height, 1e18);
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x) {
            double best = 1e18;
            for (std::size_t yy = 0; yy < m.height; ++yy)
                for (std::size_t xx = 0; xx < m.width; ++xx) {
                    if (m.at(xx, yy) == 0.0) continue;
                    double dx = double(x) - double(xx), dy = double(y) - double(yy);
                    best = std::min(best, dx * dx + dy * dy);
                }
            d[y * m.width + x] = best;
        }
    return d;
}

Image random_image(std::size_t w, std::size_t h, Rng& rng) {
    Image img(w, h);
    img.data = rand_uniform({img.data.size()}, rng).data;
    return img;
}

}  // namespace

TEST_CASE("distance transform is exact against the quadratic oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Mask m = random_mask(13, 9, trial % 2 ? 0.15 : 0.4, rng);
        auto fast = distance_sq_transform(m);
        auto slow = brute_force_dist_sq(m);
        REQUIRE(fast.size() == slow.size());
        for (std::size_t i = 0; i < fast.size(); ++i) {
            if (slow[i] >= 1e17)
                CHECK(fast[i] >= 1e17);  // empty-mask sentinel
            else
                CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("expand_mask: Euclidean disc growth, original always survives") {
    Mask m(11, 11);
    m.at(5, 5) = 1.0;
    Mask grown = expand_mask(m, 2.0);
    for (std::size_t y = 0; y < 11; ++y)
        for (std::size_t x = 0; x < 11; ++x) {
            double dx = double(x) - 5.0, dy = double(y) - 5.0;
            double expect = dx * dx + dy * dy <= 4.0 ? 1.0 : 0.0;
            CHECK(grown.at(x, y) == expect);
        }
    Mask zero = expand_mask(m, 0.0);
    CHECK(zero.data == m.data);
}

TEST_CASE("expand_mask with a band only grows inside the band") {
    Mask m(8, 8);
    m.at(4, 4) = 1.0;
    Mask band(8, 8);
    for (std::size_t y = 0; y < 8; ++y) band.at(3, y) = 1.0;  // single column
    Mask grown = expand_mask(m, 3.0, &band);
    CHECK(grown.at(4, 4) == 1.0);  // original survives outside the band
    CHECK(grown.at(3, 4) == 1.0);
    CHECK(grown.at(3, 2) == 1.0);
    CHECK(grown.at(5, 4) == 0.0);  // would be in range, but off-band
}

TEST_CASE("scale_expansion is linear in the smaller dimension") {
    CHECK(scale_expansion(15.0, 512, 512) == doctest::Approx(15.0));
    CHECK(scale_expansion(15.0, 256, 512) == doctest::Approx(7.5));
    CHECK(scale_expansion(10.0, 1024, 768) == doctest::Approx(15.0));
}

TEST_CASE("rotate_image by zero is the identity; mask rotation stays binary") {
    Rng rng(5);
    Image img = random_image(12, 10, rng);
    Image r0 = rotate_image(img, 0.0);
    CHECK(r0.data == img.data);
    Mask m = random_mask(12, 10, 0.3, rng);
    Mask mr = rotate_mask(m, 0.3);
    for (double v : mr.data) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("make_training_pair: hole geometry and zeroed input") {
    Rng rng(9);
    Image frame = random_image(24, 24, rng);
    Mask m(24, 24);
    for (std::size_t y = 8; y < 16; ++y)
        for (std::size_t x = 8; x < 16; ++x) m.at(x, y) = 1.0;
    // At 24 px the default 512-scale deltas shrink below one pixel and the
    // band can vanish; widen the range so the hole is non-empty here.
    auto pair = make_training_pair(frame, m, rng, {10.0, 30.0, 60.0});
    REQUIRE(pair.input.same_dims(pair.target));
    bool has_hole = false;
    for (std::size_t y = 0; y < 24; ++y)
        for (std::size_t x = 0; x < 24; ++x) {
            if (pair.hole.at(x, y) == 1.0) {
                has_hole = true;
                for (int c = 0; c < 3; ++c) CHECK(pair.input.at(x, y, c) == 0.0);
            } else {
                for (int c = 0; c < 3; ++c)
                    CHECK(pair.input.at(x, y, c) == pair.target.at(x, y, c));
            }
        }
    CHECK(has_hole);
}

TEST_CASE("nchw conversion round trips") {
    Rng rng(2);
    Image img = random_image(6, 4, rng);
    Tensor t = image_to_nchw(img);
    CHECK((t.shape == Shape{1, 3, 4, 6}));
    Image back = nchw_to_image(t);
    CHECK(back.data == img.data);
}

TEST_CASE("inpaint copies through non-hole pixels bitwise for any weights") {
    Rng rng(21);
    InpaintNet net = InpaintNet::init(rng);
    // Scramble the weights: copy-through must be structural, not trained.
    for (auto& [name, t] : net.params.values) {
        Tensor noise = randn(t.shape, rng, 0.5);
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += noise.data[i];
    }
    Image input = random_image(16, 16, rng);
    Mask hole(16, 16);
    for (std::size_t y = 5; y < 9; ++y)
        for (std::size_t x = 6; x < 11; ++x) hole.at(x, y) = 1.0;
    Image out = inpaint(input, hole, net);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) {
                if (hole.at(x, y) == 0.0)
                    CHECK(out.at(x, y, c) == input.at(x, y, c));
                else
                    CHECK((out.at(x, y, c) >= 0.0 && out.at(x, y, c) <= 1.0));
            }
}

TEST_CASE("inpaint rejects dims not divisible by 8") {
    Rng rng(1);
    InpaintNet net = InpaintNet::init(rng);
    Image input(12, 16);
    Mask hole(12, 16);
    CHECK_THROWS_AS(inpaint(input, hole, net), ValidationError);
}

TEST_CASE("training shrinks the hole reconstruction error") {
    Rng rng(17);
    InpaintNet net = InpaintNet::init(rng);
    // Smooth targets: a horizontal gradient the net can learn quickly.
    std::vector<InpaintPair> pairs;
    Rng prng(31);
    for (int i = 0; i < 4; ++i) {
        Image frame(16, 16);
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x)
                for (int c = 0; c < 3; ++c)
                    frame.at(x, y, c) = double(x) / 15.0;
        Mask m(16, 16);
        for (std::size_t y = 6; y < 10; ++y)
            for (std::size_t x = 6; x < 10; ++x) m.at(x, y) = 1.0;
        // Deltas chosen to stay >= 1 px after 512-scale shrinking to 16 px.
        auto pair = make_training_pair(frame, m, prng, {5.0, 40.0, 80.0});
        pairs.push_back(pair);
    }
    auto hole_l1 = [&](const InpaintPair& p) {
        Image out = inpaint(p.input, p.hole, net);
        double s = 0;
        std::size_t n = 0;
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x)
                if (p.hole.at(x, y) == 1.0)
                    for (int c = 0; c < 3; ++c) {
                        s += std::fabs(out.at(x, y, c) - p.target.at(x, y, c));
                        ++n;
                    }
        return n ? s / double(n) : 0.0;
    };
    double before = hole_l1(pairs[0]);
    InpaintTrainConfig cfg;
    cfg.steps = 120;
    cfg.lr = 5e-3;
    auto losses = train_inpaint(net, pairs, cfg);
    REQUIRE(losses.size() == cfg.steps);
    CHECK(losses.back() < losses.front());
    CHECK(hole_l1(pairs[0]) < before);
}

TEST_CASE("composite_portrait: sigma 0 with identical frames is the identity") {
    Rng rng(8);
    Image f(16, 16);
    f.data = rand_uniform({f.data.size()}, rng).data;
    Mask m(16, 16);
    for (std::size_t y = 4; y < 12; ++y)
        for (std::size_t x = 4; x < 12; ++x) m.at(x, y) = 1.0;
    Image out = composite_portrait(f, f, m, 0.0, 0.0, nullptr);
    CHECK(out.data == f.data);
}

TEST_CASE("composite_portrait touches only the mask and the inference band") {
    Rng rng(12);
    Image f_r = random_image(16, 16, rng);
    Image f_o = random_image(16, 16, rng);
    Mask m(16, 16);
    for (std::size_t y = 6; y < 10; ++y)
        for (std::size_t x = 6; x < 10; ++x) m.at(x, y) = 1.0;
    double delta = 2.0 * 512.0 / 16.0;  // 2 px after scaling
    Mask band = expand_mask(m, 2.0);
    Image out = composite_portrait(f_r, f_o, m, 1.0, delta, nullptr);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) {
                if (band.at(x, y) == 0.0) CHECK(out.at(x, y, c) == f_o.at(x, y, c));
                if (m.at(x, y) == 1.0)
                    CHECK(out.at(x, y, c) == gaussian_blur(f_r, 1.0).at(x, y, c));
            }
    // Without a net the band outside M stays untouched as well.
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            if (band.at(x, y) == 1.0 && m.at(x, y) == 0.0)
                CHECK(out.at(x, y, 0) == f_o.at(x, y, 0));
}

TEST_CASE("composite_portrait inpaints the band when a net is supplied") {
    Rng rng(14);
    InpaintNet net = InpaintNet::init(rng);
    Image f_r = random_image(16, 16, rng);
    Image f_o = random_image(16, 16, rng);
    Mask m(16, 16);
    for (std::size_t y = 6; y < 10; ++y)
        for (std::size_t x = 6; x < 10; ++x) m.at(x, y) = 1.0;
    double delta = 2.0 * 512.0 / 16.0;
    Image with_net = composite_portrait(f_r, f_o, m, 1.0, delta, &net);
    Mask band = expand_mask(m, 2.0);
    // Outside the band: still bit-identical to the original frame.
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            if (band.at(x, y) == 0.0)
                for (int c = 0; c < 3; ++c) CHECK(with_net.at(x, y, c) == f_o.at(x, y, c));
}
