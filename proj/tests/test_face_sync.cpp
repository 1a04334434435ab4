#include <cmath>

#include "doctest.h"
#include "splat/face_sync.hpp"

using namespace splat;

namespace {

std::vector<AvSample> make_corpus(std::size_t pairs, const AvEncoderConfig& cfg, Rng& rng) {
    // Synchronized pairs share a latent; negatives mix latents from
    // different draws, so sync is actually learnable.
    std::vector<AvSample> corpus;
    for (std::size_t i = 0; i < pairs; ++i) {
        Tensor z = randn({4}, rng);
        AvSample pos;
        for (std::size_t k = 0; k < cfg.audio_dim; ++k)
            pos.audio.push_back(std::sin(z.data[k % 4] + double(k)));
        for (std::size_t k = 0; k < cfg.face_dim; ++k)
            pos.face.push_back(std::cos(z.data[k % 4] - double(k)));
        pos.label = 1;
        corpus.push_back(pos);

        Tensor z2 = randn({4}, rng);
        AvSample neg = pos;
        neg.face.clear();
        for (std::size_t k = 0; k < cfg.face_dim; ++k)
            neg.face.push_back(std::cos(z2.data[k % 4] - double(k)));
        neg.label = 0;
        corpus.push_back(neg);
    }
    return corpus;
}

}  // namespace

TEST_CASE("cosine_sim: known values and guards") {
    CHECK(cosine_sim({1, 0}, {1, 0}) == doctest::Approx(1.0));
    CHECK(cosine_sim({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine_sim({1, 1}, {1, 0}) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK_THROWS_AS(cosine_sim({1, 0}, {1, 0, 0}), ValidationError);
    CHECK_THROWS_AS(cosine_sim({0, 0}, {1, 0}), ValidationError);
}

TEST_CASE("sync_loss: BCE against a hand-computed value, clamped at the ends") {
    std::vector<double> f = {1, 0}, a = {1, 1};
    double s = 1.0 / std::sqrt(2.0);
    CHECK(sync_loss(f, a, 1) == doctest::Approx(-std::log(s)));
    CHECK(sync_loss(f, a, 0) == doctest::Approx(-std::log(1 - s)));
    // Perfectly aligned vectors would hit log(0) for label 0 without the clamp.
    double v = sync_loss({1, 0}, {2, 0}, 0);
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(-std::log(kSimEps)));
    CHECK_THROWS_AS(sync_loss(f, a, 2), ValidationError);
}

TEST_CASE("reconstruction_loss is a mean absolute error") {
    Tensor t({4}, {1, 2, 3, 4}), d({4}, {1, 2, 2, 6});
    CHECK(reconstruction_loss(t, d) == doctest::Approx(0.75));
    CHECK_THROWS_AS(reconstruction_loss(Tensor({2}), Tensor({3})), ValidationError);
}

TEST_CASE("trained encoder separates synchronized pairs from mismatches") {
    AvEncoderConfig cfg;
    cfg.audio_dim = 6;
    cfg.face_dim = 4;
    cfg.emb_dim = 8;
    cfg.hidden = 16;
    cfg.epochs = 80;
    cfg.seed = 5;
    Rng rng(17);
    auto corpus = make_corpus(12, cfg, rng);
    auto enc = train_av_encoder(corpus, cfg);
    double acc = av_sync_accuracy(enc, corpus);
    // Far above the 0.5 chance level on its own training corpus.
    CHECK(acc >= 0.8);
}

TEST_CASE("train_av_encoder validates labels and class balance") {
    AvEncoderConfig cfg;
    cfg.audio_dim = 2;
    cfg.face_dim = 2;
    cfg.epochs = 1;
    AvSample s;
    s.audio = {1, 0};
    s.face = {1, 0};
    s.label = 2;
    CHECK_THROWS_AS(train_av_encoder({s}, cfg), ValidationError);
    s.label = 1;
    CHECK_THROWS_AS(train_av_encoder({s, s}, cfg), ValidationError);  // no negatives
    CHECK_THROWS_AS(train_av_encoder({}, cfg), ValidationError);
}

TEST_CASE("extract_lip_feature depends only on the audio branch") {
    AvEncoderConfig cfg;
    cfg.audio_dim = 4;
    cfg.face_dim = 3;
    cfg.emb_dim = 5;
    auto enc = AvEncoder::init(cfg);
    std::vector<double> audio = {0.5, -0.2, 0.1, 0.9};
    auto f1 = extract_lip_feature(audio, enc);
    REQUIRE(f1.size() == cfg.emb_dim);
    for (auto& [name, t] : enc.params.values)
        if (name.rfind("face.", 0) == 0 || name.rfind("dec.", 0) == 0)
            for (auto& v : t.data) v += 100.0;
    auto f2 = extract_lip_feature(audio, enc);
    CHECK(f1 == f2);
    CHECK_THROWS_AS(extract_lip_feature({1.0}, enc), ValidationError);
}

TEST_CASE("expression_capture: full vs core subsets") {
    std::array<double, 52> b{};
    for (std::size_t k = 0; k < 52; ++k) b[k] = double(k);
    std::vector<double> w(52, 1.0);
    double full = expression_capture(b, w, false);
    CHECK(full == doctest::Approx(51.0 * 52.0 / 2.0));
    std::vector<double> wc(kCoreBlendshapeIndices.size(), 1.0);
    double core = expression_capture(b, wc, true);
    double expect = 0;
    for (auto i : kCoreBlendshapeIndices) expect += double(i);
    CHECK(core == doctest::Approx(expect));
    CHECK_THROWS_AS(expression_capture(b, wc, false), ValidationError);
}

TEST_CASE("split_masks are binary, disjoint and cover the domain") {
    auto masks = split_masks(10, 4);
    masks.validate();
    REQUIRE(masks.m_lip.numel() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        double lip = masks.m_lip.data[i], exp = masks.m_exp.data[i];
        CHECK(lip + exp == 1.0);
        CHECK((i < 4 ? exp : lip) == 1.0);
    }
    CHECK_THROWS_AS(split_masks(5, 7), ValidationError);
}

TEST_CASE("masked fusion zeroes gradients outside each mask support") {
    std::size_t n = 8, split = 3;
    auto masks = split_masks(n, split);
    ad::Expr v = ad::leaf("v"), fl = ad::leaf("fl"), fe = ad::leaf("fe");
    auto [lip_e, exp_e] = masked_fusion_graph(v, fl, fe, masks);
    ad::Bindings b;
    Rng rng(3);
    b["v"] = randn({1, n}, rng);
    b["fl"] = randn({1, n}, rng);
    b["fe"] = randn({1, n}, rng);

    // f_e never even appears in the lip graph (and vice versa), so cross
    // gradients are structurally impossible, not merely zero.
    auto g_lip = ad::gradient(ad::sum(ad::square(lip_e)), b, {"fl", "v"});
    for (std::size_t i = 0; i < n; ++i) {
        if (i < split) {
            CHECK(g_lip.at("fl").data[i] == 0.0);  // lip side is the upper half
            CHECK(g_lip.at("v").data[i] == 0.0);
        }
    }
    CHECK_THROWS(ad::gradient(ad::sum(ad::square(lip_e)), b, {"fe"}));
    auto g_exp = ad::gradient(ad::sum(ad::square(exp_e)), b, {"fe", "v"});
    for (std::size_t i = split; i < n; ++i) {
        CHECK(g_exp.at("fe").data[i] == 0.0);
        CHECK(g_exp.at("v").data[i] == 0.0);
    }
    CHECK_THROWS(ad::gradient(ad::sum(ad::square(exp_e)), b, {"fl"}));

    auto [lip_t, exp_t] = masked_fusion(b["v"], b["fl"], b["fe"], masks);
    Tensor lip_eval = ad::evaluate(lip_e, b), exp_eval = ad::evaluate(exp_e, b);
    CHECK(lip_t.data == lip_eval.data);
    CHECK(exp_t.data == exp_eval.data);
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(lip_t.data[i] == b["fl"].data[i] * b["v"].data[i] * masks.m_lip.data[i]);
        CHECK(exp_t.data[i] == b["fe"].data[i] * b["v"].data[i] * masks.m_exp.data[i]);
    }
}
