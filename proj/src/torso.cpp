#include "splat/torso.hpp"

#include <algorithm>
#include <cmath>

#include "splat/adam.hpp"
#include "splat/losses.hpp"

namespace splat {

namespace {

constexpr double kInf = 1e18;

/// 1-D squared-distance lower envelope (Felzenszwalb / Huttenlocher).
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
    std::size_t n = f.size();
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < int(n); ++q) {
        double s;
        while (true) {
            int p = v[std::size_t(k)];
            s = ((f[std::size_t(q)] + q * q) - (f[std::size_t(p)] + p * p)) / (2.0 * (q - p));
            if (s <= z[std::size_t(k)]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[std::size_t(k)] = q;
        z[std::size_t(k)] = s;
        z[std::size_t(k) + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < int(n); ++q) {
        while (z[std::size_t(k) + 1] < q) ++k;
        int p = v[std::size_t(k)];
        d[std::size_t(q)] = double(q - p) * double(q - p) + f[std::size_t(p)];
    }
}

}  // namespace

std::vector<double> distance_sq_transform(const Mask& m) {
    if (m.width == 0 || m.height == 0) throw ValidationError("distance transform: empty mask");
    std::vector<double> d(m.width * m.height);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = m.data[i] > 0.5 ? 0.0 : kInf;
    std::vector<double> col(m.height), out_col(m.height);
    for (std::size_t x = 0; x < m.width; ++x) {
        for (std::size_t y = 0; y < m.height; ++y) col[y] = d[y * m.width + x];
        edt_1d(col, out_col);
        for (std::size_t y = 0; y < m.height; ++y) d[y * m.width + x] = out_col[y];
    }
    std::vector<double> row(m.width), out_row(m.width);
    for (std::size_t y = 0; y < m.height; ++y) {
        for (std::size_t x = 0; x < m.width; ++x) row[x] = d[y * m.width + x];
        edt_1d(row, out_row);
        for (std::size_t x = 0; x < m.width; ++x) d[y * m.width + x] = out_row[x];
    }
    return d;
}

Mask expand_mask(const Mask& m, double delta, const Mask* band) {
    if (delta < 0) throw ValidationError("expand_mask: delta must be >= 0");
    if (band && (band->width != m.width || band->height != m.height))
        throw ValidationError("expand_mask: band dimension mismatch");
    bool any = false;
    for (double v : m.data) any |= v > 0.5;
    Mask out = m;
    if (!any) return out;
    auto dist = distance_sq_transform(m);
    double d2 = delta * delta;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        if (m.data[i] > 0.5) continue;
        bool grow = dist[i] <= d2;
        if (band && band->data[i] <= 0.5) grow = false;
        if (grow) out.data[i] = 1.0;
    }
    return out;
}

double scale_expansion(double delta_at_512, std::size_t width, std::size_t height) {
    return delta_at_512 * double(std::min(width, height)) / 512.0;
}

Image rotate_image(const Image& img, double angle_rad) {
    Image out{img.width, img.height};
    double cx = (double(img.width) - 1) / 2, cy = (double(img.height) - 1) / 2;
    double ca = std::cos(-angle_rad), sa = std::sin(-angle_rad);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            double dx = double(x) - cx, dy = double(y) - cy;
            double sx = std::clamp(cx + ca * dx - sa * dy, 0.0, double(img.width) - 1);
            double sy = std::clamp(cy + sa * dx + ca * dy, 0.0, double(img.height) - 1);
            std::size_t x0 = std::size_t(sx), y0 = std::size_t(sy);
            std::size_t x1 = std::min(x0 + 1, img.width - 1),
                        y1 = std::min(y0 + 1, img.height - 1);
            double fx = sx - double(x0), fy = sy - double(y0);
            for (int c = 0; c < 3; ++c)
                out.at(x, y, c) = (1 - fy) * ((1 - fx) * img.at(x0, y0, c) +
                                              fx * img.at(x1, y0, c)) +
                                  fy * ((1 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c));
        }
    return out;
}

Mask rotate_mask(const Mask& m, double angle_rad) {
    Mask out{m.width, m.height};
    double cx = (double(m.width) - 1) / 2, cy = (double(m.height) - 1) / 2;
    double ca = std::cos(-angle_rad), sa = std::sin(-angle_rad);
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x) {
            double dx = double(x) - cx, dy = double(y) - cy;
            long sx = std::lround(cx + ca * dx - sa * dy);
            long sy = std::lround(cy + sa * dx + ca * dy);
            if (sx >= 0 && sy >= 0 && sx < long(m.width) && sy < long(m.height))
                out.at(x, y) = m.at(std::size_t(sx), std::size_t(sy));
        }
    return out;
}

InpaintPair make_training_pair(const Image& frame, const Mask& m, Rng& rng,
                               const TrainingPairConfig& cfg) {
    if (frame.width != m.width || frame.height != m.height)
        throw ValidationError("make_training_pair: frame/mask dims mismatch");
    std::uniform_real_distribution<double> rot(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    std::uniform_int_distribution<int> drange(int(cfg.delta_lo), int(cfg.delta_hi));
    double angle = rot(rng) * M_PI / 180.0;
    double delta512 = double(drange(rng));

    InpaintPair pair;
    pair.target = rotate_image(frame, angle);
    Mask rm = rotate_mask(m, angle);
    double delta = scale_expansion(delta512, frame.width, frame.height);
    Mask expanded = expand_mask(rm, delta);
    pair.hole = Mask{m.width, m.height};
    for (std::size_t i = 0; i < rm.data.size(); ++i)
        pair.hole.data[i] = (expanded.data[i] > 0.5 && rm.data[i] <= 0.5) ? 1.0 : 0.0;
    pair.input = pair.target;
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x)
            if (pair.hole.at(x, y) > 0.5)
                for (int c = 0; c < 3; ++c) pair.input.at(x, y, c) = 0.0;
    return pair;
}

InpaintNet InpaintNet::init(Rng& rng) {
    InpaintNet net;
    nn::conv_init(net.params, "inp.d0", 16, 4, 3, rng);
    nn::conv_init(net.params, "inp.d1", 32, 16, 3, rng);
    nn::conv_init(net.params, "inp.d2", 64, 32, 3, rng);
    nn::conv_init(net.params, "inp.u2", 32, 64 + 32, 3, rng);
    nn::conv_init(net.params, "inp.u1", 16, 32 + 16, 3, rng);
    nn::conv_init(net.params, "inp.u0", 3, 16 + 4, 3, rng, /*zero=*/true);
    return net;
}

namespace {

Tensor hole_nchw3(const Mask& hole) {
    Tensor t({1, 3, hole.height, hole.width});
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < hole.data.size(); ++i)
            t.data[std::size_t(c) * hole.data.size() + i] = hole.data[i];
    return t;
}

}  // namespace

ad::Expr inpaint_graph(ad::Expr input_nchw, const Mask& hole) {
    namespace a = ad;
    if (hole.width % 8 != 0 || hole.height % 8 != 0)
        throw ValidationError("inpaint: image dims must be divisible by 8");
    a::Expr d0 = a::leaky_relu(nn::conv_apply("inp.d0", input_nchw, 2, 1));
    a::Expr d1 = a::leaky_relu(nn::conv_apply("inp.d1", d0, 2, 1));
    a::Expr d2 = a::leaky_relu(nn::conv_apply("inp.d2", d1, 2, 1));
    a::Expr u2 = a::leaky_relu(
        nn::conv_apply("inp.u2", a::concat({a::upsample2(d2), d1}, 1), 1, 1));
    a::Expr u1 = a::leaky_relu(
        nn::conv_apply("inp.u1", a::concat({a::upsample2(u2), d0}, 1), 1, 1));
    a::Expr raw = nn::conv_apply("inp.u0", a::concat({a::upsample2(u1), input_nchw}, 1), 1, 1);
    // Zero-init head sits at mid gray so the clamp starts unsaturated.
    a::Expr pred = a::clamp(a::add(raw, a::constant_scalar(0.5)), 0.0, 1.0);

    Tensor hole3 = hole_nchw3(hole);
    Tensor keep3({1, 3, hole.height, hole.width});
    for (std::size_t i = 0; i < keep3.data.size(); ++i) keep3.data[i] = 1.0 - hole3.data[i];
    a::Expr rgb = a::slice(input_nchw, 1, 0, 3);
    return a::add(a::mul(pred, a::constant(hole3)), a::mul(rgb, a::constant(keep3)));
}

namespace {

Tensor input_nchw4(const Image& input, const Mask& hole) {
    Tensor t({1, 4, input.height, input.width});
    std::size_t npix = input.npix();
    for (std::size_t y = 0; y < input.height; ++y)
        for (std::size_t x = 0; x < input.width; ++x) {
            std::size_t i = y * input.width + x;
            for (int c = 0; c < 3; ++c) t.data[std::size_t(c) * npix + i] = input.at(x, y, c);
            t.data[3 * npix + i] = hole.at(x, y);
        }
    return t;
}

}  // namespace

Image inpaint(const Image& input, const Mask& hole, const InpaintNet& net) {
    if (input.width != hole.width || input.height != hole.height)
        throw ValidationError("inpaint: input/hole dims mismatch");
    ad::Expr graph = inpaint_graph(ad::constant(input_nchw4(input, hole)), hole);
    Tensor out = ad::evaluate(graph, net.params.bindings());
    Image result = input;  // copy-through outside the hole is bit-exact
    std::size_t npix = input.npix();
    for (std::size_t y = 0; y < input.height; ++y)
        for (std::size_t x = 0; x < input.width; ++x)
            if (hole.at(x, y) > 0.5)
                for (int c = 0; c < 3; ++c)
                    result.at(x, y, c) = out.data[std::size_t(c) * npix + y * input.width + x];
    return result;
}

double inpaint_loss(const Image& f_source, const Image& f_hat) {
    return image_l1(f_source, f_hat) + perceptual_metric(f_source, f_hat);
}

std::vector<double> train_inpaint(InpaintNet& net, const std::vector<InpaintPair>& pairs,
                                  const InpaintTrainConfig& cfg) {
    if (pairs.empty()) throw ValidationError("train_inpaint: no pairs");
    AdamOptimizer opt({cfg.lr, 0.9, 0.999, 1e-8});
    auto wrt = net.params.names();
    LossWeights w{1.0, 0.0, 1.0};
    std::vector<double> losses;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto& pair = pairs[step % pairs.size()];
        ad::Expr comp = inpaint_graph(ad::constant(input_nchw4(pair.input, pair.hole)),
                                      pair.hole);
        Tensor out = ad::evaluate(comp, net.params.bindings());
        Image rendered = nchw_to_image(out);
        losses.push_back(loss_weighted(rendered, pair.target, w));
        Image g = loss_weighted_grad(rendered, pair.target, w);
        auto grads = ad::backward_seeded({{comp, image_to_nchw(g)}}, net.params.bindings(), wrt);
        opt.step(net.params, grads);
    }
    return losses;
}

Image composite_portrait(const Image& f_r, const Image& f_o, const Mask& m, double sigma,
                         double delta_inference, const InpaintNet* net) {
    if (!f_r.same_dims(f_o) || m.width != f_o.width || m.height != f_o.height)
        throw ValidationError("composite_portrait: dimension mismatch");
    Image blurred = gaussian_blur(f_r, sigma);
    Image out = f_o;
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x)
            if (m.at(x, y) > 0.5)
                for (int c = 0; c < 3; ++c) out.at(x, y, c) = blurred.at(x, y, c);
    if (!net || delta_inference <= 0) return out;

    double delta = scale_expansion(delta_inference, m.width, m.height);
    Mask expanded = expand_mask(m, delta);
    Mask band{m.width, m.height};
    bool any = false;
    for (std::size_t i = 0; i < band.data.size(); ++i) {
        band.data[i] = (expanded.data[i] > 0.5 && m.data[i] <= 0.5) ? 1.0 : 0.0;
        any |= band.data[i] > 0.5;
    }
    if (!any) return out;
    Image holed = out;
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x)
            if (band.at(x, y) > 0.5)
                for (int c = 0; c < 3; ++c) holed.at(x, y, c) = 0.0;
    Image restored = inpaint(holed, band, *net);
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x)
            if (band.at(x, y) > 0.5)
                for (int c = 0; c < 3; ++c) out.at(x, y, c) = restored.at(x, y, c);
    return out;
}

Tensor image_to_nchw(const Image& img) {
    Tensor t({1, 3, img.height, img.width});
    std::size_t npix = img.npix();
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                t.data[std::size_t(c) * npix + y * img.width + x] = img.at(x, y, c);
    return t;
}

Image nchw_to_image(const Tensor& t) {
    if (t.ndim() != 4 || t.shape[0] != 1 || t.shape[1] != 3)
        throw ValidationError("nchw_to_image: expected [1,3,H,W]");
    Image img{t.shape[3], t.shape[2]};
    std::size_t npix = img.npix();
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, y, c) = t.data[std::size_t(c) * npix + y * img.width + x];
    return img;
}

}  // namespace splat
