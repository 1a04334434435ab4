#include "splat/losses.hpp"

#include <cmath>

namespace splat {

namespace {

constexpr int kLevels = 3;
constexpr std::size_t kPatch = 8;

Image downsample2(const Image& img) {
    std::size_t w = (img.width + 1) / 2, h = (img.height + 1) / 2;
    Image out{w, h};
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                int n = 0;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        std::size_t sx = 2 * x + dx, sy = 2 * y + dy;
                        if (sx < img.width && sy < img.height) {
                            acc += img.at(sx, sy, c);
                            ++n;
                        }
                    }
                out.at(x, y, c) = acc / n;
            }
    return out;
}

/// Adjoint of downsample2: spreads each coarse-pixel gradient evenly over the
/// source pixels it averaged.
Image downsample2_adjoint(const Image& grad_coarse, std::size_t fine_w, std::size_t fine_h) {
    Image out{fine_w, fine_h};
    for (std::size_t y = 0; y < grad_coarse.height; ++y)
        for (std::size_t x = 0; x < grad_coarse.width; ++x) {
            int n = 0;
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx)
                    if (2 * x + dx < fine_w && 2 * y + dy < fine_h) ++n;
            for (int c = 0; c < 3; ++c) {
                double g = grad_coarse.at(x, y, c) / n;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx)
                        if (2 * x + dx < fine_w && 2 * y + dy < fine_h)
                            out.at(2 * x + dx, 2 * y + dy, c) += g;
            }
        }
    return out;
}

struct PatchStat {
    double mean, var;
};

PatchStat patch_stat(const Image& img, std::size_t px, std::size_t py, int c) {
    std::size_t x1 = std::min(px + kPatch, img.width), y1 = std::min(py + kPatch, img.height);
    double n = double((x1 - px) * (y1 - py));
    double s = 0, s2 = 0;
    for (std::size_t y = py; y < y1; ++y)
        for (std::size_t x = px; x < x1; ++x) {
            double v = img.at(x, y, c);
            s += v;
            s2 += v * v;
        }
    double m = s / n;
    return {m, s2 / n - m * m};
}

/// One pyramid level's statistic distance; optionally accumulates d/dA into
/// grad (same dims as a) scaled by upstream weight.
double level_score(const Image& a, const Image& b, Image* grad) {
    std::size_t npx = (a.width + kPatch - 1) / kPatch, npy = (a.height + kPatch - 1) / kPatch;
    double nstats = double(npx * npy * 3);
    double acc = 0;
    for (std::size_t py = 0; py < a.height; py += kPatch)
        for (std::size_t px = 0; px < a.width; px += kPatch)
            for (int c = 0; c < 3; ++c) {
                auto sa = patch_stat(a, px, py, c);
                auto sb = patch_stat(b, px, py, c);
                double dm = sa.mean - sb.mean, dv = sa.var - sb.var;
                acc += (dm * dm + dv * dv) / nstats;
                if (grad) {
                    std::size_t x1 = std::min(px + kPatch, a.width);
                    std::size_t y1 = std::min(py + kPatch, a.height);
                    double n = double((x1 - px) * (y1 - py));
                    for (std::size_t y = py; y < y1; ++y)
                        for (std::size_t x = px; x < x1; ++x) {
                            double dmean_dx = 1.0 / n;
                            double dvar_dx = 2.0 * (a.at(x, y, c) - sa.mean) / n;
                            grad->at(x, y, c) +=
                                (2.0 * dm * dmean_dx + 2.0 * dv * dvar_dx) / nstats;
                        }
                }
            }
    return acc;
}

void require_dims(const Image& a, const Image& b, const char* what) {
    if (!a.same_dims(b)) throw ValidationError(std::string(what) + ": image dimension mismatch");
}

}  // namespace

double perceptual_metric(const Image& a, const Image& b) {
    require_dims(a, b, "perceptual_metric");
    if (a.width == 0 || a.height == 0) throw ValidationError("perceptual_metric: empty image");
    Image la = a, lb = b;
    double total = 0;
    for (int level = 0; level < kLevels; ++level) {
        total += level_score(la, lb, nullptr);
        if (level + 1 < kLevels) {
            la = downsample2(la);
            lb = downsample2(lb);
        }
    }
    return total;
}

Image perceptual_metric_grad(const Image& a, const Image& b) {
    require_dims(a, b, "perceptual_metric_grad");
    std::vector<Image> pa{a}, pb{b};
    for (int level = 1; level < kLevels; ++level) {
        pa.push_back(downsample2(pa.back()));
        pb.push_back(downsample2(pb.back()));
    }
    // Per-level gradients, then pooled-image adjoints back to full resolution.
    Image grad{a.width, a.height};
    for (int level = 0; level < kLevels; ++level) {
        Image g{pa[std::size_t(level)].width, pa[std::size_t(level)].height};
        level_score(pa[std::size_t(level)], pb[std::size_t(level)], &g);
        for (int l = level; l > 0; --l)
            g = downsample2_adjoint(g, pa[std::size_t(l - 1)].width,
                                    pa[std::size_t(l - 1)].height);
        for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
    }
    return grad;
}

double loss_weighted(const Image& rendered, const Image& target, const LossWeights& w,
                     PerceptualFn lpips_slot) {
    require_dims(rendered, target, "loss_weighted");
    double total = w.l1 * image_l1(rendered, target);
    double perc = 0, lp = 0;
    if (w.perceptual != 0.0) perc = perceptual_metric(rendered, target);
    if (w.lpips != 0.0) lp = lpips_slot ? lpips_slot(rendered, target) : perceptual_metric(rendered, target);
    return total + w.lpips * lp + w.perceptual * perc;
}

Image loss_weighted_grad(const Image& rendered, const Image& target, const LossWeights& w) {
    require_dims(rendered, target, "loss_weighted_grad");
    Image grad{rendered.width, rendered.height};
    double n = double(rendered.data.size());
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        double d = rendered.data[i] - target.data[i];
        grad.data[i] = w.l1 * (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n;
    }
    double pw = w.lpips + w.perceptual;  // both slots default to the patch metric
    if (pw != 0.0) {
        Image pg = perceptual_metric_grad(rendered, target);
        for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += pw * pg.data[i];
    }
    return grad;
}

}  // namespace splat
