#pragma once

#include "splat/image.hpp"

namespace splat {

/// Per-term weights of the rendering loss. Stage 2 raises lpips above the
/// stage-1 value; loss_static / loss_dynamic pick the right set.
struct LossWeights {
    double l1 = 1.0;
    double lpips = 0.1;
    double perceptual = 0.1;
};

/// Pluggable perceptual slot. The default is the patch-statistic pyramid
/// below; an external LPIPS-style metric can be dropped in for evaluation
/// (it will not have analytic gradients, so training sticks to the default).
using PerceptualFn = double (*)(const Image&, const Image&);

/// Multi-scale patch statistic distance: mean squared difference of 8x8 patch
/// means and variances, summed over a 3-level 2x average-pooling pyramid.
/// Symmetric, >= 0, and 0 iff the statistics agree at every level.
double perceptual_metric(const Image& a, const Image& b);

/// d perceptual_metric / d a (analytic, matches finite differences).
Image perceptual_metric_grad(const Image& a, const Image& b);

double loss_weighted(const Image& rendered, const Image& target, const LossWeights& w,
                     PerceptualFn lpips_slot = nullptr);

/// d loss_weighted / d rendered. The L1 subgradient at exact ties is 0.
Image loss_weighted_grad(const Image& rendered, const Image& target, const LossWeights& w);

}  // namespace splat
