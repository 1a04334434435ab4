#pragma once

#include "splat/autodiff.hpp"
#include "splat/image.hpp"
#include "splat/nn.hpp"

namespace splat {

/// Exact squared Euclidean distance to the nearest 1-pixel of the mask
/// (infinity-free: unreachable cells get a large finite sentinel).
std::vector<double> distance_sq_transform(const Mask& m);

/// Euclidean dilation: pixel included iff its distance to M is <= delta.
/// When a band mask is supplied the growth is restricted to it (the original
/// mask always survives).
Mask expand_mask(const Mask& m, double delta, const Mask* band = nullptr);

/// Pixel counts in the source material are stated for 512x512 frames; other
/// resolutions scale linearly with the smaller image dimension.
double scale_expansion(double delta_at_512, std::size_t width, std::size_t height);

struct InpaintPair {
    Image input;   // target with the expansion band zeroed out
    Image target;  // (rotated) source frame
    Mask hole;
};

struct TrainingPairConfig {
    double max_rotation_deg = 10.0;
    double delta_lo = 10.0, delta_hi = 30.0;  // at 512x512
};

InpaintPair make_training_pair(const Image& frame, const Mask& m, Rng& rng,
                               const TrainingPairConfig& cfg = {});

/// Bilinear rotation about the image center, border pixels clamped.
Image rotate_image(const Image& img, double angle_rad);
Mask rotate_mask(const Mask& m, double angle_rad);

// ---------------------------------------------------------------------------
// Inpainting net: 3-level stride-2 encoder-decoder with skip connections,
// widths {16,32,64}. Input is RGB plus the hole mask; dims must be divisible
// by 8.

struct InpaintNet {
    nn::ParamStore params;

    static InpaintNet init(Rng& rng);
};

/// Network output composited with the input: hole pixels come from the
/// clamped prediction, everything else copies through exactly.
ad::Expr inpaint_graph(ad::Expr input_nchw /* [1,4,H,W] */, const Mask& hole);

Image inpaint(const Image& input, const Mask& hole, const InpaintNet& net);

/// L1 plus the shared perceptual metric.
double inpaint_loss(const Image& f_source, const Image& f_hat);

struct InpaintTrainConfig {
    std::size_t steps = 400;
    double lr = 2e-3;
};

std::vector<double> train_inpaint(InpaintNet& net, const std::vector<InpaintPair>& pairs,
                                  const InpaintTrainConfig& cfg);

// ---------------------------------------------------------------------------

inline constexpr double kInferenceExpansionPx = 15.0;  // at 512x512

/// Pastes the blurred render over M, inpaints the expanded band, and leaves
/// everything outside M and the band bit-identical to the original frame.
Image composite_portrait(const Image& f_r, const Image& f_o, const Mask& m, double sigma,
                         double delta_inference, const InpaintNet* net);

// NCHW helpers shared with the trainer-side image graphs.
Tensor image_to_nchw(const Image& img);
Image nchw_to_image(const Tensor& t);

}  // namespace splat
