#pragma once

#include <array>
#include <vector>

#include "splat/autodiff.hpp"
#include "splat/nn.hpp"

namespace splat {

/// Core expression controls: brow-down left/right, brow-inner-up, brow-outer-
/// up left/right, eye-blink left/right (ARKit-style coefficient ordering).
inline constexpr std::array<std::size_t, 7> kCoreBlendshapeIndices = {0, 1, 2, 3, 4, 8, 9};

inline constexpr double kSimEps = 1e-7;  // BCE clamp bound on the similarity

double cosine_sim(const std::vector<double>& f, const std::vector<double>& a);

/// BCE on the clamped cosine similarity; y in {0,1}.
double sync_loss(const std::vector<double>& f, const std::vector<double>& a, int y);

/// Mean absolute error between target and decoded embeddings.
double reconstruction_loss(const Tensor& target, const Tensor& decoded);

// ---------------------------------------------------------------------------
// Toy audio-visual encoder: audio branch + face branch + reconstruction
// decoder, trained on the sync BCE plus the L1 reconstruction term. Only the
// audio branch is consumed downstream.

struct AvSample {
    std::vector<double> audio;
    std::vector<double> face;
    int label = 1;  // 1 = synchronized pair
};

struct AvEncoderConfig {
    std::size_t audio_dim = 16;
    std::size_t face_dim = 8;
    std::size_t emb_dim = 32;  // f_l dimension
    std::size_t hidden = 32;
    std::size_t epochs = 60;
    double lr = 1e-2;
    std::uint64_t seed = 1;
};

struct AvEncoder {
    AvEncoderConfig cfg;
    nn::ParamStore params;  // "aud.*", "face.*", "dec.*"

    static AvEncoder init(const AvEncoderConfig& cfg);
};

AvEncoder train_av_encoder(const std::vector<AvSample>& corpus, const AvEncoderConfig& cfg);

std::vector<double> extract_lip_feature(const std::vector<double>& audio_window,
                                        const AvEncoder& enc);

/// Fraction of corpus samples whose thresholded similarity matches the label.
double av_sync_accuracy(const AvEncoder& enc, const std::vector<AvSample>& corpus);

// ---------------------------------------------------------------------------
// Expression capture and masked fusion.

/// Weighted sum over all 52 coefficients, or over the 7 core ones.
double expression_capture(const std::array<double, 52>& b, const std::vector<double>& w,
                          bool core_only);

struct FacialMasks {
    Tensor m_lip, m_exp;  // binary, same shape, disjoint support

    void validate() const;
};

/// Lower/upper split of an n-element feature domain at index `split`
/// (the nose-tip coordinate): lip below, expression above.
FacialMasks split_masks(std::size_t n, std::size_t split);

/// f_l = f_lip (*) (V (*) M_lip), f_e = f_exp (*) (V (*) M_exp).
/// Gradients vanish identically outside each mask's support.
std::pair<ad::Expr, ad::Expr> masked_fusion_graph(ad::Expr v, ad::Expr f_lip, ad::Expr f_exp,
                                                  const FacialMasks& masks);

std::pair<Tensor, Tensor> masked_fusion(const Tensor& v, const Tensor& f_lip,
                                        const Tensor& f_exp, const FacialMasks& masks);

}  // namespace splat
