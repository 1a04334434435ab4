#pragma once

#include <vector>

#include "splat/autodiff.hpp"
#include "splat/io.hpp"
#include "splat/nn.hpp"

namespace splat {

struct VqConfig {
    std::size_t window = 8;  // frames per encoder window
    std::size_t codebook_size = 64;
    std::size_t code_dim = 32;
    std::size_t hidden = 64;
    double beta = 0.25;
    std::size_t epochs = 200;
    double lr = 1e-3;
    std::uint64_t seed = 1;

    std::size_t input_dim() const { return window * 52; }
};

/// Window-MLP VQ autoencoder over blendshape sequences. Encoder and decoder
/// are 2-layer MLPs; the latent snaps to the nearest codebook entry.
struct VqModel {
    VqConfig cfg;
    nn::ParamStore params;  // "vqe.*" encoder, "vqd.*" decoder
    Tensor codebook;        // [N, C]

    static VqModel init(const VqConfig& cfg);

    std::map<std::string, Tensor> to_sections() const;
    static VqModel from_sections(const std::map<std::string, Tensor>& sections);
};

/// Encoder/decoder graphs over a [1, dim] window row.
ad::Expr vq_encoder_graph(const VqConfig& cfg, ad::Expr x);
ad::Expr vq_decoder_graph(const VqConfig& cfg, ad::Expr z);  // sigmoid head, in [0,1]

/// Flattens frames [t, t+window) into one encoder input row.
std::vector<double> flatten_window(const std::vector<io::BlendshapeFrame>& track,
                                   std::size_t t, std::size_t window);

Tensor encode(const VqModel& model, const std::vector<double>& window_flat);

struct QuantizeResult {
    std::size_t index = 0;
    Tensor z_q;  // [C]
};

/// Exhaustive nearest neighbor; ties break to the lowest index.
QuantizeResult quantize(const Tensor& z_e, const Tensor& codebook);

std::vector<double> decode(const VqModel& model, const Tensor& z);

/// ||b - b_rec||^2 + ||z_e - sg(z_q)||^2 + beta ||sg(z_e) - z_q||^2 (sums of
/// squares; stop-gradients only matter for training, the value is plain).
double vq_loss(const std::vector<double>& b, const std::vector<double>& b_rec,
               const Tensor& z_e, const Tensor& z_q, double beta);

struct VqTrainLog {
    std::vector<double> epoch_loss;
    std::vector<std::size_t> row_hits;  // times each codebook row was selected
};

/// Deterministically re-points every codebook row at the encoder latent of an
/// evenly spaced window of the track. Rows only learn when they win a
/// nearest-neighbor query, so a data-blind init strands most of the codebook
/// on day one; seeding gives every row a cluster to start from. Idempotent
/// for fixed parameters.
void seed_codebook(VqModel& model, const std::vector<io::BlendshapeFrame>& track);

/// Straight-through training: the decoder gradient reaches the encoder
/// through the quantizer copy; the codebook learns only from the beta term,
/// and only the rows actually selected in a step ever change. Starts by
/// seeding the codebook from the track (a no-op if already seeded).
VqTrainLog train_vq(VqModel& model, const std::vector<io::BlendshapeFrame>& track);

/// decode(quantize(encode(window))) over consecutive windows.
std::vector<io::BlendshapeFrame> adapt_ood(const std::vector<io::BlendshapeFrame>& b_ood,
                                           const VqModel& model);

}  // namespace splat
