#include "splat/vq.hpp"

#include <cmath>
#include <limits>

#include "splat/adam.hpp"

namespace splat {

namespace {

nn::MlpSpec enc_spec(const VqConfig& c) {
    // A zero-initialized head would send every window to the same latent, and
    // with it the same codebook row; rows that never win a nearest-neighbor
    // query are never updated, so the latents must start spread out.
    return {{c.input_dim(), c.hidden, c.code_dim}, 0.01, false};
}
nn::MlpSpec dec_spec(const VqConfig& c) {
    return {{c.code_dim, c.hidden, c.input_dim()}, 0.01, false};
}

Tensor row_tensor(const std::vector<double>& v) {
    return Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end()));
}

}  // namespace

VqModel VqModel::init(const VqConfig& cfg) {
    if (cfg.codebook_size == 0 || cfg.code_dim == 0 || cfg.window == 0)
        throw ValidationError("vq config: sizes must be positive");
    if (cfg.beta < 0) throw ValidationError("vq config: beta must be >= 0");
    VqModel m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    nn::mlp_init(m.params, "vqe", enc_spec(cfg), rng);
    nn::mlp_init(m.params, "vqd", dec_spec(cfg), rng);
    // Codes start at roughly the spread of the fresh encoder latents. Entries
    // that never win a nearest-neighbor query are never updated, so an init
    // far off that scale would strand most of the codebook.
    m.codebook = randn({cfg.codebook_size, cfg.code_dim}, rng, 0.2);
    return m;
}

std::map<std::string, Tensor> VqModel::to_sections() const {
    std::map<std::string, Tensor> out = params.values;
    out["vq.codebook"] = codebook;
    out["vq.cfg"] = Tensor({6}, {double(cfg.window), double(cfg.codebook_size),
                                 double(cfg.code_dim), double(cfg.hidden), cfg.beta,
                                 double(cfg.seed)});
    return out;
}

VqModel VqModel::from_sections(const std::map<std::string, Tensor>& sections) {
    auto it = sections.find("vq.cfg");
    if (it == sections.end()) throw ValidationError("checkpoint missing vq.cfg");
    const auto& c = it->second.data;
    if (c.size() != 6) throw ValidationError("bad vq.cfg section");
    VqModel m;
    m.cfg.window = std::size_t(c[0]);
    m.cfg.codebook_size = std::size_t(c[1]);
    m.cfg.code_dim = std::size_t(c[2]);
    m.cfg.hidden = std::size_t(c[3]);
    m.cfg.beta = c[4];
    m.cfg.seed = std::uint64_t(c[5]);
    auto cb = sections.find("vq.codebook");
    if (cb == sections.end()) throw ValidationError("checkpoint missing vq.codebook");
    m.codebook = cb->second;
    if (m.codebook.shape != Shape{m.cfg.codebook_size, m.cfg.code_dim})
        throw ValidationError("vq.codebook shape mismatch");
    for (const auto& [k, v] : sections)
        if (k != "vq.codebook" && k != "vq.cfg") m.params.set(k, v);
    return m;
}

ad::Expr vq_encoder_graph(const VqConfig& cfg, ad::Expr x) {
    // Center the [0,1] coefficients so the shared offset across windows does
    // not dominate the latent direction; nearest-neighbor assignments then
    // spread over the codebook instead of piling onto a handful of rows.
    ad::Expr centered = ad::sub(x, ad::constant_scalar(0.5));
    return nn::mlp_apply("vqe", centered, enc_spec(cfg));
}

ad::Expr vq_decoder_graph(const VqConfig& cfg, ad::Expr z) {
    return ad::sigmoid(nn::mlp_apply("vqd", z, dec_spec(cfg)));
}

std::vector<double> flatten_window(const std::vector<io::BlendshapeFrame>& track,
                                   std::size_t t, std::size_t window) {
    if (t + window > track.size()) throw ValidationError("flatten_window: range out of track");
    std::vector<double> out;
    out.reserve(window * 52);
    for (std::size_t i = t; i < t + window; ++i)
        out.insert(out.end(), track[i].begin(), track[i].end());
    return out;
}

Tensor encode(const VqModel& model, const std::vector<double>& window_flat) {
    if (window_flat.size() != model.cfg.input_dim())
        throw ValidationError("encode: window length mismatch");
    Tensor z = ad::evaluate(vq_encoder_graph(model.cfg, ad::constant(row_tensor(window_flat))),
                            model.params.bindings());
    return Tensor({model.cfg.code_dim}, std::move(z.data));
}

QuantizeResult quantize(const Tensor& z_e, const Tensor& codebook) {
    if (codebook.ndim() != 2 || codebook.rows() == 0)
        throw ValidationError("quantize: empty codebook");
    std::size_t c = codebook.cols();
    if (z_e.numel() != c) throw ValidationError("quantize: latent dim mismatch");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < codebook.rows(); ++k) {
        double d = 0;
        for (std::size_t i = 0; i < c; ++i) {
            double diff = z_e.data[i] - codebook.at2(k, i);
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    QuantizeResult res;
    res.index = best;
    res.z_q = Tensor({c});
    for (std::size_t i = 0; i < c; ++i) res.z_q.data[i] = codebook.at2(best, i);
    return res;
}

std::vector<double> decode(const VqModel& model, const Tensor& z) {
    if (z.numel() != model.cfg.code_dim) throw ValidationError("decode: latent dim mismatch");
    Tensor row({1, z.numel()}, z.data);
    Tensor out = ad::evaluate(vq_decoder_graph(model.cfg, ad::constant(row)),
                              model.params.bindings());
    return out.data;
}

double vq_loss(const std::vector<double>& b, const std::vector<double>& b_rec,
               const Tensor& z_e, const Tensor& z_q, double beta) {
    if (b.size() != b_rec.size() || !z_e.same_shape(z_q))
        throw ValidationError("vq_loss: shape mismatch");
    double recon = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        double d = b[i] - b_rec[i];
        recon += d * d;
    }
    double commit = 0;
    for (std::size_t i = 0; i < z_e.numel(); ++i) {
        double d = z_e.data[i] - z_q.data[i];
        commit += d * d;
    }
    return recon + commit + beta * commit;
}

void seed_codebook(VqModel& model, const std::vector<io::BlendshapeFrame>& track) {
    const auto& cfg = model.cfg;
    if (track.size() < cfg.window)
        throw ValidationError("seed_codebook: track shorter than window");
    std::size_t n_windows = track.size() - cfg.window + 1;
    for (std::size_t k = 0; k < cfg.codebook_size; ++k) {
        std::size_t t = cfg.codebook_size > 1
                            ? (k * (n_windows - 1)) / (cfg.codebook_size - 1)
                            : 0;
        Tensor z = encode(model, flatten_window(track, t, cfg.window));
        for (std::size_t i = 0; i < cfg.code_dim; ++i) model.codebook.at2(k, i) = z.data[i];
    }
}

VqTrainLog train_vq(VqModel& model, const std::vector<io::BlendshapeFrame>& track) {
    const auto& cfg = model.cfg;
    if (track.size() < cfg.window) throw ValidationError("train_vq: track shorter than window");
    seed_codebook(model, track);
    AdamOptimizer opt({cfg.lr, 0.9, 0.999, 1e-8});
    auto wrt = model.params.names();
    // Per-row codebook Adam states so untouched rows stay bit-identical.
    std::vector<AdamState> row_states(cfg.codebook_size);
    // The codebook trails the encoder deliberately. Rows that chase their
    // cluster at full speed overrun each other and merge, and a merged row
    // never gets its points back; a slow codebook keeps the seeded partition.
    AdamHyper cb_hyper{0.1 * cfg.lr, 0.9, 0.999, 1e-8};

    VqTrainLog log;
    log.row_hits.assign(cfg.codebook_size, 0);
    std::size_t n_windows = track.size() - cfg.window + 1;
    std::vector<std::size_t> order(n_windows);
    for (std::size_t i = 0; i < n_windows; ++i) order[i] = i;
    Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Consecutive windows overlap heavily; visiting them in sequence
        // makes the correlated updates drag the whole latent cloud onto a
        // few rows, so the visit order is reshuffled every epoch.
        for (std::size_t i = n_windows; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng() % i]);
        double total = 0;
        for (std::size_t ti = 0; ti < n_windows; ++ti) {
            auto win = flatten_window(track, order[ti], cfg.window);
            Tensor z_e = encode(model, win);
            auto q = quantize(z_e, model.codebook);
            ++log.row_hits[q.index];

            // Tape: reconstruction through the straight-through copy plus the
            // encoder commitment term.
            ad::Expr x = ad::constant(row_tensor(win));
            ad::Expr ze_expr = vq_encoder_graph(cfg, x);
            Tensor zq_row({1, cfg.code_dim}, q.z_q.data);
            ad::Expr st = ad::add(ze_expr,
                                  ad::stop_grad(ad::sub(ad::constant(zq_row), ze_expr)));
            ad::Expr rec = vq_decoder_graph(cfg, st);
            ad::Expr loss = ad::add(ad::sum(ad::square(ad::sub(rec, x))),
                                    ad::sum(ad::square(ad::sub(ze_expr, ad::constant(zq_row)))));
            auto grads = ad::gradient(loss, model.params.bindings(), wrt);
            opt.step(model.params, grads);

            // Codebook row update from the beta term: d/dz_q beta||sg(z_e)-z_q||^2.
            if (cfg.beta > 0) {
                Tensor row({cfg.code_dim}), grad({cfg.code_dim});
                for (std::size_t i = 0; i < cfg.code_dim; ++i) {
                    row.data[i] = model.codebook.at2(q.index, i);
                    grad.data[i] = 2.0 * cfg.beta * (row.data[i] - z_e.data[i]);
                }
                adam_step(row, grad, row_states[q.index], cb_hyper);
                for (std::size_t i = 0; i < cfg.code_dim; ++i)
                    model.codebook.at2(q.index, i) = row.data[i];
            }

            auto b_rec = decode(model, quantize(encode(model, win), model.codebook).z_q);
            total += vq_loss(win, b_rec, z_e, q.z_q, cfg.beta);
        }
        log.epoch_loss.push_back(total / double(n_windows));
    }
    return log;
}

std::vector<io::BlendshapeFrame> adapt_ood(const std::vector<io::BlendshapeFrame>& b_ood,
                                           const VqModel& model) {
    const auto& cfg = model.cfg;
    if (model.codebook.numel() == 0) throw ValidationError("adapt_ood: empty codebook");
    if (b_ood.size() < cfg.window) throw ValidationError("adapt_ood: track shorter than window");
    std::vector<io::BlendshapeFrame> out(b_ood.size());
    // Consecutive windows, final partial window handled by re-anchoring at
    // the tail so every frame is produced exactly once.
    std::size_t t = 0;
    while (t < b_ood.size()) {
        std::size_t start = std::min(t, b_ood.size() - cfg.window);
        auto win = flatten_window(b_ood, start, cfg.window);
        auto rec = decode(model, quantize(encode(model, win), model.codebook).z_q);
        for (std::size_t i = t; i < start + cfg.window; ++i)
            for (std::size_t c = 0; c < 52; ++c) out[i][c] = rec[(i - start) * 52 + c];
        t = start + cfg.window;
    }
    return out;
}

}  // namespace splat
