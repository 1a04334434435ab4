#include "splat/face_sync.hpp"

#include <cmath>

#include "splat/adam.hpp"

namespace splat {

double cosine_sim(const std::vector<double>& f, const std::vector<double>& a) {
    if (f.size() != a.size()) throw ValidationError("cosine_sim: dim mismatch");
    double dot = 0, nf = 0, na = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        dot += f[i] * a[i];
        nf += f[i] * f[i];
        na += a[i] * a[i];
    }
    if (nf == 0.0 || na == 0.0) throw ValidationError("cosine_sim: zero-norm embedding");
    return dot / (std::sqrt(nf) * std::sqrt(na));
}

double sync_loss(const std::vector<double>& f, const std::vector<double>& a, int y) {
    if (y != 0 && y != 1) throw ValidationError("sync_loss: label must be 0 or 1");
    double sim = cosine_sim(f, a);
    sim = std::min(std::max(sim, kSimEps), 1.0 - kSimEps);
    return -(y * std::log(sim) + (1 - y) * std::log(1.0 - sim));
}

double reconstruction_loss(const Tensor& target, const Tensor& decoded) {
    if (!target.same_shape(decoded)) throw ValidationError("reconstruction_loss: shape mismatch");
    double s = 0;
    for (std::size_t i = 0; i < target.numel(); ++i)
        s += std::fabs(target.data[i] - decoded.data[i]);
    return s / double(target.numel());
}

namespace {

nn::MlpSpec audio_spec(const AvEncoderConfig& c) {
    return {{c.audio_dim, c.hidden, c.emb_dim}, 0.01, true};
}
nn::MlpSpec face_spec(const AvEncoderConfig& c) {
    return {{c.face_dim, c.hidden, c.emb_dim}, 0.01, false};
}
nn::MlpSpec dec_spec(const AvEncoderConfig& c) {
    return {{2 * c.emb_dim, c.hidden, c.face_dim}, 0.01, false};
}

Tensor row_tensor(const std::vector<double>& v) {
    return Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end()));
}

/// sim = <normalize(Fe), normalize(Ae)> as a graph scalar.
ad::Expr sim_graph(ad::Expr fe, ad::Expr ae) {
    return ad::sum(ad::mul(ad::normalize_rows(fe), ad::normalize_rows(ae)));
}

ad::Expr bce_graph(ad::Expr sim, int y) {
    ad::Expr s = ad::clamp(sim, kSimEps, 1.0 - kSimEps);
    if (y == 1) return ad::scale(ad::log(s), -1.0);
    return ad::scale(ad::log(ad::sub(ad::constant_scalar(1.0), s)), -1.0);
}

}  // namespace

AvEncoder AvEncoder::init(const AvEncoderConfig& cfg) {
    AvEncoder enc;
    enc.cfg = cfg;
    Rng rng(cfg.seed);
    nn::mlp_init(enc.params, "aud", audio_spec(cfg), rng);
    nn::mlp_init(enc.params, "face", face_spec(cfg), rng);
    nn::mlp_init(enc.params, "dec", dec_spec(cfg), rng);
    return enc;
}

AvEncoder train_av_encoder(const std::vector<AvSample>& corpus, const AvEncoderConfig& cfg) {
    bool has_pos = false, has_neg = false;
    for (const auto& s : corpus) {
        if (s.audio.size() != cfg.audio_dim || s.face.size() != cfg.face_dim)
            throw ValidationError("train_av_encoder: sample dims mismatch config");
        if (s.label != 0 && s.label != 1)
            throw ValidationError("train_av_encoder: labels must be 0/1");
        (s.label == 1 ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg)
        throw ValidationError("train_av_encoder: corpus needs both positive and negative pairs");

    AvEncoder enc = AvEncoder::init(cfg);
    AdamOptimizer opt({cfg.lr, 0.9, 0.999, 1e-8});
    auto wrt = enc.params.names();
    // Negative pairs never build the reconstruction decoder, so its leaves
    // are absent from their graphs.
    std::set<std::string> wrt_no_dec;
    for (const auto& n : wrt)
        if (n.rfind("dec.", 0) != 0) wrt_no_dec.insert(n);

    // One graph per sample, rebuilt each step with the sample's constants.
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& sample : corpus) {
            ad::Expr audio = ad::constant(row_tensor(sample.audio));
            ad::Expr face = ad::constant(row_tensor(sample.face));
            ad::Expr ae = nn::mlp_apply("aud", audio, audio_spec(cfg));
            ad::Expr fe = nn::mlp_apply("face", face, face_spec(cfg));
            ad::Expr loss = bce_graph(sim_graph(fe, ae), sample.label);
            if (sample.label == 1) {
                // Reconstruction only makes sense for genuine pairs.
                ad::Expr dec = nn::mlp_apply("dec", ad::concat({ae, fe}, 1), dec_spec(cfg));
                loss = ad::add(loss, ad::mean(ad::abs(ad::sub(face, dec))));
            }
            auto grads = ad::gradient(loss, enc.params.bindings(),
                                      sample.label == 1 ? wrt : wrt_no_dec);
            opt.step(enc.params, grads);
        }
    }
    return enc;
}

std::vector<double> extract_lip_feature(const std::vector<double>& audio_window,
                                        const AvEncoder& enc) {
    if (audio_window.size() != enc.cfg.audio_dim)
        throw ValidationError("extract_lip_feature: window length mismatch");
    ad::Expr out =
        nn::mlp_apply("aud", ad::constant(row_tensor(audio_window)), audio_spec(enc.cfg));
    Tensor t = ad::evaluate(out, enc.params.bindings());
    return t.data;
}

double av_sync_accuracy(const AvEncoder& enc, const std::vector<AvSample>& corpus) {
    if (corpus.empty()) throw ValidationError("av_sync_accuracy: empty corpus");
    std::size_t correct = 0;
    for (const auto& sample : corpus) {
        ad::Expr ae = nn::mlp_apply("aud", ad::constant(row_tensor(sample.audio)),
                                    audio_spec(enc.cfg));
        ad::Expr fe = nn::mlp_apply("face", ad::constant(row_tensor(sample.face)),
                                    face_spec(enc.cfg));
        double sim = ad::evaluate(sim_graph(fe, ae), enc.params.bindings()).data[0];
        int pred = sim > 0.5 ? 1 : 0;
        if (pred == sample.label) ++correct;
    }
    return double(correct) / double(corpus.size());
}

double expression_capture(const std::array<double, 52>& b, const std::vector<double>& w,
                          bool core_only) {
    if (core_only) {
        if (w.size() != kCoreBlendshapeIndices.size())
            throw ValidationError("expression_capture: core weights must have length 7");
        double s = 0;
        for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * b[kCoreBlendshapeIndices[j]];
        return s;
    }
    if (w.size() != 52) throw ValidationError("expression_capture: weights must have length 52");
    double s = 0;
    for (std::size_t i = 0; i < 52; ++i) s += w[i] * b[i];
    return s;
}

void FacialMasks::validate() const {
    if (!m_lip.same_shape(m_exp)) throw ValidationError("facial masks: shape mismatch");
    for (std::size_t i = 0; i < m_lip.numel(); ++i) {
        double a = m_lip.data[i], b = m_exp.data[i];
        if ((a != 0.0 && a != 1.0) || (b != 0.0 && b != 1.0))
            throw ValidationError("facial masks: entries must be 0/1");
        if (a * b != 0.0) throw ValidationError("facial masks: overlapping support");
    }
}

FacialMasks split_masks(std::size_t n, std::size_t split) {
    if (split > n) throw ValidationError("split_masks: split beyond domain");
    FacialMasks m{Tensor({n}), Tensor({n})};
    for (std::size_t i = 0; i < n; ++i) {
        if (i < split)
            m.m_exp.data[i] = 1.0;  // upper face
        else
            m.m_lip.data[i] = 1.0;  // lower face
    }
    return m;
}

std::pair<ad::Expr, ad::Expr> masked_fusion_graph(ad::Expr v, ad::Expr f_lip, ad::Expr f_exp,
                                                  const FacialMasks& masks) {
    masks.validate();
    // Mask tensors are stored flat; the fusion inputs are [1,n] rows.
    Tensor lip_row({1, masks.m_lip.numel()}, masks.m_lip.data);
    Tensor exp_row({1, masks.m_exp.numel()}, masks.m_exp.data);
    ad::Expr v_lip = ad::mul(v, ad::constant(std::move(lip_row)));
    ad::Expr v_exp = ad::mul(v, ad::constant(std::move(exp_row)));
    return {ad::mul(f_lip, v_lip), ad::mul(f_exp, v_exp)};
}

std::pair<Tensor, Tensor> masked_fusion(const Tensor& v, const Tensor& f_lip,
                                        const Tensor& f_exp, const FacialMasks& masks) {
    auto [fl, fe] = masked_fusion_graph(ad::leaf("v"), ad::leaf("f_lip"), ad::leaf("f_exp"),
                                        masks);
    ad::Bindings b = {{"v", v}, {"f_lip", f_lip}, {"f_exp", f_exp}};
    return {ad::evaluate(fl, b), ad::evaluate(fe, b)};
}

}  // namespace splat
