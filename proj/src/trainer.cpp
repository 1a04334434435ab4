#include "splat/trainer.hpp"

#include <cmath>
#include <fstream>

namespace splat {

void TrainingConfig::validate() const {
    if (stage1.l1 < 0 || stage1.lpips < 0 || stage1.perceptual < 0 || lpips_stage2 < 0)
        throw ValidationError("training config: loss weights must be >= 0");
    if (lpips_stage2 <= stage1.lpips)
        throw ValidationError("training config: stage-2 lpips weight must exceed stage 1");
    if (adam.lr <= 0) throw ValidationError("training config: lr must be positive");
}

double loss_static(const Image& rendered, const Image& target, const TrainingConfig& cfg) {
    return loss_weighted(rendered, target, cfg.stage1);
}

double loss_dynamic(const Image& rendered, const Image& target, const TrainingConfig& cfg) {
    return loss_weighted(rendered, target, cfg.stage2_weights());
}

void write_loss_log_csv(const std::string& path, const std::vector<TrainLogEntry>& log) {
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot open for write: " + path);
    f << "step,stage,l1,perc,total\n";
    f.precision(17);
    for (const auto& e : log)
        f << e.step << "," << e.stage << "," << e.l1 << "," << e.perc << "," << e.total << "\n";
    if (!f) throw ValidationError("short write: " + path);
}

namespace {

/// Packs rasterizer scene gradients into seed tensors for the attribute
/// expressions.
struct AttrSeeds {
    Tensor mu, r, s, alpha, sh;
};

AttrSeeds pack_seeds(const SceneGrads& g, std::size_t sh_dim) {
    std::size_t n = g.mu.size();
    AttrSeeds seeds{Tensor({n, 3}), Tensor({n, 4}), Tensor({n, 3}), Tensor({n, 1}),
                    Tensor({n, sh_dim})};
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            seeds.mu.at2(i, std::size_t(k)) = g.mu[i](k);
            seeds.s.at2(i, std::size_t(k)) = g.s[i](k);
        }
        for (int k = 0; k < 4; ++k) seeds.r.at2(i, std::size_t(k)) = g.r[i][std::size_t(k)];
        seeds.alpha.at2(i, 0) = g.alpha[i];
        for (std::size_t k = 0; k < sh_dim; ++k) seeds.sh.at2(i, k) = g.sh[i][k];
    }
    return seeds;
}

}  // namespace

Image render_frame(const DeformModel& model, const FrameSample& frame) {
    auto scene = model.decode_deformed(frame.input);
    RenderTarget t{frame.cam.width, frame.cam.height, {0, 0, 0}};
    return rasterize(scene, frame.cam, t);
}

TrainResult train_two_stage(const std::vector<FrameSample>& dataset, DeformModel model,
                            const TrainingConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw ValidationError("train_two_stage: empty dataset");
    for (const auto& fr : dataset) {
        if (fr.target.width != fr.cam.width || fr.target.height != fr.cam.height)
            throw ValidationError("train_two_stage: frame image dims mismatch camera");
        fr.input.validate(model.cfg.fl_dim, model.cfg.fe_dim);
    }

    TrainResult res{std::move(model), {}};
    AdamOptimizer opt(cfg.adam);
    auto wrt_all = res.model.params.names();
    // The canonical graph has no deformation decoder in it, and gradients can
    // only be requested for leaves the graph contains.
    std::set<std::string> wrt_canonical;
    for (const auto& n : wrt_all)
        if (n.rfind("def.", 0) != 0) wrt_canonical.insert(n);
    std::size_t sh_dim = res.model.cfg.sh_dim();

    auto run_stage = [&](int stage, std::size_t steps, const LossWeights& w) {
        SceneAttrExprs attrs =
            stage == 1 ? res.model.canonical_graph() : res.model.deform_graph();
        const auto& wrt = stage == 1 ? wrt_canonical : wrt_all;
        for (std::size_t step = 0; step < steps; ++step) {
            const FrameSample& frame = dataset[step % dataset.size()];
            ad::Bindings bindings = stage == 1 ? res.model.params.bindings()
                                               : res.model.frame_bindings(frame.input);
            auto vals = ad::evaluate_many({attrs.mu, attrs.r, attrs.s, attrs.alpha, attrs.sh},
                                          bindings);
            auto scene = attrs_to_scene(vals[0], vals[1], vals[2], vals[3], vals[4]);

            RenderTarget target{frame.cam.width, frame.cam.height, {0, 0, 0}};
            ForwardContext ctx;
            Image rendered = rasterize(scene, frame.cam, target, &ctx);

            double l1 = image_l1(rendered, frame.target);
            double perc = perceptual_metric(rendered, frame.target);
            double total = w.l1 * l1 + (w.lpips + w.perceptual) * perc;
            if (!std::isfinite(total))
                throw NumericalError("train_two_stage: non-finite loss at stage " +
                                     std::to_string(stage) + " step " + std::to_string(step));
            res.log.push_back({step, stage, l1, perc, total});

            Image dimg = loss_weighted_grad(rendered, frame.target, w);
            SceneGrads sg = rasterize_backward(scene, frame.cam, target, dimg, ctx);
            AttrSeeds seeds = pack_seeds(sg, sh_dim);
            auto grads = ad::backward_seeded({{attrs.mu, seeds.mu},
                                              {attrs.r, seeds.r},
                                              {attrs.s, seeds.s},
                                              {attrs.alpha, seeds.alpha},
                                              {attrs.sh, seeds.sh}},
                                             bindings, wrt);
            opt.step(res.model.params, grads);
        }
    };

    run_stage(1, cfg.stage1_steps, cfg.stage1);
    run_stage(2, cfg.stage2_steps, cfg.stage2_weights());
    return res;
}

}  // namespace splat
