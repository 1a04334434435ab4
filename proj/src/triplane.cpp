#include "splat/triplane.hpp"

#include <cmath>

namespace splat {

DecodeStrategy parse_strategy(const std::string& name) {
    if (name == "s,r,SH,alpha") return DecodeStrategy::ScaleRotShAlpha;
    if (name == "SH,alpha") return DecodeStrategy::ShAlpha;
    if (name == "r,s") return DecodeStrategy::RotScale;
    if (name == "random") return DecodeStrategy::RandomInit;
    throw ValidationError("unknown decode strategy: " + name);
}

std::string strategy_name(DecodeStrategy s) {
    switch (s) {
        case DecodeStrategy::ScaleRotShAlpha: return "s,r,SH,alpha";
        case DecodeStrategy::ShAlpha: return "SH,alpha";
        case DecodeStrategy::RotScale: return "r,s";
        case DecodeStrategy::RandomInit: return "random";
    }
    throw ValidationError("bad strategy enum");
}

TriplaneGrid TriplaneGrid::init(const TriplaneConfig& cfg, Rng& rng, double stddev) {
    if (cfg.levels == 0 || cfg.dim == 0 || cfg.base_res < 2)
        throw ValidationError("triplane config: levels/dim positive, base_res >= 2");
    TriplaneGrid grid;
    grid.cfg = cfg;
    for (int p = 0; p < 3; ++p)
        for (std::size_t l = 0; l < cfg.levels; ++l) {
            std::size_t r = cfg.res_at(l);
            grid.planes[std::size_t(p)].push_back(randn({r, r, cfg.dim}, rng, stddev));
        }
    return grid;
}

void TriplaneGrid::validate() const {
    for (const auto& plane : planes) {
        if (plane.size() != cfg.levels) throw ValidationError("triplane: level count mismatch");
        for (std::size_t l = 0; l < plane.size(); ++l) {
            std::size_t r = cfg.res_at(l);
            if (plane[l].shape != Shape{r, r, cfg.dim})
                throw ValidationError("triplane: plane shape mismatch at level " +
                                      std::to_string(l));
            if (!plane[l].all_finite()) throw NumericalError("triplane: non-finite features");
        }
    }
}

std::vector<double> interp_plane(const std::vector<Tensor>& levels, const Vec2& uv) {
    std::vector<double> out;
    for (const auto& plane : levels) {
        if (plane.ndim() != 3) throw ValidationError("interp_plane: expected [H,W,D] level");
        std::size_t h = plane.shape[0], w = plane.shape[1], d = plane.shape[2];
        double u = std::min(std::max(uv.x(), 0.0), 1.0);
        double v = std::min(std::max(uv.y(), 0.0), 1.0);
        // Same lattice mapping as the grid_sample graph op.
        double x = u * double(w - 1), y = v * double(h - 1);
        std::size_t x0 = std::min(std::size_t(x), w - 1), y0 = std::min(std::size_t(y), h - 1);
        std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        double fx = x - double(x0), fy = y - double(y0);
        for (std::size_t k = 0; k < d; ++k) {
            double g00 = plane.data[(y0 * w + x0) * d + k];
            double g01 = plane.data[(y0 * w + x1) * d + k];
            double g10 = plane.data[(y1 * w + x0) * d + k];
            double g11 = plane.data[(y1 * w + x1) * d + k];
            out.push_back((1 - fy) * ((1 - fx) * g00 + fx * g01) +
                          fy * ((1 - fx) * g10 + fx * g11));
        }
    }
    return out;
}

std::vector<double> fuse_features(const std::vector<double>& fxy, const std::vector<double>& fyz,
                                  const std::vector<double>& fxz) {
    if (fxy.size() != fyz.size() || fyz.size() != fxz.size())
        throw ValidationError("fuse_features: per-plane dims differ");
    std::vector<double> out;
    out.reserve(3 * fxy.size());
    out.insert(out.end(), fxy.begin(), fxy.end());
    out.insert(out.end(), fyz.begin(), fyz.end());
    out.insert(out.end(), fxz.begin(), fxz.end());
    return out;
}

void DeformationInput::validate(std::size_t fl_dim, std::size_t fe_dim) const {
    if (f_l.size() != fl_dim || f_e.size() != fe_dim)
        throw ValidationError("deformation input feature dims mismatch");
    for (double v : f_l)
        if (!std::isfinite(v)) throw NumericalError("non-finite f_l");
    for (double v : f_e)
        if (!std::isfinite(v)) throw NumericalError("non-finite f_e");
    if (std::fabs(R.norm() - 1.0) > 1e-3) throw ValidationError("pose quaternion not unit");
    if (!T.allFinite()) throw NumericalError("non-finite pose translation");
}

std::vector<GaussianPrimitive> apply_deformation(const std::vector<GaussianPrimitive>& scene,
                                                 const SceneDeltas& deltas) {
    auto n = scene.size();
    if (deltas.mu.size() != n || deltas.r.size() != n || deltas.s.size() != n ||
        deltas.alpha.size() != n || deltas.sh.size() != n)
        throw ValidationError("apply_deformation: delta count mismatch");
    std::vector<GaussianPrimitive> out = scene;
    for (std::size_t i = 0; i < n; ++i) {
        auto& g = out[i];
        g.mu += deltas.mu[i];
        const auto& dr = deltas.r[i];
        if (dr[0] != 0.0 || dr[1] != 0.0 || dr[2] != 0.0 || dr[3] != 0.0) {
            Quat q{g.r.w + dr[0], g.r.x + dr[1], g.r.y + dr[2], g.r.z + dr[3]};
            double nq = q.norm();
            if (nq < 1e-9) throw NumericalError("deformed quaternion degenerate");
            g.r = Quat{q.w / nq, q.x / nq, q.y / nq, q.z / nq};
        }
        for (int k = 0; k < 3; ++k)
            g.s(k) = std::max(g.s(k) + deltas.s[i](k), 1e-6);
        g.alpha = std::min(std::max(g.alpha + deltas.alpha[i], 0.0), 1.0);
        if (deltas.sh[i].size() != g.sh.size())
            throw ValidationError("apply_deformation: SH delta length mismatch");
        for (std::size_t k = 0; k < g.sh.size(); ++k) g.sh[k] += deltas.sh[i][k];
    }
    return out;
}

namespace {

constexpr const char* kPlaneNames[3] = {"xy", "yz", "xz"};

std::string plane_leaf(int p, std::size_t level) {
    return std::string("tp.") + kPlaneNames[p] + std::to_string(level);
}

nn::MlpSpec canonical_spec(const DeformModelConfig& cfg) {
    return {{cfg.triplane.fused_dim(), cfg.mlp_width, cfg.mlp_width, cfg.attr_dim()}, 0.01,
            true};
}

nn::MlpSpec deform_spec(const DeformModelConfig& cfg) {
    return {{cfg.triplane.fused_dim() + cfg.fl_dim + cfg.fe_dim + 7, cfg.mlp_width,
             cfg.mlp_width, cfg.attr_dim()},
            0.01, true};
}

bool decodes(DecodeStrategy st, char attr) {
    switch (st) {
        case DecodeStrategy::ScaleRotShAlpha: return true;
        case DecodeStrategy::ShAlpha: return attr == 'h' || attr == 'a';
        case DecodeStrategy::RotScale: return attr == 'r' || attr == 's';
        case DecodeStrategy::RandomInit: return false;
    }
    return false;
}

}  // namespace

DeformModel DeformModel::init(const DeformModelConfig& cfg, Rng& rng) {
    if (cfg.anchors == 0) throw ValidationError("deform model: anchors must be positive");
    if (cfg.sh_degree < 0 || cfg.sh_degree > 3)
        throw ValidationError("deform model: sh_degree out of range");
    DeformModel m;
    m.cfg = cfg;
    auto grid = TriplaneGrid::init(cfg.triplane, rng);
    for (int p = 0; p < 3; ++p)
        for (std::size_t l = 0; l < cfg.triplane.levels; ++l)
            m.params.set(plane_leaf(p, l), grid.planes[std::size_t(p)][l]);

    nn::mlp_init(m.params, "can", canonical_spec(cfg), rng);
    nn::mlp_init(m.params, "def", deform_spec(cfg), rng);

    // Anchors sampled uniformly in an axis-aligned ellipsoid inside the
    // [-1,1]^3 scene bounds.
    m.anchors = Tensor({cfg.anchors, 3});
    std::uniform_real_distribution<double> u(-1, 1);
    Vec3 semi(0.7, 0.9, 0.7);
    for (std::size_t i = 0; i < cfg.anchors; ++i) {
        Vec3 p;
        do {
            p = Vec3(u(rng), u(rng), u(rng));
        } while (p.squaredNorm() > 1.0);
        for (int k = 0; k < 3; ++k) m.anchors.data[3 * i + std::size_t(k)] = p(k) * semi(k);
    }

    // Free per-primitive attributes for everything the strategy leaves
    // undecoded. Raw parameterization mirrors the decoder heads: scale is
    // exp(raw), opacity sigmoid(raw), rotation (1,0,0,0)+raw then normalized.
    bool random = cfg.strategy == DecodeStrategy::RandomInit;
    auto free_init = [&](Shape s) { return random ? randn(s, rng, 0.1) : Tensor::zeros(s); };
    if (!decodes(cfg.strategy, 'r')) m.params.set("free.r", free_init({cfg.anchors, 4}));
    if (!decodes(cfg.strategy, 's')) m.params.set("free.s", free_init({cfg.anchors, 3}));
    if (!decodes(cfg.strategy, 'a')) m.params.set("free.alpha", free_init({cfg.anchors, 1}));
    if (!decodes(cfg.strategy, 'h')) m.params.set("free.sh", free_init({cfg.anchors, cfg.sh_dim()}));
    return m;
}

SceneAttrExprs DeformModel::canonical_graph() const {
    namespace a = ad;
    std::size_t n = cfg.anchors;

    // Anchor plane coordinates, fixed constants: [-1,1] -> [0,1].
    Tensor uv_xy({n, 2}), uv_yz({n, 2}), uv_xz({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        double x = (anchors.data[3 * i] + 1) / 2, y = (anchors.data[3 * i + 1] + 1) / 2,
               z = (anchors.data[3 * i + 2] + 1) / 2;
        uv_xy.data[2 * i] = x;
        uv_xy.data[2 * i + 1] = y;
        uv_yz.data[2 * i] = y;
        uv_yz.data[2 * i + 1] = z;
        uv_xz.data[2 * i] = x;
        uv_xz.data[2 * i + 1] = z;
    }
    std::array<Tensor, 3> uvs = {uv_xy, uv_yz, uv_xz};

    // f_mu: per-plane levels coarse->fine, planes concatenated XY+YZ+XZ.
    std::vector<a::Expr> parts;
    for (int p = 0; p < 3; ++p) {
        a::Expr uv = a::constant(uvs[std::size_t(p)]);
        for (std::size_t l = 0; l < cfg.triplane.levels; ++l)
            parts.push_back(a::grid_sample(a::leaf(plane_leaf(p, l)), uv));
    }
    a::Expr fmu = a::concat(parts, 1);

    a::Expr raw = nn::mlp_apply("can", fmu, canonical_spec(cfg));
    std::size_t shd = cfg.sh_dim();

    SceneAttrExprs out;
    out.mu = a::add(a::constant(anchors), a::slice(raw, 1, 0, 3));

    Tensor ident({4}, {1, 0, 0, 0});
    if (decodes(cfg.strategy, 'r'))
        out.r_pre = a::add(a::slice(raw, 1, 3, 4), a::constant(ident));
    else
        out.r_pre = a::add(a::leaf("free.r"), a::constant(ident));
    out.r = a::normalize_rows(out.r_pre);

    out.s = a::exp(decodes(cfg.strategy, 's') ? a::slice(raw, 1, 7, 3) : a::leaf("free.s"));
    out.alpha = a::sigmoid(decodes(cfg.strategy, 'a') ? a::slice(raw, 1, 10, 1)
                                                      : a::leaf("free.alpha"));
    out.sh = decodes(cfg.strategy, 'h') ? a::slice(raw, 1, 11, shd) : a::leaf("free.sh");
    out.fmu = fmu;
    return out;
}

SceneAttrExprs DeformModel::deform_graph() const {
    namespace a = ad;
    SceneAttrExprs can = canonical_graph();
    std::size_t n = cfg.anchors, shd = cfg.sh_dim();

    a::Expr cond = a::concat({can.fmu, a::broadcast_rows(a::leaf("in.fl"), n),
                              a::broadcast_rows(a::leaf("in.fe"), n),
                              a::broadcast_rows(a::leaf("in.pose"), n)},
                             1);
    a::Expr deltas = nn::mlp_apply("def", cond, deform_spec(cfg));

    SceneAttrExprs out;
    out.mu = a::add(can.mu, a::slice(deltas, 1, 0, 3));
    // Delta applied before normalization so a zero delta reproduces the
    // canonical rotation bit for bit.
    out.r_pre = a::add(can.r_pre, a::slice(deltas, 1, 3, 4));
    out.r = a::normalize_rows(out.r_pre);
    out.s = a::clamp(a::add(can.s, a::slice(deltas, 1, 7, 3)), 1e-6, 1e6);
    out.alpha = a::clamp(a::add(can.alpha, a::slice(deltas, 1, 10, 1)), 0.0, 1.0);
    out.sh = a::add(can.sh, a::slice(deltas, 1, 11, shd));
    out.fmu = can.fmu;
    return out;
}

ad::Bindings DeformModel::frame_bindings(const DeformationInput& input) const {
    input.validate(cfg.fl_dim, cfg.fe_dim);
    Tensor fl({1, cfg.fl_dim}, std::vector<double>(input.f_l.begin(), input.f_l.end()));
    Tensor fe({1, cfg.fe_dim}, std::vector<double>(input.f_e.begin(), input.f_e.end()));
    Tensor pose({1, 7}, {input.R.w, input.R.x, input.R.y, input.R.z, input.T.x(), input.T.y(),
                         input.T.z()});
    return params.bindings_with({{"in.fl", fl}, {"in.fe", fe}, {"in.pose", pose}});
}

std::vector<GaussianPrimitive> attrs_to_scene(const Tensor& mu, const Tensor& r, const Tensor& s,
                                              const Tensor& alpha, const Tensor& sh) {
    std::size_t n = mu.rows();
    std::vector<GaussianPrimitive> scene(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& g = scene[i];
        g.mu = Vec3(mu.at2(i, 0), mu.at2(i, 1), mu.at2(i, 2));
        g.r = Quat{r.at2(i, 0), r.at2(i, 1), r.at2(i, 2), r.at2(i, 3)};
        g.s = Vec3(s.at2(i, 0), s.at2(i, 1), s.at2(i, 2));
        g.alpha = alpha.at2(i, 0);
        g.sh.assign(sh.data.begin() + std::ptrdiff_t(i * sh.cols()),
                    sh.data.begin() + std::ptrdiff_t((i + 1) * sh.cols()));
        g.validate();
    }
    return scene;
}

namespace {
std::vector<GaussianPrimitive> eval_scene(const SceneAttrExprs& e, const ad::Bindings& b) {
    auto vals = ad::evaluate_many({e.mu, e.r, e.s, e.alpha, e.sh}, b);
    return attrs_to_scene(vals[0], vals[1], vals[2], vals[3], vals[4]);
}
}  // namespace

std::vector<GaussianPrimitive> DeformModel::decode_canonical() const {
    return eval_scene(canonical_graph(), params.bindings());
}

std::vector<GaussianPrimitive> DeformModel::decode_deformed(const DeformationInput& input) const {
    return eval_scene(deform_graph(), frame_bindings(input));
}

SceneDeltas DeformModel::decode_deltas(const DeformationInput& input) const {
    auto can = decode_canonical();
    auto def = decode_deformed(input);
    SceneDeltas d;
    for (std::size_t i = 0; i < can.size(); ++i) {
        d.mu.push_back(def[i].mu - can[i].mu);
        d.r.push_back({def[i].r.w - can[i].r.w, def[i].r.x - can[i].r.x,
                       def[i].r.y - can[i].r.y, def[i].r.z - can[i].r.z});
        d.s.push_back(def[i].s - can[i].s);
        d.alpha.push_back(def[i].alpha - can[i].alpha);
        std::vector<double> dsh(can[i].sh.size());
        for (std::size_t k = 0; k < dsh.size(); ++k) dsh[k] = def[i].sh[k] - can[i].sh[k];
        d.sh.push_back(std::move(dsh));
    }
    return d;
}

std::map<std::string, Tensor> DeformModel::to_sections() const {
    std::map<std::string, Tensor> out = params.values;
    out["anchors"] = anchors;
    out["model.cfg"] =
        Tensor({9}, {double(cfg.triplane.levels), double(cfg.triplane.dim),
                     double(cfg.triplane.base_res), double(cfg.anchors), double(cfg.sh_degree),
                     double(cfg.fl_dim), double(cfg.fe_dim), double(cfg.mlp_width),
                     double(int(cfg.strategy))});
    return out;
}

DeformModel DeformModel::from_sections(const std::map<std::string, Tensor>& sections) {
    auto it = sections.find("model.cfg");
    if (it == sections.end()) throw ValidationError("checkpoint missing model.cfg");
    const auto& c = it->second.data;
    if (c.size() != 9) throw ValidationError("bad model.cfg section");
    DeformModel m;
    m.cfg.triplane.levels = std::size_t(c[0]);
    m.cfg.triplane.dim = std::size_t(c[1]);
    m.cfg.triplane.base_res = std::size_t(c[2]);
    m.cfg.anchors = std::size_t(c[3]);
    m.cfg.sh_degree = int(c[4]);
    m.cfg.fl_dim = std::size_t(c[5]);
    m.cfg.fe_dim = std::size_t(c[6]);
    m.cfg.mlp_width = std::size_t(c[7]);
    m.cfg.strategy = DecodeStrategy(int(c[8]));
    auto anchors_it = sections.find("anchors");
    if (anchors_it == sections.end()) throw ValidationError("checkpoint missing anchors");
    m.anchors = anchors_it->second;
    if (m.anchors.shape != Shape{m.cfg.anchors, 3})
        throw ValidationError("checkpoint anchors shape mismatch");
    for (const auto& [k, v] : sections)
        if (k != "anchors" && k != "model.cfg") m.params.set(k, v);
    return m;
}

}  // namespace splat
