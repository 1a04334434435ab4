#pragma once

#include <array>
#include <string>
#include <vector>

#include "splat/autodiff.hpp"
#include "splat/gaussian.hpp"
#include "splat/nn.hpp"

namespace splat {

/// Which canonical attributes are decoded from triplane features; the rest
/// are free per-primitive parameters. The position offset is always decoded.
enum class DecodeStrategy {
    ScaleRotShAlpha,  // "s,r,SH,alpha"
    ShAlpha,          // "SH,alpha" (default, best in the source ablation)
    RotScale,         // "r,s"
    RandomInit,       // nothing decoded; all four attributes free
};

DecodeStrategy parse_strategy(const std::string& name);
std::string strategy_name(DecodeStrategy s);

struct TriplaneConfig {
    std::size_t levels = 2;
    std::size_t dim = 8;
    std::size_t base_res = 64;

    std::size_t res_at(std::size_t level) const { return base_res << level; }
    std::size_t plane_dim() const { return levels * dim; }
    std::size_t fused_dim() const { return 3 * levels * dim; }
};

/// Three orthogonal multi-level feature planes over the unit cube; scene
/// coordinates in [-1,1]^3 map linearly onto it.
struct TriplaneGrid {
    TriplaneConfig cfg;
    std::array<std::vector<Tensor>, 3> planes;  // [XY,YZ,XZ][level], each [res,res,D]

    static TriplaneGrid init(const TriplaneConfig& cfg, Rng& rng, double stddev = 0.1);
    void validate() const;
};

/// Per-level bilinear interpolation, levels concatenated coarse to fine.
/// uv is clamped to [0,1]^2.
std::vector<double> interp_plane(const std::vector<Tensor>& levels, const Vec2& uv);

/// f_mu = f_XY + f_YZ + f_XZ concatenated in that fixed order.
std::vector<double> fuse_features(const std::vector<double>& fxy, const std::vector<double>& fyz,
                                  const std::vector<double>& fxz);

struct DeformationInput {
    std::vector<double> f_l;
    std::vector<double> f_e;
    Quat R;
    Vec3 T = Vec3::Zero();

    void validate(std::size_t fl_dim, std::size_t fe_dim) const;
};

struct SceneDeltas {
    std::vector<Vec3> mu;
    std::vector<std::array<double, 4>> r;
    std::vector<Vec3> s;
    std::vector<double> alpha;
    std::vector<std::vector<double>> sh;
};

/// Attribute-wise addition with range restoration: quaternion renormalized,
/// scales clamped above 1e-6, opacity clamped to [0,1]. Zero deltas leave the
/// scene bit-for-bit unchanged.
std::vector<GaussianPrimitive> apply_deformation(const std::vector<GaussianPrimitive>& scene,
                                                 const SceneDeltas& deltas);

struct DeformModelConfig {
    TriplaneConfig triplane;
    std::size_t anchors = 2000;
    int sh_degree = 1;
    std::size_t fl_dim = 32;
    std::size_t fe_dim = 8;
    std::size_t mlp_width = 128;  // decoders are 3-layer MLPs of this width
    DecodeStrategy strategy = DecodeStrategy::ShAlpha;

    std::size_t sh_dim() const { return 3 * std::size_t((sh_degree + 1) * (sh_degree + 1)); }
    std::size_t attr_dim() const { return 3 + 4 + 3 + 1 + sh_dim(); }
};

/// Expression handles for the per-primitive attribute tensors: mu [N,3],
/// r [N,4] (unit rows), s [N,3] (positive), alpha [N,1], sh [N,sh_dim].
struct SceneAttrExprs {
    ad::Expr mu, r, s, alpha, sh;
    ad::Expr r_pre;  // pre-normalization quaternion rows, for delta chaining
    ad::Expr fmu;    // fused per-anchor triplane features [N, 3*L*D]
};

/// Canonical field + deformation decoder over a triplane, with everything on
/// one expression graph so trainer gradients flow end to end.
struct DeformModel {
    DeformModelConfig cfg;
    nn::ParamStore params;  // planes, decoder weights, free attributes
    Tensor anchors;         // [N,3], fixed after init

    static DeformModel init(const DeformModelConfig& cfg, Rng& rng);

    /// Graph of the canonical attributes (no frame inputs).
    SceneAttrExprs canonical_graph() const;
    /// Graph of the deformed attributes; expects bound leaves "in.fl" [1,fl],
    /// "in.fe" [1,fe], "in.pose" [1,7] (unit quaternion then translation).
    SceneAttrExprs deform_graph() const;

    ad::Bindings frame_bindings(const DeformationInput& input) const;

    std::vector<GaussianPrimitive> decode_canonical() const;
    std::vector<GaussianPrimitive> decode_deformed(const DeformationInput& input) const;
    /// Deltas alone (deformed minus canonical pre-restoration), for the
    /// standalone apply_deformation path.
    SceneDeltas decode_deltas(const DeformationInput& input) const;

    std::map<std::string, Tensor> to_sections() const;
    static DeformModel from_sections(const std::map<std::string, Tensor>& sections);
};

/// Materializes evaluated attribute rows into primitives.
std::vector<GaussianPrimitive> attrs_to_scene(const Tensor& mu, const Tensor& r, const Tensor& s,
                                              const Tensor& alpha, const Tensor& sh);

}  // namespace splat
