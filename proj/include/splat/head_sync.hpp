#pragma once

#include <vector>

#include "splat/gaussian.hpp"
#include "splat/io.hpp"
#include "splat/tensor.hpp"

namespace splat {

/// Low-dimensional morphable head: shape(a_id, a_exp) = mean + Id*a_id +
/// Exp*a_exp, with a designated landmark subset.
struct MorphableBasis {
    Tensor mean;       // [V,3]
    Tensor id_basis;   // [3V, k_id]
    Tensor exp_basis;  // [3V, k_exp]
    std::vector<std::size_t> landmark_indices;

    std::size_t n_vertices() const { return mean.ndim() == 2 ? mean.shape[0] : 0; }
    std::size_t k_id() const { return id_basis.cols(); }
    std::size_t k_exp() const { return exp_basis.cols(); }
    void validate() const;

    /// Landmark vertex positions for the given coefficients.
    std::vector<Vec3> landmarks_3d(const Tensor& a_id, const Tensor& a_exp) const;
};

struct PoseFitConfig {
    int iters = 300;
    double lr = 1e-2;
    bool fit_expression = true;
    Vec2 principal = Vec2::Zero();
};

/// Pinhole projection of the morphable landmarks under pose (R,T).
/// Throws when any landmark lands behind the camera.
std::vector<Vec2> project_landmarks(const MorphableBasis& basis, const Tensor& a_id,
                                    const Tensor& a_exp, double f, const Quat& R, const Vec3& T,
                                    const Vec2& principal);

struct FrameFit {
    io::PoseRecord pose;
    Tensor a_exp;
    double initial_err = 0, final_err = 0;  // weighted mean squared px error
};

/// Per-frame Adam fit of (R, T[, a_exp]) with halving backtracking, so the
/// residual never increases.
FrameFit fit_frame_pose(const MorphableBasis& basis, const Tensor& a_id,
                        const std::vector<io::LandmarkObs>& obs, double f,
                        const io::PoseRecord& init, const Tensor& a_exp_init,
                        const PoseFitConfig& cfg);

/// Data-driven initial pose guess (centroid back-projection + spread depth).
io::PoseRecord init_pose_guess(const MorphableBasis& basis, const Tensor& a_id,
                               const std::vector<io::LandmarkObs>& obs, double f,
                               const Vec2& principal);

std::vector<FrameFit> refine_pose(const io::LandmarkTrack& track, const MorphableBasis& basis,
                                  const Tensor& a_id, double f,
                                  const std::vector<io::PoseRecord>& init,
                                  const PoseFitConfig& cfg);

struct FocalSearchResult {
    double f_opt = 0;
    std::vector<double> mse;  // one entry per candidate
};

/// Exhaustive candidate search; poses are re-initialized per candidate.
FocalSearchResult search_focal(const io::LandmarkTrack& track, const MorphableBasis& basis,
                               const Tensor& a_id, const std::vector<double>& candidates,
                               const PoseFitConfig& cfg);

// ---------------------------------------------------------------------------
// Stable keypoints from flow.

struct PixelKey {
    std::size_t x = 0, y = 0;
};

/// |5-point Laplacian| of the flow magnitude, replicated borders.
std::vector<double> flow_laplacian_abs(const io::FlowFrame& frame, std::size_t width,
                                       std::size_t height);

/// Pixels whose |Laplacian of flow magnitude| exceeds theta.
std::vector<PixelKey> select_keypoints(const io::FlowFrame& frame, std::size_t width,
                                       std::size_t height, double theta);

/// Adaptive default threshold: the 95th percentile of |L| over the frame.
double adaptive_flow_threshold(const io::FlowFrame& frame, std::size_t width,
                               std::size_t height);

// ---------------------------------------------------------------------------
// Semantic weighting.

using Polygon = std::vector<Vec2>;

inline constexpr double kSemanticWeight = 0.1;

bool point_in_polygon(const Vec2& p, const Polygon& poly);

/// Points inside any region polygon get weight gamma; everything else keeps
/// weight 1. Positions are never altered.
std::vector<io::LandmarkObs> semantic_weighting(const std::vector<io::LandmarkObs>& keypoints,
                                                const std::vector<Polygon>& regions,
                                                double gamma = kSemanticWeight);

// ---------------------------------------------------------------------------
// Two-stage bundle adjustment over weighted keypoint tracks.

struct BundleConfig {
    int stage1_iters = 400;
    int stage2_iters = 400;
    double stage1_lr = 1e-2;
    double stage2_lr = 1e-3;
    double f = 500.0;
    Vec2 principal = Vec2::Zero();
    std::uint64_t seed = 1;
};

struct BundleResult {
    std::vector<Vec3> points;
    std::vector<io::PoseRecord> poses;
    std::vector<double> residual_trace;  // per accepted iteration
    double stage1_residual = 0, stage2_residual = 0;
};

/// Stage 1 fits randomly initialized 3D points against fixed poses; stage 2
/// jointly refines points and poses. Residuals are weighted sums of plain
/// reprojection norms and never increase across accepted steps.
BundleResult bundle_adjust(const io::LandmarkTrack& tracks,
                           const std::vector<io::PoseRecord>& init_poses,
                           const BundleConfig& cfg);

/// Moving-average smoothing; rotations averaged in sign-aligned quaternion
/// space. Window 1 is the identity.
std::vector<io::PoseRecord> smooth_poses(const std::vector<io::PoseRecord>& track, int window);

// ---------------------------------------------------------------------------
// Evaluation helpers (gauge alignment and error metrics).

/// Geodesic angle between two rotations, radians.
double rotation_geodesic(const Mat3& a, const Mat3& b);

struct SimilarityTransform {
    double scale = 1.0;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return scale * (R * p) + t; }
};

/// Least-squares similarity aligning src onto dst.
SimilarityTransform align_similarity(const std::vector<Vec3>& src,
                                     const std::vector<Vec3>& dst);

}  // namespace splat
