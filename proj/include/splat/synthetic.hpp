#pragma once

#include <vector>

#include "splat/head_sync.hpp"
#include "splat/trainer.hpp"

namespace splat {

struct SyntheticSceneSpec {
    std::size_t n_primitives = 300;
    std::size_t frames = 20;
    std::size_t width = 64, height = 64;
    double focal = 120.0;
    std::size_t fl_dim = 32, fe_dim = 8;
    double deform_amp = 0.15;  // jaw/brow position swing
    double pose_amp = 0.0;     // head rotation swing, radians
    std::size_t n_landmarks = 20;
    std::uint64_t seed = 1;
};

/// Toy head with checkable ground truth for every pipeline stage: an
/// ellipsoid shell of Gaussians with a jaw cluster driven by f_l and a brow
/// cluster driven by f_e, rendered under a known pose trajectory.
struct SyntheticDataset {
    SyntheticSceneSpec spec;
    CameraModel cam;
    std::vector<GaussianPrimitive> canonical;
    std::vector<std::size_t> jaw_idx, brow_idx, landmark_prims;
    std::vector<std::vector<GaussianPrimitive>> frame_scenes;  // deformed + posed
    std::vector<FrameSample> samples;                          // rendered targets + inputs
    std::vector<io::PoseRecord> poses;
    io::LandmarkTrack landmarks;  // projected landmark primitives, weight 1
    io::FeatureTrack fl_track, fe_track;
    io::FlowField flow;  // impulses at landmark pixels, frame-to-frame motion
    MorphableBasis basis;
    Tensor a_id;
};

SyntheticDataset gen_head_dataset(const SyntheticSceneSpec& spec);

/// Rigid object-to-camera transform of a scene: mu' = R mu + T, r' = q * r.
/// Scales, opacities and SH coefficients are carried through untouched.
std::vector<GaussianPrimitive> apply_pose(const std::vector<GaussianPrimitive>& scene,
                                          const io::PoseRecord& pose);

/// High-frequency displacement added only to the designated point ids
/// (alternating sign per frame, deterministic given the rng).
io::LandmarkTrack gen_jitter_track(const io::LandmarkTrack& clean,
                                   const std::vector<int>& jitter_ids, double amplitude,
                                   Rng& rng);

/// Axis-aligned boxes around each jittered point's trajectory, for
/// semantic_weighting region maps.
std::vector<Polygon> jitter_region_polygons(const io::LandmarkTrack& track,
                                            const std::vector<int>& jitter_ids,
                                            double margin = 2.0);

/// Smooth sinusoidal blendshape track in [0,1], for VQ harnesses.
std::vector<io::BlendshapeFrame> gen_blendshape_track(std::size_t frames, std::uint64_t seed);

/// Emits every artifact of the dataset into dir (formats per module docs)
/// plus a manifest with content hashes. Returns the manifest path.
std::string write_dataset(const std::string& dir, const SyntheticDataset& ds);

/// `name = fnv1a-hex` lines for each listed file (paths relative to dir).
void write_manifest(const std::string& path, const std::string& dir,
                    const std::vector<std::string>& files);

}  // namespace splat
