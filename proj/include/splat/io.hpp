#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "splat/gaussian.hpp"
#include "splat/tensor.hpp"

namespace splat::io {

// ---------------------------------------------------------------------------
// Feature tracks ("SFTF"): header {magic, version u32, frames u32, dim u32},
// then frame-major little-endian f64.

struct FeatureTrack {
    std::size_t dim = 0;
    std::vector<std::vector<double>> frames;  // each of length dim
};

void write_sftf(const std::string& path, const FeatureTrack& track);
FeatureTrack read_sftf(const std::string& path);

// ---------------------------------------------------------------------------
// Dense flow fields ("SFLO"): header {magic, width u32, height u32, frames
// u32}, then per frame the u plane followed by the v plane, row-major f64.

struct FlowFrame {
    std::vector<double> u, v;  // width*height each
};

struct FlowField {
    std::size_t width = 0, height = 0;
    std::vector<FlowFrame> frames;
};

void write_sflo(const std::string& path, const FlowField& flow);
FlowField read_sflo(const std::string& path);

// ---------------------------------------------------------------------------
// Landmark / keypoint tracks: CSV `frame,point_id,x,y,weight`.

struct LandmarkObs {
    int point_id = 0;
    double x = 0, y = 0, weight = 1.0;
};

struct LandmarkTrack {
    std::vector<std::vector<LandmarkObs>> frames;
};

void write_landmarks_csv(const std::string& path, const LandmarkTrack& track);
LandmarkTrack read_landmarks_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Pose tracks: CSV `frame,qw,qx,qy,qz,tx,ty,tz,f`.

struct PoseRecord {
    Quat q;
    Vec3 t = Vec3::Zero();
    double f = 1.0;
};

void write_pose_csv(const std::string& path, const std::vector<PoseRecord>& poses);
std::vector<PoseRecord> read_pose_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Blendshape tracks: CSV with header `frame,b0..b51`.

using BlendshapeFrame = std::array<double, 52>;

void write_blendshapes_csv(const std::string& path, const std::vector<BlendshapeFrame>& track);
std::vector<BlendshapeFrame> read_blendshapes_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoint container ("SPCK" version 1): named f64 tensors with shapes.
// Every model in the pipeline serializes through this one format.

void write_checkpoint(const std::string& path, const std::map<std::string, Tensor>& sections);
std::map<std::string, Tensor> read_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Text config: `key = value` lines, `#` comments. Unknown keys are kept so
// callers can reject them explicitly when desired.

struct Config {
    std::map<std::string, std::string> kv;

    bool has(const std::string& k) const { return kv.count(k) != 0; }
    std::string get_str(const std::string& k, const std::string& dflt) const;
    double get_double(const std::string& k, double dflt) const;
    long get_int(const std::string& k, long dflt) const;
};

Config parse_config_text(const std::string& text);
Config read_config(const std::string& path);

// ---------------------------------------------------------------------------

/// Runs the writer against a temp path, then renames over the destination, so
/// failed runs never leave partial outputs.
void atomic_write(const std::string& path, const std::function<void(const std::string&)>& writer);

std::uint64_t fnv1a(const void* data, std::size_t len);
std::uint64_t hash_file(const std::string& path);

}  // namespace splat::io
