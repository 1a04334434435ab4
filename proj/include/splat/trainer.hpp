#pragma once

#include <string>
#include <vector>

#include "splat/adam.hpp"
#include "splat/losses.hpp"
#include "splat/rasterizer.hpp"
#include "splat/triplane.hpp"

namespace splat {

struct TrainingConfig {
    std::size_t stage1_steps = 2000;
    std::size_t stage2_steps = 2000;
    LossWeights stage1{1.0, 0.1, 0.1};
    double lpips_stage2 = 0.5;  // must exceed stage1.lpips
    AdamHyper adam{1e-2, 0.9, 0.999, 1e-8};
    std::uint64_t seed = 1;

    void validate() const;
    LossWeights stage2_weights() const {
        return {stage1.l1, lpips_stage2, stage1.perceptual};
    }
};

struct FrameSample {
    Image target;
    CameraModel cam;
    DeformationInput input;
    std::size_t index = 0;
};

double loss_static(const Image& rendered, const Image& target, const TrainingConfig& cfg);
double loss_dynamic(const Image& rendered, const Image& target, const TrainingConfig& cfg);

struct TrainLogEntry {
    std::size_t step = 0;
    int stage = 1;
    double l1 = 0, perc = 0, total = 0;
};

void write_loss_log_csv(const std::string& path, const std::vector<TrainLogEntry>& log);

struct TrainResult {
    DeformModel model;
    std::vector<TrainLogEntry> log;
};

/// Stage 1 fits the canonical field against the static targets; stage 2
/// optimizes the full deformable model per frame. Deterministic given the
/// seed. A non-finite loss aborts with the offending step in the message.
TrainResult train_two_stage(const std::vector<FrameSample>& dataset, DeformModel model,
                            const TrainingConfig& cfg);

/// One rendered frame of the deformable model under a frame's inputs.
Image render_frame(const DeformModel& model, const FrameSample& frame);

}  // namespace splat
