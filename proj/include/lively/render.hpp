#pragma once

#include "lively/motion.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lively::render {

using JointPositions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Forward kinematics with unit bones; the root sits at the origin.
// dirvec3: p_j = p_parent + d_j / |d_j|.
// rot6d: R_j = R_parent * L_j and p_j = p_parent + R_j * (0, 1, 0).
JointPositions forward_kinematics(const motion::PoseSequence& seq, int frame);

struct RenderOptions {
  int width = 256;
  int height = 256;
  int margin = 16;
};

// Orthographic view along -z onto the x-y plane; one framing for the whole sequence.
std::vector<std::vector<std::uint8_t>> render_frames(const motion::PoseSequence& seq, const RenderOptions& options = {});

nlohmann::json keyframes_json(const motion::PoseSequence& seq);

// Writes frame_00000.ppm ... and keyframes.json into dir. Returns the frame count.
int render_sequence(const motion::PoseSequence& seq, const std::filesystem::path& dir, const RenderOptions& options = {});

}  // namespace lively::render
