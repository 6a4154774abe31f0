#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lively::motion {

using FrameMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ReprKind : std::uint8_t { DirVec3 = 0, Rot6d = 1 };

int dims_for(ReprKind kind);

struct JointLayout {
  std::vector<std::string> joint_names;
  std::vector<int> parents;  // -1 marks the root
  ReprKind repr_kind = ReprKind::DirVec3;

  int dims_per_joint() const { return dims_for(repr_kind); }
  int joint_count() const { return static_cast<int>(parents.size()); }

  // Throws LayoutMismatch unless parents form a single tree rooted at a -1 entry.
  void validate() const;

  // Same skeleton; names are not part of the identity.
  bool same_skeleton(const JointLayout& other) const {
    return parents == other.parents && repr_kind == other.repr_kind;
  }

  // Ten upper-body joints: root, spine, neck, head, right arm chain, left arm chain.
  static JointLayout upper_body(ReprKind kind = ReprKind::DirVec3);
};

// Motion clip stored as F rows of J*D channels (joint-major within a row).
struct PoseSequence {
  double fps = 15.0;
  JointLayout layout;
  FrameMatrix data;

  PoseSequence() = default;
  PoseSequence(double fps, JointLayout layout, FrameMatrix data);

  int frames() const { return static_cast<int>(data.rows()); }
  int channels() const { return static_cast<int>(data.cols()); }
  float at(int frame, int joint, int dim) const {
    return data(frame, joint * layout.dims_per_joint() + dim);
  }

  // Checks frame count, channel count and finiteness.
  void validate() const;

  bool operator==(const PoseSequence& other) const;
};

struct ClipWindow {
  int start_frame = 0;
  int length = 34;
  std::string source_id;
};

using Rot6d = std::array<double, 6>;

// R = R_{order[0]} * R_{order[1]} * R_{order[2]}; angles are (x, y, z) in degrees.
Eigen::Matrix3d euler_to_matrix(const Eigen::Vector3d& angles_deg, std::string_view order);

// First two columns of the rotation matrix, column-major.
Rot6d euler_to_rot6d(const Eigen::Vector3d& angles_deg, std::string_view order);

// Gram-Schmidt completion. Throws DegenerateRotation for near-zero or near-parallel inputs.
Eigen::Matrix3d rot6d_to_matrix(const Rot6d& r6);

Rot6d matrix_to_rot6d(const Eigen::Matrix3d& m);

// Linear interpolation per channel; rot6d joints are re-orthogonalized.
PoseSequence resample_fps(const PoseSequence& seq, double target_fps);

std::vector<ClipWindow> split_clips(int frame_count, int length, int stride, std::string_view source_id = {});
std::vector<ClipWindow> split_clips(const PoseSequence& seq, int length = 34, int stride = 30);

PoseSequence slice(const PoseSequence& seq, const ClipWindow& window);

// Concatenates clips, dropping the seed_overlap leading frames of every clip after the first.
PoseSequence stitch_clips(const std::vector<PoseSequence>& clips, int seed_overlap = 4);

void write_pose(const std::filesystem::path& path, const PoseSequence& seq);
PoseSequence read_pose(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_pose(const PoseSequence& seq);
PoseSequence decode_pose(const std::vector<std::uint8_t>& bytes);

}  // namespace lively::motion
