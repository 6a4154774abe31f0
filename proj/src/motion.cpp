#include "lively/motion.hpp"

#include "lively/binary_io.hpp"
#include "lively/error.hpp"

#include <cmath>
#include <numbers>

namespace lively::motion {

namespace {

constexpr double kDegenerateNorm = 1e-8;
constexpr char kPoseMagic[4] = {'L', 'S', 'P', 'K'};
constexpr std::uint32_t kPoseVersion = 1;

Eigen::Matrix3d axis_rotation(char axis, double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  Eigen::Matrix3d r;
  switch (axis) {
    case 'X': case 'x': r << 1, 0, 0, 0, c, -s, 0, s, c; break;
    case 'Y': case 'y': r << c, 0, s, 0, 1, 0, -s, 0, c; break;
    case 'Z': case 'z': r << c, -s, 0, s, c, 0, 0, 0, 1; break;
    default: fail(Errc::BadRange, std::string("unknown rotation axis '") + axis + "'");
  }
  return r;
}

int axis_index(char axis) {
  switch (axis) {
    case 'X': case 'x': return 0;
    case 'Y': case 'y': return 1;
    case 'Z': case 'z': return 2;
    default: fail(Errc::BadRange, std::string("unknown rotation axis '") + axis + "'");
  }
}

void reorthogonalize_rot6d(PoseSequence& seq) {
  if (seq.layout.repr_kind != ReprKind::Rot6d) return;
  const int joints = seq.layout.joint_count();
  for (int f = 0; f < seq.frames(); ++f) {
    for (int j = 0; j < joints; ++j) {
      Rot6d r;
      for (int d = 0; d < 6; ++d) r[d] = seq.data(f, j * 6 + d);
      const Rot6d fixed = matrix_to_rot6d(rot6d_to_matrix(r));
      for (int d = 0; d < 6; ++d) seq.data(f, j * 6 + d) = static_cast<float>(fixed[d]);
    }
  }
}

}  // namespace

int dims_for(ReprKind kind) { return kind == ReprKind::Rot6d ? 6 : 3; }

void JointLayout::validate() const {
  const int n = joint_count();
  require(n > 0, Errc::LayoutMismatch, "layout has no joints");
  require(joint_names.empty() || static_cast<int>(joint_names.size()) == n, Errc::LayoutMismatch,
          "joint name count does not match parent count");
  int roots = 0;
  for (int j = 0; j < n; ++j) {
    const int p = parents[j];
    if (p == -1) {
      ++roots;
      continue;
    }
    require(p >= 0 && p < n && p != j, Errc::LayoutMismatch, "parent index out of range");
    // Walk to the root; a cycle would exceed n steps.
    int cur = j;
    for (int steps = 0; cur != -1; ++steps) {
      require(steps <= n, Errc::LayoutMismatch, "parent links contain a cycle");
      cur = parents[cur];
    }
  }
  require(roots == 1, Errc::LayoutMismatch, "layout must have exactly one root");
}

JointLayout JointLayout::upper_body(ReprKind kind) {
  JointLayout layout;
  layout.joint_names = {"root",       "spine",     "neck",       "head",     "r_shoulder",
                        "r_elbow",    "r_wrist",   "l_shoulder", "l_elbow",  "l_wrist"};
  layout.parents = {-1, 0, 1, 2, 2, 4, 5, 2, 7, 8};
  layout.repr_kind = kind;
  return layout;
}

PoseSequence::PoseSequence(double fps_, JointLayout layout_, FrameMatrix data_)
    : fps(fps_), layout(std::move(layout_)), data(std::move(data_)) {
  validate();
}

void PoseSequence::validate() const {
  require(fps > 0.0, Errc::BadRange, "fps must be positive");
  require(frames() >= 1, Errc::BadRange, "pose sequence needs at least one frame");
  require(channels() == layout.joint_count() * layout.dims_per_joint(), Errc::LayoutMismatch,
          "channel count does not match layout");
  require(data.allFinite(), Errc::BadRange, "pose values must be finite");
}

bool PoseSequence::operator==(const PoseSequence& other) const {
  if (fps != other.fps || !layout.same_skeleton(other.layout)) return false;
  if (data.rows() != other.data.rows() || data.cols() != other.data.cols()) return false;
  return std::memcmp(data.data(), other.data.data(), sizeof(float) * static_cast<std::size_t>(data.size())) == 0;
}

Eigen::Matrix3d euler_to_matrix(const Eigen::Vector3d& angles_deg, std::string_view order) {
  require(order.size() == 3, Errc::BadRange, "rotation order must name three axes");
  require(angles_deg.allFinite(), Errc::BadRange, "angles must be finite");
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  for (char axis : order) {
    r = r * axis_rotation(axis, angles_deg[axis_index(axis)] * std::numbers::pi / 180.0);
  }
  return r;
}

Rot6d euler_to_rot6d(const Eigen::Vector3d& angles_deg, std::string_view order) {
  return matrix_to_rot6d(euler_to_matrix(angles_deg, order));
}

Rot6d matrix_to_rot6d(const Eigen::Matrix3d& m) {
  return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

Eigen::Matrix3d rot6d_to_matrix(const Rot6d& r6) {
  const Eigen::Vector3d a1(r6[0], r6[1], r6[2]);
  const Eigen::Vector3d a2(r6[3], r6[4], r6[5]);
  const double n1 = a1.norm();
  if (!(n1 > kDegenerateNorm)) fail(Errc::DegenerateRotation, "first rot6d vector is near zero");
  const Eigen::Vector3d b1 = a1 / n1;
  const Eigen::Vector3d u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (!(n2 > kDegenerateNorm)) fail(Errc::DegenerateRotation, "rot6d vectors are near parallel");
  const Eigen::Vector3d b2 = u2 / n2;
  Eigen::Matrix3d m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

PoseSequence resample_fps(const PoseSequence& seq, double target_fps) {
  require(target_fps > 0.0, Errc::BadRange, "target fps must be positive");
  if (target_fps == seq.fps) return seq;
  const int frames = seq.frames();
  const int out_frames = std::max(1, static_cast<int>(std::lround(frames * target_fps / seq.fps)));
  FrameMatrix out(out_frames, seq.channels());
  for (int i = 0; i < out_frames; ++i) {
    const double pos = i * seq.fps / target_fps;
    if (frames == 1) {
      out.row(i) = seq.data.row(0);
      continue;
    }
    // The last segment extends linearly past the final frame.
    const int lo = std::min(static_cast<int>(std::floor(pos)), frames - 2);
    const double frac = pos - lo;
    for (int c = 0; c < seq.channels(); ++c) {
      const double a = seq.data(lo, c);
      const double b = seq.data(lo + 1, c);
      out(i, c) = static_cast<float>(a + (b - a) * frac);
    }
  }
  PoseSequence result(target_fps, seq.layout, std::move(out));
  reorthogonalize_rot6d(result);
  return result;
}

std::vector<ClipWindow> split_clips(int frame_count, int length, int stride, std::string_view source_id) {
  require(length >= 1, Errc::BadRange, "clip length must be positive");
  require(stride >= 1, Errc::BadRange, "stride must be positive");
  if (length > frame_count) {
    fail(Errc::ClipTooShort, "sequence of " + std::to_string(frame_count) + " frames is shorter than clip length " +
                                 std::to_string(length));
  }
  std::vector<ClipWindow> windows;
  for (int start = 0; start + length <= frame_count; start += stride) {
    windows.push_back({start, length, std::string(source_id)});
  }
  return windows;
}

std::vector<ClipWindow> split_clips(const PoseSequence& seq, int length, int stride) {
  return split_clips(seq.frames(), length, stride);
}

PoseSequence slice(const PoseSequence& seq, const ClipWindow& window) {
  require(window.start_frame >= 0 && window.length >= 1 && window.start_frame + window.length <= seq.frames(),
          Errc::BadRange, "clip window outside sequence");
  return PoseSequence(seq.fps, seq.layout, seq.data.middleRows(window.start_frame, window.length));
}

PoseSequence stitch_clips(const std::vector<PoseSequence>& clips, int seed_overlap) {
  require(!clips.empty(), Errc::EmptyBatch, "no clips to stitch");
  require(seed_overlap >= 0, Errc::BadRange, "seed overlap must be non-negative");
  const PoseSequence& first = clips.front();
  int total = first.frames();
  for (std::size_t i = 1; i < clips.size(); ++i) {
    const PoseSequence& c = clips[i];
    if (!c.layout.same_skeleton(first.layout) || c.fps != first.fps || c.channels() != first.channels()) {
      fail(Errc::LayoutMismatch, "clip " + std::to_string(i) + " differs in layout or fps");
    }
    require(c.frames() > seed_overlap, Errc::ClipTooShort, "clip shorter than the seed overlap");
    total += c.frames() - seed_overlap;
  }
  FrameMatrix out(total, first.channels());
  out.topRows(first.frames()) = first.data;
  int row = first.frames();
  for (std::size_t i = 1; i < clips.size(); ++i) {
    const int keep = clips[i].frames() - seed_overlap;
    out.middleRows(row, keep) = clips[i].data.bottomRows(keep);
    row += keep;
  }
  return PoseSequence(first.fps, first.layout, std::move(out));
}

std::vector<std::uint8_t> encode_pose(const PoseSequence& seq) {
  seq.validate();
  io::ByteWriter w;
  w.bytes(kPoseMagic, 4);
  w.u32(kPoseVersion);
  w.u8(static_cast<std::uint8_t>(seq.layout.repr_kind));
  w.f32(static_cast<float>(seq.fps));
  w.u32(static_cast<std::uint32_t>(seq.frames()));
  w.u32(static_cast<std::uint32_t>(seq.layout.joint_count()));
  w.u32(static_cast<std::uint32_t>(seq.layout.dims_per_joint()));
  for (int p : seq.layout.parents) w.i32(p);
  for (Eigen::Index i = 0; i < seq.data.size(); ++i) w.f32(seq.data.data()[i]);
  return std::move(w.buffer());
}

PoseSequence decode_pose(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kPoseMagic, 4) != 0) fail(Errc::BadMagic, "not a pose file");
  const std::uint32_t version = r.u32();
  if (version != kPoseVersion) fail(Errc::VersionUnsupported, "pose file version " + std::to_string(version));
  const std::uint8_t kind = r.u8();
  require(kind <= 1, Errc::BadRange, "unknown representation kind");
  const float fps = r.f32();
  const std::uint32_t frames = r.u32();
  const std::uint32_t joints = r.u32();
  const std::uint32_t dims = r.u32();
  JointLayout layout;
  layout.repr_kind = static_cast<ReprKind>(kind);
  require(static_cast<int>(dims) == layout.dims_per_joint(), Errc::LayoutMismatch,
          "dims per joint inconsistent with representation");
  r.need(static_cast<std::size_t>(joints) * 4);
  for (std::uint32_t j = 0; j < joints; ++j) {
    layout.parents.push_back(r.i32());
    layout.joint_names.push_back("joint" + std::to_string(j));
  }
  layout.validate();
  const std::size_t count = static_cast<std::size_t>(frames) * joints * dims;
  r.need(count * 4);
  FrameMatrix data(frames, static_cast<Eigen::Index>(joints * dims));
  for (std::size_t i = 0; i < count; ++i) data.data()[i] = r.f32();
  PoseSequence seq;
  seq.fps = fps;
  seq.layout = std::move(layout);
  seq.data = std::move(data);
  seq.validate();
  return seq;
}

void write_pose(const std::filesystem::path& path, const PoseSequence& seq) { io::write_file(path, encode_pose(seq)); }

PoseSequence read_pose(const std::filesystem::path& path) { return decode_pose(io::read_file(path)); }

}  // namespace lively::motion
