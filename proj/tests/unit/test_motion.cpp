#include "helpers.hpp"
#include "lively/binary_io.hpp"
#include "lively/motion.hpp"
#include "lively/rng.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

using namespace lively;
using namespace lively::motion;

namespace {

Eigen::Matrix3d axis_rotation(char axis, double deg) {
  const double r = deg * std::numbers::pi / 180.0;
  const Eigen::Vector3d a = axis == 'X' ? Eigen::Vector3d::UnitX() : axis == 'Y' ? Eigen::Vector3d::UnitY()
                                                                                   : Eigen::Vector3d::UnitZ();
  return Eigen::AngleAxisd(r, a).toRotationMatrix();
}

PoseSequence random_sequence(int frames, JointLayout layout, std::uint64_t seed, double fps = 15.0) {
  Rng rng(seed);
  FrameMatrix data(frames, layout.joint_count() * layout.dims_per_joint());
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = static_cast<float>(rng.normal());
  return PoseSequence(fps, std::move(layout), std::move(data));
}

}  // namespace

TEST_CASE("euler_to_rot6d identity and z quarter turn") {
  const Rot6d id = euler_to_rot6d({0, 0, 0}, "XYZ");
  const Rot6d want{1, 0, 0, 0, 1, 0};
  for (int i = 0; i < 6; ++i) CHECK(id[i] == doctest::Approx(want[i]).epsilon(1e-12));

  const Rot6d z90 = euler_to_rot6d({0, 0, 90}, "XYZ");
  const Rot6d want_z{0, 1, 0, -1, 0, 0};
  for (int i = 0; i < 6; ++i) CHECK(std::abs(z90[i] - want_z[i]) < 1e-12);
}

TEST_CASE("euler -> rot6d -> matrix matches direct axis-angle composition") {
  Rng rng(7);
  for (const char* order : {"XYZ", "ZXY", "YZX", "ZYX"}) {
    for (int trial = 0; trial < 50; ++trial) {
      const Eigen::Vector3d a(rng.uniform(-180, 180), rng.uniform(-90, 90), rng.uniform(-180, 180));
      const double by_axis[3] = {a.x(), a.y(), a.z()};
      Eigen::Matrix3d direct = Eigen::Matrix3d::Identity();
      for (int k = 0; k < 3; ++k) direct *= axis_rotation(order[k], by_axis[order[k] - 'X']);
      const Eigen::Matrix3d m = rot6d_to_matrix(euler_to_rot6d(a, order));
      CHECK((m - direct).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("rot6d_to_matrix Gram-Schmidt cases") {
  CHECK(rot6d_to_matrix({1, 0, 0, 0, 1, 0}).isApprox(Eigen::Matrix3d::Identity(), 1e-12));
  CHECK(rot6d_to_matrix({2, 0, 0, 0, 3, 0}).isApprox(Eigen::Matrix3d::Identity(), 1e-12));
  CHECK(rot6d_to_matrix({1, 0, 0, 1, 1, 0}).isApprox(Eigen::Matrix3d::Identity(), 1e-12));
  CHECK_ERRC(rot6d_to_matrix({0, 0, 0, 0, 1, 0}), Errc::DegenerateRotation);
  CHECK_ERRC(rot6d_to_matrix({1, 0, 0, 2, 0, 0}), Errc::DegenerateRotation);
}

TEST_CASE("rot6d_to_matrix is a proper rotation for random inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Rot6d r;
    for (double& v : r) v = rng.normal();
    const Eigen::Matrix3d m = rot6d_to_matrix(r);
    CHECK((m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-7);
    CHECK(m.determinant() == doctest::Approx(1.0).epsilon(1e-7));
  }
}

TEST_CASE("resample_fps") {
  const auto seq = random_sequence(60, JointLayout::upper_body(), 1, 30.0);
  CHECK(resample_fps(seq, 30.0) == seq);

  const auto half = resample_fps(seq, 15.0);
  REQUIRE(half.frames() == 30);
  for (int f = 0; f < 30; ++f) CHECK(half.data.row(f) == seq.data.row(2 * f));

  // Upsampling onto half steps keeps every interpolated ramp value exactly representable.
  FrameMatrix ramp(40, 30);
  for (int f = 0; f < 40; ++f) ramp.row(f).setConstant(static_cast<float>(0.25 * f));
  const auto r = resample_fps(PoseSequence(10.0, JointLayout::upper_body(), ramp), 20.0);
  CHECK(r.frames() == 80);
  double worst = 0.0;
  for (int f = 0; f < r.frames(); ++f) worst = std::max(worst, std::abs(r.data(f, 0) - 0.125 * f));
  CHECK(worst < 1e-9);
}

TEST_CASE("resample_fps keeps rot6d on the manifold") {
  JointLayout layout{{"a", "b"}, {-1, 0}, ReprKind::Rot6d};
  FrameMatrix data(10, 12);
  Rng rng(3);
  for (int f = 0; f < 10; ++f)
    for (int j = 0; j < 2; ++j) {
      const auto r6 = euler_to_rot6d({rng.uniform(-60, 60), rng.uniform(-60, 60), rng.uniform(-60, 60)}, "XYZ");
      for (int k = 0; k < 6; ++k) data(f, j * 6 + k) = static_cast<float>(r6[k]);
    }
  const auto out = resample_fps(PoseSequence(10.0, layout, data), 23.0);
  for (int f = 0; f < out.frames(); ++f)
    for (int j = 0; j < 2; ++j) {
      Eigen::Vector3d c0, c1;
      for (int k = 0; k < 3; ++k) {
        c0[k] = out.at(f, j, k);
        c1[k] = out.at(f, j, 3 + k);
      }
      CHECK(std::abs(c0.norm() - 1.0) < 1e-5);
      CHECK(std::abs(c1.norm() - 1.0) < 1e-5);
      CHECK(std::abs(c0.dot(c1)) < 1e-5);
    }
}

TEST_CASE("split_clips counts and errors") {
  CHECK(split_clips(34, 34, 7).size() == 1);
  const auto w = split_clips(100, 34, 10);
  REQUIRE(w.size() == 7);
  CHECK(w.back().start_frame == 60);
  const auto d = split_clips(68, 34, 34);
  REQUIRE(d.size() == 2);
  CHECK(d[1].start_frame == 34);
  CHECK_ERRC(split_clips(20, 34, 10), Errc::ClipTooShort);
}

TEST_CASE("split_clips covers the sequence when stride <= length") {
  for (int F : {34, 50, 97, 200})
    for (int stride : {1, 10, 30, 34}) {
      const auto windows = split_clips(F, 34, stride);
      CHECK(windows.size() == static_cast<std::size_t>((F - 34) / stride + 1));
      std::vector<int> hits(F, 0);
      for (const auto& w : windows)
        for (int f = w.start_frame; f < w.start_frame + w.length; ++f) ++hits[f];
      const int covered = F - ((F - 34) % stride);
      for (int f = 0; f < covered; ++f) CHECK(hits[f] >= 1);
    }
}

TEST_CASE("stitch_clips") {
  const auto a = random_sequence(34, JointLayout::upper_body(), 4);
  const auto b = random_sequence(34, JointLayout::upper_body(), 5);
  CHECK(stitch_clips({a}) == a);
  CHECK(stitch_clips({a, b}).frames() == 64);

  JointLayout other{{"a", "b"}, {-1, 0}, ReprKind::DirVec3};
  CHECK_ERRC(stitch_clips({a, random_sequence(34, other, 6)}), Errc::LayoutMismatch);
}

TEST_CASE("split with overlap then stitch reproduces the original") {
  const auto seq = random_sequence(34 + 30 * 4, JointLayout::upper_body(), 8);
  std::vector<PoseSequence> clips;
  for (const auto& w : split_clips(seq, 34, 30)) clips.push_back(slice(seq, w));
  REQUIRE(clips.size() == 5);
  const auto back = stitch_clips(clips, 4);
  CHECK(back == seq);
  // Boundary delta equals the in-clip delta at that index.
  const int boundary = 34;
  CHECK(back.data.row(boundary) - back.data.row(boundary - 1) == seq.data.row(boundary) - seq.data.row(boundary - 1));
}

TEST_CASE("pose file round trip") {
  TempDir dir("motion");
  FrameMatrix zeros = FrameMatrix::Zero(1, 30);
  const PoseSequence single(15.0, JointLayout::upper_body(), zeros);
  write_pose(dir.path / "z.lspk", single);
  CHECK(read_pose(dir.path / "z.lspk") == single);

  const auto seq = random_sequence(34, JointLayout::upper_body(), 9);
  const auto bytes = encode_pose(seq);
  CHECK(bytes.size() == 4 + 4 + 1 + 4 + 4 * 3 + 4 * 10 + 34 * 30 * 4);
  CHECK(decode_pose(bytes) == seq);
  CHECK(encode_pose(decode_pose(bytes)) == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_ERRC(decode_pose(bad), Errc::BadMagic);
  auto version = bytes;
  version[4] = 9;
  CHECK_ERRC(decode_pose(version), Errc::VersionUnsupported);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_ERRC(decode_pose(truncated), Errc::TruncatedFile);
}

TEST_CASE("layout validation") {
  CHECK_NOTHROW(JointLayout::upper_body().validate());
  JointLayout two_roots{{}, {-1, -1}, ReprKind::DirVec3};
  CHECK_ERRC(two_roots.validate(), Errc::LayoutMismatch);
  JointLayout cycle{{}, {-1, 2, 1}, ReprKind::DirVec3};
  CHECK_ERRC(cycle.validate(), Errc::LayoutMismatch);
  CHECK(JointLayout::upper_body().joint_count() == 10);
  CHECK(dims_for(ReprKind::Rot6d) == 6);
}
