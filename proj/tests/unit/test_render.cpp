#include "helpers.hpp"
#include "lively/render.hpp"

#include <fstream>
#include <sstream>

using namespace lively;
using namespace lively::motion;

namespace {

PoseSequence straight_up(int frames) {
  const auto layout = JointLayout::upper_body();
  FrameMatrix data(frames, 30);
  for (int f = 0; f < frames; ++f)
    for (int j = 0; j < 10; ++j) {
      data(f, j * 3 + 0) = 0.0f;
      data(f, j * 3 + 1) = 2.0f;  // unnormalized on purpose
      data(f, j * 3 + 2) = 0.0f;
    }
  return PoseSequence(15.0, layout, data);
}

}  // namespace

TEST_CASE("forward kinematics with direction vectors") {
  const auto seq = straight_up(2);
  const auto pos = render::forward_kinematics(seq, 0);
  REQUIRE(pos.rows() == 10);
  CHECK(pos.row(0).norm() == 0.0);
  // Depth along the parent chain gives the height.
  for (int j = 0; j < 10; ++j) {
    int depth = 0;
    for (int p = seq.layout.parents[j]; p >= 0; p = seq.layout.parents[p]) ++depth;
    CHECK(pos(j, 1) == doctest::Approx(static_cast<double>(depth)));
    CHECK(pos(j, 0) == 0.0);
  }
}

TEST_CASE("forward kinematics with rot6d") {
  JointLayout layout{{"root", "a", "b"}, {-1, 0, 1}, ReprKind::Rot6d};
  FrameMatrix data(1, 18);
  const auto id = euler_to_rot6d({0, 0, 0}, "XYZ");
  const auto z90 = euler_to_rot6d({0, 0, 90}, "XYZ");
  for (int k = 0; k < 6; ++k) {
    data(0, k) = static_cast<float>(id[k]);
    data(0, 6 + k) = static_cast<float>(z90[k]);
    data(0, 12 + k) = static_cast<float>(z90[k]);
  }
  const auto pos = render::forward_kinematics(PoseSequence(15.0, layout, data), 0);
  // R_a = Rz90 sends e_y to -e_x; R_b = Rz180 sends it to -e_y.
  CHECK((pos.row(1) - Eigen::RowVector3d(-1, 0, 0)).norm() < 1e-6);
  CHECK((pos.row(2) - Eigen::RowVector3d(-1, -1, 0)).norm() < 1e-6);
}

TEST_CASE("render frames are PPM images") {
  const auto seq = straight_up(3);
  const auto images = render::render_frames(seq, {64, 48, 4});
  REQUIRE(images.size() == 3);
  const std::string header = "P6\n64 48\n255\n";
  CHECK(images[0].size() == header.size() + 64 * 48 * 3);
  CHECK(std::string(images[0].begin(), images[0].begin() + static_cast<long>(header.size())) == header);
  CHECK(images[0] == images[1]);
  CHECK_ERRC(render::render_frames(seq, {8, 8, 4}), Errc::BadRange);
}

TEST_CASE("render_sequence writes frames and keyframes") {
  TempDir dir("render");
  const auto seq = straight_up(4);
  CHECK(render::render_sequence(seq, dir.path) == 4);
  CHECK(std::filesystem::exists(dir.path / "frame_00000.ppm"));
  CHECK(std::filesystem::exists(dir.path / "frame_00003.ppm"));
  std::ifstream in(dir.path / "keyframes.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j["fps"] == 15.0);
  CHECK(j["repr"] == "dirvec3");
  CHECK(j["joints"].size() == 10);
  CHECK(j["parents"][0] == -1);
  REQUIRE(j["frames"].size() == 4);
  CHECK(j["frames"][0].size() == 10);
  CHECK(j["frames"][0][3].size() == 3);
}
