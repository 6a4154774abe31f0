#include "lively/render.hpp"

#include "lively/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

namespace lively::render {

namespace {

struct Frame {
  Frame(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  void plot(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }

  void line(int x0, int y0, int x1, int y1) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      plot(x0, y0, 230, 230, 230);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  std::vector<std::uint8_t> ppm() const {
    const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), rgb.begin(), rgb.end());
    return out;
  }

  int width, height;
  std::vector<std::uint8_t> rgb;
};

// Parents before children.
std::vector<int> topological_order(const motion::JointLayout& layout) {
  std::vector<int> order;
  std::vector<bool> done(layout.parents.size(), false);
  while (order.size() < layout.parents.size()) {
    for (std::size_t j = 0; j < layout.parents.size(); ++j) {
      const int p = layout.parents[j];
      if (!done[j] && (p < 0 || done[static_cast<std::size_t>(p)])) {
        done[j] = true;
        order.push_back(static_cast<int>(j));
      }
    }
  }
  return order;
}

}  // namespace

JointPositions forward_kinematics(const motion::PoseSequence& seq, int frame) {
  require(frame >= 0 && frame < seq.frames(), Errc::BadIndex, "frame out of range");
  const auto& layout = seq.layout;
  layout.validate();
  const int J = layout.joint_count();
  JointPositions pos = JointPositions::Zero(J, 3);
  std::vector<Eigen::Matrix3d> rot(static_cast<std::size_t>(J), Eigen::Matrix3d::Identity());
  for (int j : topological_order(layout)) {
    const int p = layout.parents[j];
    if (layout.repr_kind == motion::ReprKind::DirVec3) {
      if (p < 0) continue;
      Eigen::Vector3d d(seq.at(frame, j, 0), seq.at(frame, j, 1), seq.at(frame, j, 2));
      const double n = d.norm();
      require(n > 1e-12, Errc::ZeroVector, "zero bone direction");
      pos.row(j) = pos.row(p) + (d / n).transpose();
    } else {
      motion::Rot6d r6;
      for (int k = 0; k < 6; ++k) r6[k] = seq.at(frame, j, k);
      const Eigen::Matrix3d local = motion::rot6d_to_matrix(r6);
      if (p < 0) {
        rot[j] = local;
        continue;
      }
      rot[j] = rot[p] * local;
      pos.row(j) = pos.row(p) + (rot[j] * Eigen::Vector3d::UnitY()).transpose();
    }
  }
  return pos;
}

std::vector<std::vector<std::uint8_t>> render_frames(const motion::PoseSequence& seq, const RenderOptions& o) {
  require(o.width > 2 * o.margin && o.height > 2 * o.margin, Errc::BadRange, "image too small for its margin");
  std::vector<JointPositions> all;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (int f = 0; f < seq.frames(); ++f) {
    all.push_back(forward_kinematics(seq, f));
    xmin = std::min(xmin, all.back().col(0).minCoeff());
    xmax = std::max(xmax, all.back().col(0).maxCoeff());
    ymin = std::min(ymin, all.back().col(1).minCoeff());
    ymax = std::max(ymax, all.back().col(1).maxCoeff());
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-9});
  const double scale = std::min(o.width, o.height) - 2.0 * o.margin;
  const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
  auto px = [&](double x) { return static_cast<int>(std::lround(0.5 * o.width + (x - cx) / span * scale)); };
  auto py = [&](double y) { return static_cast<int>(std::lround(0.5 * o.height - (y - cy) / span * scale)); };

  std::vector<std::vector<std::uint8_t>> images;
  for (const auto& pos : all) {
    Frame img(o.width, o.height);
    for (int j = 0; j < seq.layout.joint_count(); ++j) {
      const int p = seq.layout.parents[j];
      if (p >= 0) img.line(px(pos(p, 0)), py(pos(p, 1)), px(pos(j, 0)), py(pos(j, 1)));
    }
    for (int j = 0; j < seq.layout.joint_count(); ++j)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) img.plot(px(pos(j, 0)) + dx, py(pos(j, 1)) + dy, 240, 80, 60);
    images.push_back(img.ppm());
  }
  return images;
}

nlohmann::json keyframes_json(const motion::PoseSequence& seq) {
  nlohmann::json frames = nlohmann::json::array();
  for (int f = 0; f < seq.frames(); ++f) {
    const JointPositions pos = forward_kinematics(seq, f);
    nlohmann::json joints = nlohmann::json::array();
    for (int j = 0; j < pos.rows(); ++j) joints.push_back({pos(j, 0), pos(j, 1), pos(j, 2)});
    frames.push_back(std::move(joints));
  }
  return {{"fps", seq.fps},
          {"repr", seq.layout.repr_kind == motion::ReprKind::DirVec3 ? "dirvec3" : "rot6d"},
          {"joints", seq.layout.joint_names},
          {"parents", seq.layout.parents},
          {"frames", frames}};
}

int render_sequence(const motion::PoseSequence& seq, const std::filesystem::path& dir, const RenderOptions& options) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, Errc::Io, "cannot create " + dir.string());
  const auto images = render_frames(seq, options);
  char name[32];
  for (std::size_t f = 0; f < images.size(); ++f) {
    std::snprintf(name, sizeof name, "frame_%05zu.ppm", f);
    std::ofstream out(dir / name, std::ios::binary);
    out.write(reinterpret_cast<const char*>(images[f].data()), static_cast<std::streamsize>(images[f].size()));
    require(static_cast<bool>(out), Errc::Io, "cannot write " + (dir / name).string());
  }
  std::ofstream out(dir / "keyframes.json", std::ios::binary);
  out << keyframes_json(seq).dump(1) << '\n';
  require(static_cast<bool>(out), Errc::Io, "cannot write keyframes.json");
  return static_cast<int>(images.size());
}

}  // namespace lively::render
