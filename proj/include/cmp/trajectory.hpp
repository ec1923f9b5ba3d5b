#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cmp {

inline double wrap_pi(double a) { return std::remainder(a, 2.0 * M_PI); }

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 3; ++j) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

inline Vec3 mat3_apply(const Mat3& r, const Vec3& v) {
  return {r[0] * v[0] + r[1] * v[1] + r[2] * v[2],
          r[3] * v[0] + r[4] * v[1] + r[5] * v[2],
          r[6] * v[0] + r[7] * v[1] + r[8] * v[2]};
}

inline Mat3 rot_x(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return {1, 0, 0, 0, c, -s, 0, s, c};
}
inline Mat3 rot_y(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return {c, 0, s, 0, 1, 0, -s, 0, c};
}
inline Mat3 rot_z(double t) {
  const double c = std::cos(t), s = std::sin(t);
  return {c, -s, 0, s, c, 0, 0, 0, 1};
}

// intrinsic Z-Y-X: yaw about z, then pitch about y, then roll about x
inline Mat3 euler_zyx_to_mat(double roll, double pitch, double yaw) {
  return mat3_mul(rot_z(yaw), mat3_mul(rot_y(pitch), rot_x(roll)));
}

inline Vec3 mat_to_euler_zyx(const Mat3& r) {
  const double sp = -r[6];
  if (sp >= 1.0 - 1e-12) return {0.0, M_PI / 2.0, -std::atan2(r[1], r[2])};
  if (sp <= -1.0 + 1e-12) return {0.0, -M_PI / 2.0, std::atan2(-r[1], -r[2])};
  return {std::atan2(r[7], r[8]), std::asin(sp), std::atan2(r[3], r[0])};
}

enum class TrajKind { kIdPush, kIdAugmented, kOodGeometry, kOodSensor };

inline std::string traj_kind_name(TrajKind k) {
  switch (k) {
    case TrajKind::kIdPush: return "id-push";
    case TrajKind::kIdAugmented: return "id-augmented";
    case TrajKind::kOodGeometry: return "ood-geometry";
    case TrajKind::kOodSensor: return "ood-sensor";
  }
  return "?";
}

inline TrajKind traj_kind_from_name(const std::string& s) {
  if (s == "id-push") return TrajKind::kIdPush;
  if (s == "id-augmented") return TrajKind::kIdAugmented;
  if (s == "ood-geometry") return TrajKind::kOodGeometry;
  if (s == "ood-sensor") return TrajKind::kOodSensor;
  throw std::invalid_argument("unknown trajectory kind: " + s);
}

// Goal-source trajectory: positions in meters, orientations as roll/pitch/yaw.
struct Trajectory {
  double rate = 200.0;
  TrajKind kind = TrajKind::kIdPush;
  std::uint64_t seed = 0;
  int index = 0;
  std::vector<Vec3> pos;
  std::vector<Vec3> eul;

  int length() const { return static_cast<int>(pos.size()); }
  double duration() const { return length() / rate; }
};

struct PlanarPose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

inline PlanarPose planar_pose_at(const Trajectory& t, int i) {
  return {t.pos[i][0], t.pos[i][1], wrap_pi(t.eul[i][2])};
}

// expresses p in the frame of ref
inline PlanarPose relative_pose(const PlanarPose& ref, const PlanarPose& p) {
  const double dx = p.x - ref.x, dy = p.y - ref.y;
  const double c = std::cos(ref.yaw), s = std::sin(ref.yaw);
  return {c * dx + s * dy, -s * dx + c * dy, wrap_pi(p.yaw - ref.yaw)};
}

// K future keyframes at t + stride, t + 2*stride, ..., clamped to the final
// sample, each as (x, y, yaw) relative to the given tool pose
inline std::vector<double> relative_keyframes(const Trajectory& traj, int t,
                                              const PlanarPose& tool, int stride, int k) {
  if (stride < 1 || k < 1) throw std::invalid_argument("relative_keyframes: stride/K must be >= 1");
  std::vector<double> out;
  out.reserve(3 * static_cast<std::size_t>(k));
  const int last = traj.length() - 1;
  for (int j = 1; j <= k; ++j) {
    const int idx = std::min(t + j * stride, last);
    const PlanarPose rel = relative_pose(tool, planar_pose_at(traj, idx));
    out.push_back(rel.x);
    out.push_back(rel.y);
    out.push_back(rel.yaw);
  }
  return out;
}

struct GoalWindow {
  int t = 0;
  std::vector<double> rel;  // 3*K values
};

// Window per sample, each relative to the trajectory's own pose at that step.
inline std::vector<GoalWindow> to_goal_windows(const Trajectory& traj, int stride = 50,
                                               int k = 4) {
  std::vector<GoalWindow> out;
  out.reserve(traj.pos.size());
  for (int t = 0; t < traj.length(); ++t)
    out.push_back({t, relative_keyframes(traj, t, planar_pose_at(traj, t), stride, k)});
  return out;
}

// --- dataset files: one JSON object per line under a version header ---

inline constexpr const char* kTrajsetFormat = "cmp-trajset-v1";

inline void save_trajectories(const std::string& path, const std::vector<Trajectory>& trajs) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << nlohmann::json{{"format", kTrajsetFormat}}.dump() << '\n';
  for (const auto& t : trajs) {
    nlohmann::json j{
        {"meta",
         {{"rate", t.rate},
          {"T", t.length()},
          {"kind", traj_kind_name(t.kind)},
          {"seed", t.seed},
          {"index", t.index}}},
        {"pos", t.pos},
        {"eul", t.eul}};
    f << j.dump() << '\n';
  }
  if (!f) throw std::runtime_error("short write to " + path);
}

inline std::vector<Trajectory> load_trajectories(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty dataset file");
  const auto header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != kTrajsetFormat)
    throw std::runtime_error(path + ": not a " + std::string(kTrajsetFormat) + " file");
  std::vector<Trajectory> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error(path + ": malformed record");
    Trajectory t;
    const auto& meta = j.at("meta");
    t.rate = meta.at("rate").get<double>();
    t.kind = traj_kind_from_name(meta.at("kind").get<std::string>());
    t.seed = meta.at("seed").get<std::uint64_t>();
    t.index = meta.at("index").get<int>();
    t.pos = j.at("pos").get<std::vector<Vec3>>();
    t.eul = j.at("eul").get<std::vector<Vec3>>();
    if (t.pos.size() != t.eul.size() ||
        t.length() != meta.at("T").get<int>())
      throw std::runtime_error(path + ": record length fields disagree");
    for (const auto& p : t.pos)
      for (double v : p)
        if (!std::isfinite(v)) throw std::runtime_error(path + ": non-finite sample");
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace cmp
