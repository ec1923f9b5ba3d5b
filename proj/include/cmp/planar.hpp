#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmp/trajectory.hpp"

namespace cmp {

// Mobile base with a planar arm: the base drives and yaws, the arm extends
// and swings. Failures are kinematic limit violations, not contacts.
struct PlanarState {
  double x = 0.0, y = 0.0, th = 0.0;  // base pose
  double v = 0.0;                     // forward speed
  double om = 0.0;                    // yaw rate
  double e = 0.5;                     // arm extension, m
  double al = 0.0;                    // arm lateral joint, rad
  double de = 0.0, dal = 0.0;         // joint rates

  bool finite() const {
    for (double f : {x, y, th, v, om, e, al, de, dal})
      if (!std::isfinite(f)) return false;
    return true;
  }
};

struct ActionBounds {
  double lin_acc = 2.0;  // m/s^2
  double yaw_acc = 6.0;  // rad/s^2
  double ext_acc = 1.0;  // m/s^2
  double lat_acc = 3.0;  // rad/s^2
};

struct FailureSpec {
  double v_max = 2.0;        // m/s
  double om_max = 3.0;       // rad/s
  double alpha_max = 1.2;    // rad
  double arena_half = 3.0;   // m, square arena
};

struct PlanarConfig {
  double dt = 0.02;
  ActionBounds bounds;
  FailureSpec limits;
  double e_lo = 0.0, e_hi = 1.0;  // mechanical stops on extension
};

using PlanarAction = std::array<double, 4>;  // (lin, yaw, ext, lat) accelerations

inline PlanarPose tool_pose(const PlanarState& s) {
  const double a = s.th + s.al;
  return {s.x + s.e * std::cos(a), s.y + s.e * std::sin(a), a};
}

inline bool planar_failed(const PlanarState& s, const FailureSpec& f) {
  if (!s.finite()) return true;
  return std::abs(s.v) > f.v_max || std::abs(s.om) > f.om_max || std::abs(s.al) > f.alpha_max ||
         std::abs(s.x) > f.arena_half || std::abs(s.y) > f.arena_half;
}

struct PlanarOutcome {
  PlanarState next;
  bool safe = true;
};

// Semi-implicit Euler: rates first, then poses with the updated rates.
// Out-of-range action components are clamped to their bounds.
inline PlanarOutcome planar_step(const PlanarState& s, const PlanarAction& a,
                                 const PlanarConfig& cfg) {
  if (cfg.dt <= 0.0) throw std::invalid_argument("planar_step: dt must be positive");
  const auto& b = cfg.bounds;
  const double av = std::clamp(a[0], -b.lin_acc, b.lin_acc);
  const double aw = std::clamp(a[1], -b.yaw_acc, b.yaw_acc);
  const double ae = std::clamp(a[2], -b.ext_acc, b.ext_acc);
  const double al = std::clamp(a[3], -b.lat_acc, b.lat_acc);

  PlanarState n = s;
  n.v += av * cfg.dt;
  n.om += aw * cfg.dt;
  n.de += ae * cfg.dt;
  n.dal += al * cfg.dt;
  n.th = wrap_pi(n.th + n.om * cfg.dt);
  n.x += n.v * std::cos(n.th) * cfg.dt;
  n.y += n.v * std::sin(n.th) * cfg.dt;
  n.e += n.de * cfg.dt;
  n.al += n.dal * cfg.dt;
  if (n.e < cfg.e_lo) {
    n.e = cfg.e_lo;
    n.de = 0.0;
  } else if (n.e > cfg.e_hi) {
    n.e = cfg.e_hi;
    n.de = 0.0;
  }
  return {n, !planar_failed(n, cfg.limits)};
}

// Pose-free observation: velocities and arm configuration. Position and
// heading stay out so the policy generalizes across the arena; the task
// enters through tool-relative goal windows.
inline std::vector<double> planar_features(const PlanarState& s) {
  return {s.v, s.om, s.e, s.al, s.de, s.dal};
}

inline constexpr int kPlanarFeatureDim = 6;

// --- key-value config for the limits ---

inline std::string format_planar_config(const PlanarConfig& c) {
  std::ostringstream os;
  os << "dt " << c.dt << "\n"
     << "lin_acc " << c.bounds.lin_acc << "\n"
     << "yaw_acc " << c.bounds.yaw_acc << "\n"
     << "ext_acc " << c.bounds.ext_acc << "\n"
     << "lat_acc " << c.bounds.lat_acc << "\n"
     << "v_max " << c.limits.v_max << "\n"
     << "om_max " << c.limits.om_max << "\n"
     << "alpha_max " << c.limits.alpha_max << "\n"
     << "arena_half " << c.limits.arena_half << "\n";
  return os.str();
}

inline PlanarConfig parse_planar_config(const std::string& text) {
  PlanarConfig c;
  std::istringstream is(text);
  std::string key;
  double val;
  while (is >> key >> val) {
    if (key == "dt") c.dt = val;
    else if (key == "lin_acc") c.bounds.lin_acc = val;
    else if (key == "yaw_acc") c.bounds.yaw_acc = val;
    else if (key == "ext_acc") c.bounds.ext_acc = val;
    else if (key == "lat_acc") c.bounds.lat_acc = val;
    else if (key == "v_max") c.limits.v_max = val;
    else if (key == "om_max") c.limits.om_max = val;
    else if (key == "alpha_max") c.limits.alpha_max = val;
    else if (key == "arena_half") c.limits.arena_half = val;
    else throw std::invalid_argument("planar config: unknown key '" + key + "'");
  }
  if (c.dt <= 0.0 || c.limits.v_max <= 0.0 || c.limits.om_max <= 0.0 ||
      c.limits.alpha_max <= 0.0 || c.limits.arena_half <= 0.0)
    throw std::invalid_argument("planar config: limits must be positive");
  return c;
}

// --- goal-tracking episodes over a source trajectory ---

struct TrackerConfig {
  PlanarConfig planar;
  int control_steps = 650;  // 13 s at 50 Hz
  int subsample = 4;        // 200 Hz goals consumed at 50 Hz
  int goal_stride = 50;     // keyframe spacing in source samples (0.25 s)
  int goal_k = 4;
  double start_e = 0.5;
};

inline constexpr int kGoalDim = 12;  // 4 keyframes x (x, y, yaw)

// Reward: dense tracking of the current source sample plus action and
// soft-limit penalties; failure adds a terminal penalty.
struct RewardWeights {
  double yaw = 0.5;
  double action_sq = 0.01;
  // The soft band's slope must beat the 0.5/rad yaw weight, or closing yaw
  // error with the lateral joint stays profitable all the way into its stop.
  double soft = 2.0;
  double soft_margin = 0.75;  // fraction of each hard limit where penalty starts
  double failure = 5.0;
  double e_lo = 0.1, e_hi = 0.9;
};

struct TrackerEnv {
  TrackerConfig cfg;
  RewardWeights rw;
  const Trajectory* traj = nullptr;
  PlanarState s;
  double gox = 0.0, goy = 0.0;  // goal-frame offset (source XY centroid)
  int t = 0;
  bool done = false;
  bool failed = false;

  // Goals are served in a frame recentered on the source's XY centroid, so a
  // multi-metre recording still fits the arena. The base spawns at the rig's
  // fixed heading with the tool on the first goal position; the opening yaw
  // gap is the source's own first yaw, so a rear-mirrored recording opens
  // with a half-turn the in-distribution data never demands.
  void reset(const Trajectory& source) {
    traj = &source;
    double cx = 0.0, cy = 0.0;
    for (const auto& q : source.pos) {
      cx += q[0];
      cy += q[1];
    }
    gox = cx / source.pos.size();
    goy = cy / source.pos.size();
    const PlanarPose g0 = planar_pose_at(source, 0);
    s = PlanarState{};
    s.e = cfg.start_e;
    s.x = g0.x - gox - s.e;
    s.y = g0.y - goy;
    t = 0;
    done = false;
    failed = false;
  }

  int source_index() const {
    return std::min(t * cfg.subsample, traj->length() - 1);
  }

  PlanarPose current_goal() const {
    PlanarPose p = planar_pose_at(*traj, source_index());
    p.x -= gox;
    p.y -= goy;
    return p;
  }

  std::vector<double> goal_window() const {
    // shifting the tool into the source frame is the same as shifting every
    // keyframe into the goal frame
    PlanarPose tp = tool_pose(s);
    tp.x += gox;
    tp.y += goy;
    return relative_keyframes(*traj, source_index(), tp, cfg.goal_stride, cfg.goal_k);
  }

  std::vector<double> features() const { return planar_features(s); }

  // returns the reward; done/failed updated in place
  double step(const PlanarAction& a) {
    if (done) throw std::logic_error("TrackerEnv: step after episode end");
    const PlanarOutcome out = planar_step(s, a, cfg.planar);
    s = out.next;
    ++t;

    const PlanarPose tool = tool_pose(s);
    const PlanarPose goal = current_goal();
    const double pos_err = std::hypot(tool.x - goal.x, tool.y - goal.y);
    const double yaw_err = std::abs(wrap_pi(tool.yaw - goal.yaw));
    double r = -pos_err - rw.yaw * yaw_err;
    double a2 = 0.0;
    for (double ai : a) a2 += ai * ai;
    r -= rw.action_sq * a2;
    const auto& lim = cfg.planar.limits;
    double soft = 0.0;
    soft += std::max(0.0, std::abs(s.v) - rw.soft_margin * lim.v_max);
    soft += std::max(0.0, std::abs(s.om) - rw.soft_margin * lim.om_max);
    soft += std::max(0.0, std::abs(s.al) - rw.soft_margin * lim.alpha_max);
    soft += std::max(0.0, rw.e_lo - s.e) + std::max(0.0, s.e - rw.e_hi);
    r -= rw.soft * soft;

    if (!out.safe) {
      failed = true;
      done = true;
      r -= rw.failure;
    } else if (t >= cfg.control_steps) {
      done = true;
    }
    return r;
  }
};

}  // namespace cmp
