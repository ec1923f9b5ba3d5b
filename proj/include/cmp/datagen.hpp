#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmp/rng.hpp"
#include "cmp/trajectory.hpp"

namespace cmp {

inline double deg(double d) { return d * M_PI / 180.0; }

struct PushParams {
  double dist_lo = 0.1, dist_hi = 0.5;        // XY step distance, m
  double dir_half_angle = deg(45.0);          // heading cone about +x
  double speed_lo = 0.01, speed_hi = 0.4;     // XY speed, m/s
  double z_lo = 0.02, z_hi = 0.6;             // height band, m
  double z_speed_lo = 0.01, z_speed_hi = 0.2; // m/s
  double roll_lim = deg(30.0);
  double pitch_lo = deg(15.0), pitch_hi = deg(60.0);
  double yaw_lim = deg(45.0);
  double ang_speed_lo = 0.01, ang_speed_hi = 1.0;  // rad/s
};

// Random-walk pushes: three independent piecewise-linear walks (XY, height,
// orientation), each segment at a freshly sampled speed, emitted at `rate`.
inline Trajectory gen_random_push(const PushParams& p, int T, double rate, Rng& rng) {
  if (T < 2 || rate <= 0.0) throw std::invalid_argument("gen_random_push: bad T or rate");
  Trajectory out;
  out.rate = rate;
  out.kind = TrajKind::kIdPush;
  out.pos.assign(T, {0.0, 0.0, 0.0});
  out.eul.assign(T, {0.0, 0.0, 0.0});

  // XY walk
  {
    double x = 0.0, y = 0.0;
    int t = 0;
    out.pos[0][0] = x;
    out.pos[0][1] = y;
    while (t < T - 1) {
      const double d = rng.uniform(p.dist_lo, p.dist_hi);
      const double phi = rng.uniform(-p.dir_half_angle, p.dir_half_angle);
      const double s = rng.uniform(p.speed_lo, p.speed_hi);
      const int n = std::max(1, static_cast<int>(std::lround(d / s * rate)));
      const double sx = d * std::cos(phi) / n, sy = d * std::sin(phi) / n;
      for (int i = 0; i < n && t < T - 1; ++i) {
        x += sx;
        y += sy;
        ++t;
        out.pos[t][0] = x;
        out.pos[t][1] = y;
      }
    }
  }

  // height walk
  {
    double z = rng.uniform(p.z_lo, p.z_hi);
    int t = 0;
    out.pos[0][2] = z;
    while (t < T - 1) {
      const double zt = rng.uniform(p.z_lo, p.z_hi);
      const double s = rng.uniform(p.z_speed_lo, p.z_speed_hi);
      const int n = std::max(1, static_cast<int>(std::lround(std::abs(zt - z) / s * rate)));
      const double dz = (zt - z) / n;
      for (int i = 0; i < n && t < T - 1; ++i) {
        z += dz;
        ++t;
        out.pos[t][2] = z;
      }
      z = zt;  // settle exactly on the target, shedding accumulated error
    }
  }

  // orientation walk: all three angles interpolate together, paced by the
  // largest angular distance so no rate exceeds the sampled speed
  {
    Vec3 e = {rng.uniform(-p.roll_lim, p.roll_lim), rng.uniform(p.pitch_lo, p.pitch_hi),
              rng.uniform(-p.yaw_lim, p.yaw_lim)};
    int t = 0;
    out.eul[0] = e;
    while (t < T - 1) {
      const Vec3 target = {rng.uniform(-p.roll_lim, p.roll_lim),
                           rng.uniform(p.pitch_lo, p.pitch_hi),
                           rng.uniform(-p.yaw_lim, p.yaw_lim)};
      const double w = rng.uniform(p.ang_speed_lo, p.ang_speed_hi);
      const double span = std::max({std::abs(target[0] - e[0]), std::abs(target[1] - e[1]),
                                    std::abs(target[2] - e[2])});
      const int n = std::max(1, static_cast<int>(std::lround(span / w * rate)));
      const Vec3 step = {(target[0] - e[0]) / n, (target[1] - e[1]) / n, (target[2] - e[2]) / n};
      for (int i = 0; i < n && t < T - 1; ++i) {
        for (int k = 0; k < 3; ++k) e[k] += step[k];
        ++t;
        out.eul[t] = e;
      }
      e = target;
    }
  }
  return out;
}

struct AugmentParams {
  double dx = 0.0;     // x translation, m
  double theta = 0.0;  // yaw about the pivot, rad
};

inline constexpr double kAugmentPivotX = -0.3;

// Deterministic core of the augmentation: center XY at the centroid, shift
// along x, then yaw the whole trajectory about the pivot. Heights are
// physical and stay untouched by centering.
inline Trajectory apply_augment(const Trajectory& in, const AugmentParams& a, TrajKind kind) {
  Trajectory out = in;
  out.kind = kind;
  double cx = 0.0, cy = 0.0;
  for (const auto& q : in.pos) {
    cx += q[0];
    cy += q[1];
  }
  cx /= in.pos.size();
  cy /= in.pos.size();
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  for (int i = 0; i < in.length(); ++i) {
    const double x = in.pos[i][0] - cx + a.dx - kAugmentPivotX;
    const double y = in.pos[i][1] - cy;
    out.pos[i][0] = c * x - s * y + kAugmentPivotX;
    out.pos[i][1] = s * x + c * y;
    out.eul[i][2] = wrap_pi(in.eul[i][2] + a.theta);
  }
  return out;
}

inline Trajectory augment_trajectory(const Trajectory& in, Rng& rng,
                                     AugmentParams* applied = nullptr) {
  AugmentParams a{rng.uniform(-0.2, 0.2), rng.uniform(-deg(30.0), deg(30.0))};
  if (applied) *applied = a;
  return apply_augment(in, a, TrajKind::kIdAugmented);
}

// Rear-mirror: the same pipeline, but the yaw lands in a narrow band around
// a half turn, flipping the task to the opposite side of the pivot.
inline Trajectory make_ood_geometry(const Trajectory& in, Rng& rng,
                                    AugmentParams* applied = nullptr) {
  AugmentParams a{rng.uniform(-0.2, 0.2), rng.uniform(deg(179.0), deg(181.0))};
  if (applied) *applied = a;
  return apply_augment(in, a, TrajKind::kOodGeometry);
}

struct DriftParams {
  double gap_lo = 1.0, gap_hi = 5.0;  // seconds between events
  double pos_std = 0.2;               // m, per axis
  double rot_std = deg(30.0);         // per Euler axis
};

struct DriftEvent {
  int step = 0;
  Vec3 pos_bias{};
  Vec3 eul_noise{};
};

// Discrete localization-drift events: each adds a persistent position bias
// and pre-multiplies a persistent rotation onto every later sample; effects
// accumulate across events. Events landing past the end are dropped.
inline Trajectory inject_sensor_drift(const Trajectory& in, const DriftParams& p, Rng& rng,
                                      std::vector<DriftEvent>* events = nullptr) {
  Trajectory out = in;
  out.kind = TrajKind::kOodSensor;
  if (events) events->clear();
  Vec3 bias{};
  Mat3 rot = rot_z(0.0);  // identity
  double t_event = rng.uniform(p.gap_lo, p.gap_hi);
  int next = static_cast<int>(std::lround(t_event * in.rate));
  int applied_from = in.length();
  std::vector<DriftEvent> evs;
  while (next < in.length()) {
    DriftEvent e;
    e.step = next;
    for (int k = 0; k < 3; ++k) e.pos_bias[k] = rng.normal(0.0, p.pos_std);
    for (int k = 0; k < 3; ++k) e.eul_noise[k] = rng.normal(0.0, p.rot_std);
    evs.push_back(e);
    t_event += rng.uniform(p.gap_lo, p.gap_hi);
    next = static_cast<int>(std::lround(t_event * in.rate));
  }
  std::size_t ei = 0;
  for (int i = 0; i < in.length(); ++i) {
    while (ei < evs.size() && evs[ei].step == i) {
      const auto& e = evs[ei];
      for (int k = 0; k < 3; ++k) bias[k] += e.pos_bias[k];
      rot = mat3_mul(euler_zyx_to_mat(e.eul_noise[0], e.eul_noise[1], e.eul_noise[2]), rot);
      applied_from = std::min(applied_from, i);
      ++ei;
    }
    if (i >= applied_from) {
      for (int k = 0; k < 3; ++k) out.pos[i][k] = in.pos[i][k] + bias[k];
      out.eul[i] = mat_to_euler_zyx(
          mat3_mul(rot, euler_zyx_to_mat(in.eul[i][0], in.eul[i][1], in.eul[i][2])));
    }
  }
  if (events) *events = std::move(evs);
  return out;
}

// --- source pool: fixed synthetic motifs standing in for recorded tasks ---

namespace detail {

inline double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

constexpr int kGraspTemplates = 6;
constexpr int kTossTemplates = 2;

// Smooth grasp-arc and toss motifs; paced well inside the push speed limits.
inline Trajectory make_template_motif(int which, int T, double rate) {
  Trajectory out;
  out.rate = rate;
  out.kind = TrajKind::kIdPush;
  out.pos.resize(T);
  out.eul.resize(T);
  const bool toss = which >= kGraspTemplates;
  for (int t = 0; t < T; ++t) {
    const double u = static_cast<double>(t) / (T - 1);
    if (!toss) {
      const int g = which;
      const double amp = 0.25 + 0.03 * g;
      out.pos[t] = {0.3 + 0.05 * g + 0.2 * std::sin(M_PI * u), amp * (2.0 * u - 1.0),
                    0.05 + 0.3 * std::sin(M_PI * u)};
      out.eul[t] = {deg(10.0) * std::sin(2.0 * M_PI * u + g), deg(15.0 + 20.0 * std::sin(M_PI * u)),
                    0.3 * (2.0 * u - 1.0)};
    } else {
      const double side = which == kGraspTemplates ? 1.0 : -1.0;
      const double lift = smoothstep((u - 0.7) / 0.3);
      out.pos[t] = {0.3 + 0.25 * u, 0.1 * side * std::sin(2.0 * M_PI * u), 0.05 + 0.5 * lift};
      out.eul[t] = {deg(15.0) * side * std::sin(M_PI * u), deg(15.0 + 30.0 * u),
                    side * (0.6 * lift - 0.3)};
    }
  }
  return out;
}

// toss motifs appear three times per cycle through the pool
inline int template_for_slot(int slot) {
  static const int pool[] = {0, 1, 2, 3, 4, 5, 6, 6, 6, 7, 7, 7};
  return pool[slot % (sizeof(pool) / sizeof(pool[0]))];
}

}  // namespace detail

inline constexpr int kDefaultTrajSteps = 2500;
inline constexpr double kDefaultTrajRate = 200.0;

// Deterministic dataset builder. ID keeps the 2:5 augmented-to-procedural
// ratio; both OOD kinds transform a same-seed ID build element-wise.
inline std::vector<Trajectory> build_dataset(const std::string& kind, int n, std::uint64_t seed,
                                             int T = kDefaultTrajSteps,
                                             double rate = kDefaultTrajRate) {
  if (n < 1) throw std::invalid_argument("build_dataset: n must be >= 1");
  std::vector<Trajectory> out;
  out.reserve(n);
  if (kind == "id") {
    const int n_aug = static_cast<int>(std::lround(n * 2.0 / 7.0));
    for (int i = 0; i < n_aug; ++i) {
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
      const auto motif = detail::make_template_motif(detail::template_for_slot(i), T, rate);
      out.push_back(augment_trajectory(motif, rng));
    }
    for (int i = n_aug; i < n; ++i) {
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
      out.push_back(gen_random_push(PushParams{}, T, rate, rng));
    }
  } else if (kind == "ood-geometry" || kind == "ood-sensor") {
    const auto base = build_dataset("id", n, seed, T, rate);
    for (int i = 0; i < n; ++i) {
      Rng rng(mix_seed(seed, 0x00D0000ULL + static_cast<std::uint64_t>(i)));
      out.push_back(kind == "ood-geometry" ? make_ood_geometry(base[i], rng)
                                           : inject_sensor_drift(base[i], DriftParams{}, rng));
    }
  } else {
    throw std::invalid_argument("build_dataset: unknown kind '" + kind +
                                "' (want id | ood-geometry | ood-sensor)");
  }
  for (int i = 0; i < n; ++i) {
    out[i].seed = seed;
    out[i].index = i;
  }
  return out;
}

inline void build_dataset_file(const std::string& path, const std::string& kind, int n,
                               std::uint64_t seed, int T = kDefaultTrajSteps,
                               double rate = kDefaultTrajRate) {
  save_trajectories(path, build_dataset(kind, n, seed, T, rate));
}

}  // namespace cmp
