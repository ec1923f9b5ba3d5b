#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cmp/planar.hpp"
#include "cmp/policy.hpp"
#include "cmp/rng.hpp"
#include "cmp/shield.hpp"
#include "cmp/stats.hpp"
#include "cmp/train.hpp"
#include "cmp/trajectory.hpp"

namespace cmp {

// Evaluation knobs shared by eval, sweep, and ablate. Latency measurement is
// opt-in: with it off the latency fields stay 0 and a report's CSV bytes are
// a pure function of (checkpoint, dataset, seed). Start-pose jitter is what a
// seed randomizes at evaluation time; inference itself is deterministic.
struct EvalOptions {
  double radius = 2.0;
  ShieldMode mode = ShieldMode::kCmp;
  int episodes = 200;
  bool measure_latency = false;
  double jitter_xy = 0.05;   // +- metres on the start position
  double jitter_yaw = 0.1;   // +- radians on the start heading
};

// One row of the metrics table. Position/yaw errors pool the steps of
// surviving episodes only; a failed episode counts against SR and nothing
// else. `has_errors` gates printing (suppressed below 30% survival), while
// e_p_m/e_r_rad stay NaN whenever no episode survived. `incomplete` marks an
// ablation variant whose training run failed.
struct MetricsReport {
  std::string method;
  std::string dataset;
  double radius = 0.0;
  std::string seeds;
  double sr_pct = 0.0;
  bool has_errors = false;
  double e_p_m = std::numeric_limits<double>::quiet_NaN();
  double e_r_rad = std::numeric_limits<double>::quiet_NaN();
  double lat_med_us = 0.0;
  double lat_p95_us = 0.0;
  double lat_net_med_us = 0.0;     // network share of the median call
  double lat_shield_med_us = 0.0;  // projection share of the median call
  long long episodes = 0;
  bool incomplete = false;
};

namespace detail {

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string seed_list(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(seeds[i]);
  }
  return s;
}

}  // namespace detail

// Runs `opt.episodes` tracking episodes against the dataset (cycled in order)
// and aggregates survival, tracking error, and per-call inference latency.
inline MetricsReport evaluate(const PolicyBundle& b, const std::vector<Trajectory>& dataset,
                              const TrackerConfig& tracker, const EvalOptions& opt,
                              std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (opt.episodes < 1) throw std::invalid_argument("evaluate: episode count must be >= 1");
  constexpr int kActionDim = static_cast<int>(std::tuple_size<PlanarAction>::value);
  const int want_goal = 3 * tracker.goal_k;
  if (b.feature_dim() != kPlanarFeatureDim || b.goal_dim() != want_goal ||
      b.action_dim() != kActionDim)
    throw std::runtime_error(
        "evaluate: checkpoint incompatible with the tracker (features " +
        std::to_string(b.feature_dim()) + " vs " + std::to_string(kPlanarFeatureDim) + ", goal " +
        std::to_string(b.goal_dim()) + " vs " + std::to_string(want_goal) + ", actions " +
        std::to_string(b.action_dim()) + " vs " + std::to_string(kActionDim) + ")");

  Rng rng(mix_seed(seed, 0xEEA1));
  TrackerEnv env;
  env.cfg = tracker;

  int survived = 0;
  std::vector<double> perr, yerr;
  std::vector<double> lat_total, lat_net, lat_shield;
  std::vector<double> ep_perr, ep_yerr;
  for (int ep = 0; ep < opt.episodes; ++ep) {
    env.reset(dataset[static_cast<std::size_t>(ep) % dataset.size()]);
    env.s.x += rng.uniform(-opt.jitter_xy, opt.jitter_xy);
    env.s.y += rng.uniform(-opt.jitter_xy, opt.jitter_xy);
    env.s.th = wrap_pi(env.s.th + rng.uniform(-opt.jitter_yaw, opt.jitter_yaw));
    ep_perr.clear();
    ep_yerr.clear();
    while (!env.done) {
      InferTiming tm;
      const InferResult res =
          infer_action(b, env.features(), env.goal_window(), opt.radius, opt.mode,
                       /*deterministic=*/true, nullptr, opt.measure_latency ? &tm : nullptr);
      PlanarAction a{};
      std::copy(res.action.begin(), res.action.end(), a.begin());
      env.step(a);
      if (opt.measure_latency) {
        lat_total.push_back(tm.total_us());
        lat_net.push_back(tm.net_us);
        lat_shield.push_back(tm.shield_us);
      }
      if (!env.failed) {
        const PlanarPose tool = tool_pose(env.s);
        const PlanarPose goal = env.current_goal();
        ep_perr.push_back(std::hypot(tool.x - goal.x, tool.y - goal.y));
        ep_yerr.push_back(std::abs(wrap_pi(tool.yaw - goal.yaw)));
      }
    }
    if (!env.failed) {
      ++survived;
      perr.insert(perr.end(), ep_perr.begin(), ep_perr.end());
      yerr.insert(yerr.end(), ep_yerr.begin(), ep_yerr.end());
    }
  }

  MetricsReport m;
  m.method = shield_mode_name(opt.mode);
  m.dataset = traj_kind_name(dataset.front().kind);
  m.radius = opt.radius;
  m.seeds = std::to_string(seed);
  m.episodes = opt.episodes;
  m.sr_pct = 100.0 * survived / opt.episodes;
  if (!perr.empty()) {
    m.e_p_m = mean(perr);
    m.e_r_rad = mean(yerr);
  }
  m.has_errors = m.sr_pct >= 30.0 && !perr.empty();
  if (!lat_total.empty()) {
    m.lat_med_us = median(lat_total);
    m.lat_p95_us = percentile(lat_total, 0.95);
    m.lat_net_med_us = median(lat_net);
    m.lat_shield_med_us = median(lat_shield);
  }
  return m;
}

// Seed averaging: SR, episode totals, and latency average across all seeds;
// tracking errors average across the seeds that had survivors (a seed with
// none has no error samples to contribute). Suppression applies to the
// averaged SR.
inline MetricsReport evaluate_seeds(const PolicyBundle& b, const std::vector<Trajectory>& dataset,
                                    const TrackerConfig& tracker, const EvalOptions& opt,
                                    const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("evaluate_seeds: need at least one seed");
  std::vector<MetricsReport> per;
  per.reserve(seeds.size());
  for (std::uint64_t s : seeds) per.push_back(evaluate(b, dataset, tracker, opt, s));

  MetricsReport m = per.front();
  m.seeds = detail::seed_list(seeds);
  m.episodes = 0;
  double sr = 0.0, lmed = 0.0, lp95 = 0.0, lnet = 0.0, lsh = 0.0;
  std::vector<double> eps, ers;
  for (const MetricsReport& r : per) {
    sr += r.sr_pct;
    lmed += r.lat_med_us;
    lp95 += r.lat_p95_us;
    lnet += r.lat_net_med_us;
    lsh += r.lat_shield_med_us;
    m.episodes += r.episodes;
    if (std::isfinite(r.e_p_m)) {
      eps.push_back(r.e_p_m);
      ers.push_back(r.e_r_rad);
    }
  }
  const double k = static_cast<double>(per.size());
  m.sr_pct = sr / k;
  m.lat_med_us = lmed / k;
  m.lat_p95_us = lp95 / k;
  m.lat_net_med_us = lnet / k;
  m.lat_shield_med_us = lsh / k;
  m.e_p_m = eps.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(eps);
  m.e_r_rad = ers.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(ers);
  m.has_errors = m.sr_pct >= 30.0 && !eps.empty();
  return m;
}

// --- CSV emission ---

inline constexpr const char* kMetricsFormat = "cmp-metrics-v1";

inline std::string metrics_csv_header() {
  return std::string("# ") + kMetricsFormat +
         "\nmethod,dataset,radius,seed,sr_pct,e_p_m,e_r_rad,lat_med_us,lat_p95_us,episodes\n";
}

inline std::string metrics_csv_row(const MetricsReport& m) {
  std::string r = m.method + ',' + m.dataset + ',' + detail::fmt_g(m.radius) + ',' + m.seeds + ',';
  if (m.incomplete) return r + "-,-,-,-,-,0\n";
  r += detail::fmt_g(m.sr_pct);
  r += ',';
  r += m.has_errors ? detail::fmt_g(m.e_p_m) : std::string("-");
  r += ',';
  r += m.has_errors ? detail::fmt_g(m.e_r_rad) : std::string("-");
  r += ',' + detail::fmt_g(m.lat_med_us) + ',' + detail::fmt_g(m.lat_p95_us) + ',' +
       std::to_string(m.episodes) + '\n';
  return r;
}

inline std::string metrics_csv(const std::vector<MetricsReport>& rows) {
  std::string out = metrics_csv_header();
  for (const MetricsReport& m : rows) out += metrics_csv_row(m);
  return out;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsReport>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << metrics_csv(rows);
  if (!f) throw std::runtime_error("short write to " + path);
}

// --- radius sweep and ablation table ---

struct EvalDataset {
  std::string name;
  std::vector<Trajectory> trajs;
};

// One row per (dataset, radius), datasets outer. Radii must be positive and
// ascending so the emitted curves read left to right.
inline std::vector<MetricsReport> sweep_radius(const PolicyBundle& b, const TrackerConfig& tracker,
                                               const std::vector<EvalDataset>& datasets,
                                               const std::vector<double>& radii,
                                               const EvalOptions& base,
                                               const std::vector<std::uint64_t>& seeds) {
  if (radii.empty()) throw std::invalid_argument("sweep_radius: empty radius list");
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (!(radii[i] > 0.0)) throw std::invalid_argument("sweep_radius: radii must be positive");
    if (i && radii[i] <= radii[i - 1])
      throw std::invalid_argument("sweep_radius: radii must be strictly ascending");
  }
  std::vector<MetricsReport> rows;
  rows.reserve(datasets.size() * radii.size());
  for (const EvalDataset& ds : datasets)
    for (double r : radii) {
      EvalOptions opt = base;
      opt.radius = r;
      MetricsReport m = evaluate_seeds(b, ds.trajs, tracker, opt, seeds);
      m.dataset = ds.name;
      rows.push_back(std::move(m));
    }
  return rows;
}

struct AblationMethod {
  std::string name;
  LatentReg reg;
  ShieldMode eval_mode;
};

// umi-like = no bottleneck regularizer and no projection; the other three
// train with their regularizer and evaluate through the projection shield.
inline AblationMethod ablation_method(const std::string& name) {
  if (name == "umi-like") return {name, LatentReg::kNone, ShieldMode::kNone};
  if (name == "cvae") return {name, LatentReg::kCvae, ShieldMode::kCmp};
  if (name == "scvae") return {name, LatentReg::kScvae, ShieldMode::kCmp};
  if (name == "cmp") return {name, LatentReg::kCmp, ShieldMode::kCmp};
  throw std::invalid_argument("ablation: unknown method '" + name +
                              "' (want umi-like | cvae | scvae | cmp)");
}

// Trains each variant from the same base config (budget, seed, data) and
// sweeps it across the radius grid. A variant whose training throws emits
// incomplete rows instead of aborting the table. Checkpoints and logs land
// under work_dir/<method>/.
inline std::vector<MetricsReport> run_ablation(const TrainConfig& base,
                                               const std::vector<std::string>& methods,
                                               const std::vector<Trajectory>& train_set,
                                               const std::vector<EvalDataset>& eval_sets,
                                               const std::vector<double>& radii,
                                               const EvalOptions& opt,
                                               const std::vector<std::uint64_t>& seeds,
                                               const std::string& work_dir) {
  std::vector<MetricsReport> rows;
  for (const std::string& name : methods) {
    const AblationMethod method = ablation_method(name);
    TrainConfig cfg = base;
    cfg.regularizer = method.reg;
    TrainState st;
    bool trained = false;
    try {
      st = make_train_state(cfg);
      train_loop(st, train_set, work_dir + "/" + name);
      trained = true;
    } catch (const std::exception&) {
    }
    if (!trained) {
      for (const EvalDataset& ds : eval_sets)
        for (double r : radii) {
          MetricsReport bad;
          bad.method = name;
          bad.dataset = ds.name;
          bad.radius = r;
          bad.seeds = detail::seed_list(seeds);
          bad.incomplete = true;
          rows.push_back(std::move(bad));
        }
      continue;
    }
    EvalOptions eo = opt;
    eo.mode = method.eval_mode;
    std::vector<MetricsReport> part = sweep_radius(st.bundle, cfg.tracker, eval_sets, radii, eo, seeds);
    for (MetricsReport& r : part) r.method = name;
    rows.insert(rows.end(), std::make_move_iterator(part.begin()),
                std::make_move_iterator(part.end()));
  }
  return rows;
}

}  // namespace cmp
