#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cmp/grid.hpp"
#include "cmp/mat.hpp"
#include "cmp/rng.hpp"

namespace cmp {

// Exact perpetual-safety solution on a grid. w(s,z) is the probability of
// staying inside the safe set when committing intent z for one step and acting
// optimally afterwards; v(s) = max_z w(s,z).
//
// Two modes exist because they answer different questions. With slip noise a
// connected board always leaks into its hazards eventually, so the
// infinite-horizon fixed point collapses toward zero; the horizon-H table is
// the one with informative intermediate values and feeds estimator training.
struct SafetyTable {
  GridSpec spec;
  Mat kernel;             // (cells*intents) x cells
  Mat w;                  // cells x intents
  std::vector<double> v;  // cells; equals row-max of w
  bool horizon_limited = false;
  std::vector<std::vector<double>> layers;  // horizon mode: v_0 .. v_H
  double residual = 0.0;  // max |v - T v| at the returned iterate
  int iterations = 0;
  bool converged = false;

  double origin_gap(int cell) const { return v[cell] - w(cell, kStay); }
};

namespace detail {

// kernel rows are >= 5 cells wide but have at most 5 distinct entries;
// collapse them for the value-iteration inner loop
struct SparseKernel {
  std::vector<int> offsets;
  std::vector<std::pair<int, double>> entries;
};

inline SparseKernel sparsify(const Mat& kernel) {
  SparseKernel s;
  s.offsets.reserve(kernel.rows + 1);
  s.offsets.push_back(0);
  for (int r = 0; r < kernel.rows; ++r) {
    for (int c = 0; c < kernel.cols; ++c)
      if (kernel(r, c) != 0.0) s.entries.emplace_back(c, kernel(r, c));
    s.offsets.push_back(static_cast<int>(s.entries.size()));
  }
  return s;
}

inline void sweep(const GridSpec& g, const SparseKernel& k, const std::vector<double>& v,
                  Mat& w_out, std::vector<double>& v_out) {
  const int n = g.cells();
  if (w_out.rows != n || w_out.cols != kNumIntents) w_out = Mat(n, kNumIntents);
  if (static_cast<int>(v_out.size()) != n) v_out.assign(n, 0.0);
  for (int c = 0; c < n; ++c) {
    double best = 0.0;
    const bool safe = g.safe(c);
    for (int z = 0; z < kNumIntents; ++z) {
      double acc = 0.0;
      if (safe) {
        const int row = c * kNumIntents + z;
        for (int e = k.offsets[row]; e < k.offsets[row + 1]; ++e)
          acc += k.entries[e].second * v[k.entries[e].first];
      }
      w_out(c, z) = acc;
      best = std::max(best, acc);
    }
    v_out[c] = best;
  }
}

}  // namespace detail

// One application of the multiplicative Bellman backup to v.
inline void bellman_apply(const GridSpec& g, const Mat& kernel, const std::vector<double>& v,
                          Mat& w_out, std::vector<double>& v_out) {
  detail::sweep(g, detail::sparsify(kernel), v, w_out, v_out);
}

// Value iteration from v0(s) = [s safe]. The sequence decreases monotonically,
// so every iterate is a true upper bound on optimal safety.
inline SafetyTable exact_safety_value(const GridSpec& g, double tol = 1e-10,
                                      int max_iter = 5000000) {
  g.validate();
  SafetyTable t;
  t.spec = g;
  t.kernel = grid_transition_kernel(g);
  const detail::SparseKernel sk = detail::sparsify(t.kernel);
  t.v.assign(g.cells(), 0.0);
  for (int c = 0; c < g.cells(); ++c) t.v[c] = g.safe(c) ? 1.0 : 0.0;
  std::vector<double> v_next;
  for (int it = 0; it < max_iter; ++it) {
    detail::sweep(g, sk, t.v, t.w, v_next);
    double delta = 0.0;
    for (int c = 0; c < g.cells(); ++c) delta = std::max(delta, std::abs(v_next[c] - t.v[c]));
    t.v.swap(v_next);
    t.iterations = it + 1;
    t.residual = delta;
    if (delta < tol) {
      t.converged = true;
      break;
    }
  }
  // leave w consistent with the returned v and re-measure the residual
  detail::sweep(g, sk, t.v, t.w, v_next);
  t.residual = 0.0;
  for (int c = 0; c < g.cells(); ++c)
    t.residual = std::max(t.residual, std::abs(v_next[c] - t.v[c]));
  return t;
}

// H-sweep table: v = v_H, w = W_H (survive H steps from the committed intent),
// with all intermediate layers kept for time-consistent greedy play.
inline SafetyTable exact_safety_value_horizon(const GridSpec& g, int horizon) {
  g.validate();
  if (horizon < 1) throw std::invalid_argument("safety horizon must be >= 1");
  SafetyTable t;
  t.spec = g;
  t.horizon_limited = true;
  t.kernel = grid_transition_kernel(g);
  const detail::SparseKernel sk = detail::sparsify(t.kernel);
  std::vector<double> v(g.cells(), 0.0);
  for (int c = 0; c < g.cells(); ++c) v[c] = g.safe(c) ? 1.0 : 0.0;
  t.layers.push_back(v);
  std::vector<double> v_next;
  for (int h = 1; h <= horizon; ++h) {
    detail::sweep(g, sk, v, t.w, v_next);
    double delta = 0.0;
    for (int c = 0; c < g.cells(); ++c) delta = std::max(delta, std::abs(v_next[c] - v[c]));
    t.residual = delta;
    v = v_next;
    t.layers.push_back(v);
  }
  t.v = v;
  t.iterations = horizon;
  t.converged = true;
  return t;
}

inline SafetyTable default_safety_oracle(const GridSpec& g) {
  return exact_safety_value_horizon(g, g.horizon);
}

// intent maximizing the expected next-state value; ties break to the lowest index
inline int greedy_intent(const GridSpec& g, const Mat& kernel, const std::vector<double>& v,
                         int cell) {
  int best_z = 0;
  double best = -1.0;
  for (int z = 0; z < kNumIntents; ++z) {
    double acc = 0.0;
    const double* row = kernel.row(cell * kNumIntents + z);
    for (int s2 = 0; s2 < g.cells(); ++s2) acc += row[s2] * v[s2];
    if (acc > best) {
      best = acc;
      best_z = z;
    }
  }
  return best_z;
}

// Monte Carlo H-step survival frequency under time-consistent greedy play
// (layer H-k-1 scores the intent taken with k steps elapsed).
inline double mc_survival_horizon(const SafetyTable& t, int start, int rollouts, Rng& rng) {
  if (!t.horizon_limited) throw std::invalid_argument("mc_survival_horizon: need horizon table");
  const GridSpec& g = t.spec;
  if (!g.safe(start)) return 0.0;
  const int horizon = t.iterations;
  long long survived = 0;
  for (int r = 0; r < rollouts; ++r) {
    int c = start;
    bool alive = true;
    for (int step = 0; step < horizon; ++step) {
      const auto& layer = t.layers[horizon - step - 1];
      const GridStep out = grid_step(g, c, greedy_intent(g, t.kernel, layer, c), rng);
      c = out.next;
      if (!out.safe) {
        alive = false;
        break;
      }
    }
    if (alive) ++survived;
  }
  return static_cast<double>(survived) / static_cast<double>(rollouts);
}

// uniform rollout policy over intents, as a cells x intents row-stochastic matrix
inline Mat uniform_intent_policy(const GridSpec& g) {
  Mat rho(g.cells(), kNumIntents);
  for (double& x : rho.a) x = 1.0 / kNumIntents;
  return rho;
}

// n-step expansion of the safety value, computed exactly from the kernel:
// commit z now, then follow rho; survive every step and cash out v at step n.
inline Mat n_step_expansion(const GridSpec& g, const Mat& kernel, const std::vector<double>& v,
                            const Mat& rho, int n) {
  if (n < 1) throw std::invalid_argument("n_step_expansion: n must be >= 1");
  const int cells = g.cells();
  std::vector<double> gm = v;  // G_0
  std::vector<double> next(cells, 0.0);
  for (int m = 1; m < n; ++m) {
    for (int c = 0; c < cells; ++c) {
      double acc = 0.0;
      if (g.safe(c)) {
        for (int z = 0; z < kNumIntents; ++z) {
          double ez = 0.0;
          const double* row = kernel.row(c * kNumIntents + z);
          for (int s2 = 0; s2 < cells; ++s2) ez += row[s2] * gm[s2];
          acc += rho(c, z) * ez;
        }
      }
      next[c] = acc;
    }
    gm = next;
  }
  Mat p(cells, kNumIntents);
  for (int c = 0; c < cells; ++c) {
    for (int z = 0; z < kNumIntents; ++z) {
      double acc = 0.0;
      if (g.safe(c)) {
        const double* row = kernel.row(c * kNumIntents + z);
        for (int s2 = 0; s2 < cells; ++s2) acc += row[s2] * gm[s2];
      }
      p(c, z) = acc;
    }
  }
  return p;
}

// Monte Carlo counterpart of n_step_expansion; returns (mean, standard error).
inline std::pair<double, double> mc_n_step(const GridSpec& g, const std::vector<double>& v,
                                           const Mat& rho, int start, int intent, int n,
                                           int rollouts, Rng& rng) {
  double sum = 0.0, sumsq = 0.0;
  for (int r = 0; r < rollouts; ++r) {
    double val = 0.0;
    int c = start;
    bool alive = g.safe(c);
    int z = intent;
    for (int step = 0; step < n && alive; ++step) {
      const GridStep out = grid_step(g, c, z, rng);
      c = out.next;
      if (step + 1 < n) {
        alive = g.safe(c);
        // sample the next intent from rho at the new cell
        double u = rng.u01(), cum = 0.0;
        z = kNumIntents - 1;
        for (int cand = 0; cand < kNumIntents; ++cand) {
          cum += rho(c, cand);
          if (u < cum) {
            z = cand;
            break;
          }
        }
      }
    }
    if (alive) val = v[c];
    sum += val;
    sumsq += val * val;
  }
  const double m = sum / rollouts;
  const double var = std::max(0.0, sumsq / rollouts - m * m);
  return {m, std::sqrt(var / rollouts)};
}

// geometric lambda-mixture of the n-step expansions, tail collapsed onto the
// deepest available expansion
inline Mat lambda_mixture(const std::vector<Mat>& p, double lambda) {
  if (p.empty()) throw std::invalid_argument("lambda_mixture: no expansions");
  Mat g(p[0].rows, p[0].cols);
  double coef = 1.0 - lambda;
  double used = 0.0;
  for (std::size_t n = 0; n + 1 < p.size(); ++n) {
    for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] += coef * p[n].a[i];
    used += coef;
    coef *= lambda;
  }
  const double tail = 1.0 - used;
  for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] += tail * p.back().a[i];
  return g;
}

inline std::string format_safety_table(const SafetyTable& t) {
  std::ostringstream ss;
  ss.precision(6);
  ss << std::fixed;
  ss << "mode " << (t.horizon_limited ? "horizon" : "fixed-point") << "\n";
  ss << "cells " << t.spec.cells() << " intents " << kNumIntents << "\n";
  ss << "residual " << std::scientific << t.residual << std::fixed << "\n";
  ss << "sweeps " << t.iterations << "\n";
  for (int y = 0; y < t.spec.height; ++y) {
    for (int x = 0; x < t.spec.width; ++x) {
      if (x) ss << ' ';
      ss << t.v[t.spec.cell_id(x, y)];
    }
    ss << "\n";
  }
  return ss.str();
}

}  // namespace cmp
