#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cmp/adam.hpp"
#include "cmp/grid.hpp"
#include "cmp/net.hpp"
#include "cmp/rng.hpp"
#include "cmp/safety_table.hpp"
#include "cmp/td_targets.hpp"

namespace cmp {

inline std::vector<double> estimator_input(const std::vector<double>& state,
                                           const std::vector<double>& z) {
  std::vector<double> x;
  x.reserve(state.size() + z.size());
  x.insert(x.end(), state.begin(), state.end());
  x.insert(x.end(), z.begin(), z.end());
  return x;
}

// Safety head with its own optimizer; the learning rate stays fixed.
struct SafetyEstimator {
  DenseNet net;
  Adam opt;
  long long skipped = 0;  // batches dropped because the loss went non-finite
};

inline SafetyEstimator make_estimator(int state_dim, int latent_dim,
                                      const std::vector<int>& hidden, Rng& rng,
                                      double lr = 1e-3) {
  std::vector<int> widths;
  widths.push_back(state_dim + latent_dim);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);
  SafetyEstimator est;
  est.net = make_dense(widths, Act::kElu, Act::kLogistic, rng);
  est.opt = Adam(est.net.param_count(), lr);
  return est;
}

inline double predict_safety(const DenseNet& net, const std::vector<double>& state,
                             const std::vector<double>& z) {
  return forward(net, estimator_input(state, z))[0];
}

// The logistic head already clamps predictions away from {0,1}, so the logs
// stay finite for any batch.
inline double bce_loss(double pred, double target) {
  return -(target * std::log(pred) + (1.0 - target) * std::log(1.0 - pred));
}

// Mean BCE over the batch plus one optimizer step. A non-finite loss (bad
// targets, poisoned parameters) skips the step and is counted.
inline double estimator_update(SafetyEstimator& est, const std::vector<SafetyRecord>& batch) {
  if (batch.empty()) throw std::invalid_argument("estimator_update: empty batch");
  const int n = static_cast<int>(batch.size());
  Mat x(n, est.net.in_dim());
  for (int i = 0; i < n; ++i) {
    const auto xi = estimator_input(batch[i].state, batch[i].z);
    if (static_cast<int>(xi.size()) != x.cols)
      throw std::invalid_argument("estimator_update: record feature width mismatch");
    std::copy(xi.begin(), xi.end(), x.row(i));
  }
  for (const auto& r : batch)
    if (r.target < 0.0 || r.target > 1.0)
      throw std::invalid_argument("estimator_update: target outside [0,1]");
  FwdCache cache;
  const Mat& y = forward_batch(est.net, x, cache);
  double loss = 0.0;
  Mat dy(n, 1);
  for (int i = 0; i < n; ++i) {
    const double p = y(i, 0);
    const double t = batch[i].target;
    loss += bce_loss(p, t);
    dy(i, 0) = (-t / p + (1.0 - t) / (1.0 - p)) / n;
  }
  loss /= n;
  if (!std::isfinite(loss)) {
    ++est.skipped;
    std::fprintf(stderr, "[estimator] non-finite loss, batch skipped\n");
    return loss;
  }
  NetGrads g;
  backward_batch(est.net, cache, dy, g);
  std::vector<double> params, grads;
  flatten_params(est.net, params);
  flatten_grads(g, grads);
  if (adam_step(est.opt, params, grads)) assign_params(est.net, params);
  return loss;
}

// --- grid glue: one-hot features, "stay" as the latent origin ---

inline std::vector<double> grid_state_features(const GridSpec& g, int cell) {
  std::vector<double> f(g.cells(), 0.0);
  f[static_cast<std::size_t>(cell)] = 1.0;
  return f;
}

inline std::vector<double> grid_intent_latent(GridIntent z) {
  std::vector<double> f(kNumIntents, 0.0);
  f[static_cast<std::size_t>(z)] = 1.0;
  return f;
}

namespace detail {

struct GridEpisode {
  std::vector<int> cells;          // visited cells, starting state first
  std::vector<GridIntent> intents;
  bool failed = false;
  int end_cell = -1;               // hazard cell when failed
};

inline GridEpisode play_uniform_episode(const GridSpec& g, Rng& rng) {
  GridEpisode ep;
  int cell = -1;
  do {
    cell = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(g.cells())));
  } while (!g.safe(cell));
  for (int t = 0; t < g.horizon; ++t) {
    const auto z = static_cast<GridIntent>(rng.uniform_int(kNumIntents));
    ep.cells.push_back(cell);
    ep.intents.push_back(z);
    const GridStep s = grid_step(g, cell, z, rng);
    if (!s.safe) {
      ep.failed = true;
      ep.end_cell = s.next;
      return ep;
    }
    cell = s.next;
  }
  ep.end_cell = cell;
  return ep;
}

}  // namespace detail

// Uniform-random-intent rollouts labeled with exact values from a solved
// table. Failure end-states contribute an extra zero-target record so the
// estimator sees hazard cells as inputs rather than extrapolating there.
inline std::vector<SafetyRecord> collect_grid_records_oracle(const GridSpec& g,
                                                             const SafetyTable& table,
                                                             int episodes, Rng& rng) {
  std::vector<SafetyRecord> out;
  for (int e = 0; e < episodes; ++e) {
    const auto ep = detail::play_uniform_episode(g, rng);
    const std::size_t steps = ep.cells.size();
    for (std::size_t t = 0; t < steps; ++t) {
      SafetyRecord r;
      r.state = grid_state_features(g, ep.cells[t]);
      r.z = grid_intent_latent(ep.intents[t]);
      r.safe = 1.0;
      r.tag = t + 1 < steps ? TerminalTag::kContinue
                            : (ep.failed ? TerminalTag::kFailure : TerminalTag::kTimeout);
      r.target = table.w(ep.cells[t], static_cast<int>(ep.intents[t]));
      out.push_back(std::move(r));
    }
    if (ep.failed) {
      SafetyRecord r;
      r.state = grid_state_features(g, ep.end_cell);
      r.z = grid_intent_latent(GridIntent::kStay);
      r.safe = 0.0;
      r.tag = TerminalTag::kFailure;
      r.target = 0.0;
      out.push_back(std::move(r));
    }
  }
  return out;
}

// Same rollouts, but targets come from the TD(lambda) backward recursion with
// bootstraps supplied by the current estimator.
inline std::vector<SafetyRecord> collect_grid_records_td(const GridSpec& g, const DenseNet& omega,
                                                         int episodes, Rng& rng,
                                                         const TdOptions& opt = {}) {
  const auto origin = grid_intent_latent(GridIntent::kStay);
  std::vector<SafetyRecord> out;
  for (int e = 0; e < episodes; ++e) {
    const auto ep = detail::play_uniform_episode(g, rng);
    const std::size_t steps = ep.cells.size();
    std::vector<SafetyRecord> traj(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      SafetyRecord& r = traj[t];
      r.state = grid_state_features(g, ep.cells[t]);
      r.z = grid_intent_latent(ep.intents[t]);
      r.safe = 1.0;
      const int next = t + 1 < steps ? ep.cells[t + 1] : ep.end_cell;
      r.bootstrap = predict_safety(omega, grid_state_features(g, next), origin);
      r.tag = t + 1 < steps ? TerminalTag::kContinue
                            : (ep.failed ? TerminalTag::kFailure : TerminalTag::kTimeout);
    }
    td_lambda_targets(traj, opt);
    for (auto& r : traj) out.push_back(std::move(r));
    if (ep.failed) {
      SafetyRecord r;
      r.state = grid_state_features(g, ep.end_cell);
      r.z = origin;
      r.safe = 0.0;
      r.tag = TerminalTag::kFailure;
      r.target = 0.0;
      out.push_back(std::move(r));
    }
  }
  return out;
}

// Minibatch driver over a fixed buffer; returns the final batch loss.
inline double train_estimator(SafetyEstimator& est, const std::vector<SafetyRecord>& buffer,
                              int steps, int batch_size, Rng& rng) {
  if (buffer.empty()) throw std::invalid_argument("train_estimator: empty buffer");
  double loss = 0.0;
  std::vector<SafetyRecord> batch;
  for (int s = 0; s < steps; ++s) {
    batch.clear();
    for (int i = 0; i < batch_size; ++i)
      batch.push_back(buffer[rng.uniform_int(buffer.size())]);
    loss = estimator_update(est, batch);
  }
  return loss;
}

// Mean |prediction - target| over distinct (cell, intent) pairs in a buffer.
inline double mean_abs_error_distinct(const DenseNet& net,
                                      const std::vector<SafetyRecord>& buffer) {
  std::set<std::pair<std::vector<double>, std::vector<double>>> seen;
  double sum = 0.0;
  int n = 0;
  for (const auto& r : buffer) {
    if (!seen.insert({r.state, r.z}).second) continue;
    sum += std::abs(predict_safety(net, r.state, r.z) - r.target);
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

// --- oracle correlation (2x3 contingency) ---

struct ContingencyTable {
  // rows: oracle-salvageable yes/no; columns: predicted bands <0.6, [0.6,0.8], >0.8
  long long n[2][3] = {{0, 0, 0}, {0, 0, 0}};

  long long total() const {
    return n[0][0] + n[0][1] + n[0][2] + n[1][0] + n[1][1] + n[1][2];
  }
  // P(not salvageable | prediction < 0.6)
  double p_unsalvageable_given_low() const {
    const long long c = n[0][0] + n[1][0];
    return c == 0 ? 0.0 : static_cast<double>(n[1][0]) / static_cast<double>(c);
  }
  // P(salvageable | prediction > 0.8)
  double p_salvageable_given_high() const {
    const long long c = n[0][2] + n[1][2];
    return c == 0 ? 0.0 : static_cast<double>(n[0][2]) / static_cast<double>(c);
  }
};

inline int prediction_band(double w) { return w < 0.6 ? 0 : (w <= 0.8 ? 1 : 2); }

// Cross-tabulates a predictor's origin-intent value against exact
// salvageability (V* >= 0.5) over states visited by uniform-random rollouts.
inline ContingencyTable oracle_correlation(const GridSpec& g, const SafetyTable& table,
                                           const std::function<double(int)>& predict_origin,
                                           int samples, Rng& rng) {
  ContingencyTable tab;
  long long count = 0;
  while (count < samples) {
    const auto ep = detail::play_uniform_episode(g, rng);
    std::vector<int> visited = ep.cells;
    visited.push_back(ep.end_cell);
    for (int cell : visited) {
      if (count == samples) break;
      const int row = table.v[static_cast<std::size_t>(cell)] >= 0.5 ? 0 : 1;
      const int col = prediction_band(predict_origin(cell));
      ++tab.n[row][col];
      ++count;
    }
  }
  return tab;
}

inline std::string format_contingency(const ContingencyTable& t) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "band            <0.6  [0.6,0.8]  >0.8\n"
                "salvageable   %6lld %10lld %5lld\n"
                "unsalvageable %6lld %10lld %5lld\n"
                "P(unsalvageable | <0.6) = %.4f\n"
                "P(salvageable   | >0.8) = %.4f\n",
                t.n[0][0], t.n[0][1], t.n[0][2], t.n[1][0], t.n[1][1], t.n[1][2],
                t.p_unsalvageable_given_low(), t.p_salvageable_given_high());
  return buf;
}

}  // namespace cmp
