#include <catch2/catch_amalgamated.hpp>

#include "cmp/safety_table.hpp"

namespace {

cmp::GridSpec small_board() {
  cmp::GridSpec g;
  g.width = 4;
  g.height = 4;
  g.p_slip = 0.15;
  g.horizon = 50;
  g.hazards = {g.cell_id(1, 1), g.cell_id(3, 2)};
  return g;
}

}  // namespace

TEST_CASE("hazard-free deterministic board is everywhere perfectly safe") {
  cmp::GridSpec g;
  g.width = 4;
  g.height = 3;
  g.hazards.clear();
  g.p_slip = 0.0;
  const cmp::SafetyTable t = cmp::exact_safety_value(g);
  REQUIRE(t.converged);
  for (int c = 0; c < g.cells(); ++c) {
    REQUIRE(t.v[c] == Catch::Approx(1.0).margin(1e-12));
    for (int z = 0; z < cmp::kNumIntents; ++z)
      REQUIRE(t.w(c, z) == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("hazard cells carry zero value for every intent") {
  for (const cmp::SafetyTable& t : {cmp::default_safety_oracle(cmp::default_grid()),
                                    cmp::exact_safety_value(small_board())}) {
    for (int h : t.spec.hazards) {
      REQUIRE(t.v[h] == 0.0);
      for (int z = 0; z < cmp::kNumIntents; ++z) REQUIRE(t.w(h, z) == 0.0);
    }
  }
}

TEST_CASE("fixed-point iteration converges and stays put under reapplication") {
  const cmp::SafetyTable t = cmp::exact_safety_value(cmp::default_grid(), 1e-10);
  REQUIRE(t.converged);
  REQUIRE(t.residual < 1e-10);

  cmp::Mat w2;
  std::vector<double> v2;
  cmp::bellman_apply(t.spec, t.kernel, t.v, w2, v2);
  for (int c = 0; c < t.spec.cells(); ++c)
    REQUIRE(std::abs(v2[c] - t.v[c]) <= 1e-9);

  // slip noise reaches every neighbor, so with hazards present no region can
  // hold value forever: the exact fixed point sits at (numerically) zero
  for (int c = 0; c < t.spec.cells(); ++c) REQUIRE(t.v[c] < 1e-4);
}

TEST_CASE("horizon table has a rich value spread on the default board") {
  const cmp::GridSpec g = cmp::default_grid();
  const cmp::SafetyTable t = cmp::default_safety_oracle(g);
  REQUIRE(t.horizon_limited);
  REQUIRE(static_cast<int>(t.layers.size()) == g.horizon + 1);
  int lo = 0, hi = 0, mid = 0;
  for (int c = 0; c < g.cells(); ++c) {
    REQUIRE(t.v[c] >= 0.0);
    REQUIRE(t.v[c] <= 1.0);
    if (g.safe(c)) {
      if (t.v[c] < 0.5) ++lo;
      else ++hi;
      if (t.v[c] > 0.05 && t.v[c] < 0.95) ++mid;
    }
  }
  // salvageable and doomed regions both exist, plus genuinely intermediate mass
  REQUIRE(lo >= 1);
  REQUIRE(hi >= 10);
  REQUIRE(mid >= 1);
  // the boxed-in corner survives only by repeated slip luck: (1 - p/2)^H
  REQUIRE(t.v[g.cell_id(0, 0)] == Catch::Approx(std::pow(0.95, 50)).epsilon(1e-9));
}

TEST_CASE("committed-intent values are one backup of the previous layer") {
  const cmp::GridSpec g = cmp::default_grid();
  const cmp::SafetyTable t = cmp::default_safety_oracle(g);
  cmp::Mat w2;
  std::vector<double> v2;
  cmp::bellman_apply(g, t.kernel, t.layers[t.layers.size() - 2], w2, v2);
  // hand-check the cell right of the (1,0) hazard with the intent pointing in
  const int cell = g.cell_id(2, 0);
  REQUIRE(t.w(cell, cmp::kLeft) == Catch::Approx(w2(cell, cmp::kLeft)).margin(1e-15));
  for (std::size_t i = 0; i < t.w.a.size(); ++i)
    REQUIRE(t.w.a[i] == Catch::Approx(w2.a[i]).margin(1e-15));
}

TEST_CASE("monte carlo greedy rollouts reproduce the horizon values") {
  const cmp::GridSpec g = cmp::default_grid();
  const cmp::SafetyTable t = cmp::default_safety_oracle(g);
  cmp::Rng rng(1234);
  // spot-check cells across the range; the acceptance suite sweeps the board
  for (int c : {0, 2, 7, 12, 18, 24}) {
    if (!g.safe(c)) continue;
    const double est = cmp::mc_survival_horizon(t, c, 30000, rng);
    REQUIRE(std::abs(est - t.v[c]) < 0.01);
  }
}

TEST_CASE("one-step expansion is exactly one Bellman backup") {
  const cmp::GridSpec g = small_board();
  const cmp::SafetyTable t = cmp::default_safety_oracle(g);
  const cmp::Mat rho = cmp::uniform_intent_policy(g);
  const cmp::Mat p1 = cmp::n_step_expansion(g, t.kernel, t.v, rho, 1);
  cmp::Mat w2;
  std::vector<double> v2;
  cmp::bellman_apply(g, t.kernel, t.v, w2, v2);
  for (std::size_t i = 0; i < p1.a.size(); ++i)
    REQUIRE(p1.a[i] == Catch::Approx(w2.a[i]).margin(1e-15));
}

TEST_CASE("all-safe deterministic corridor keeps every expansion at one") {
  cmp::GridSpec g;
  g.width = 6;
  g.height = 1;
  g.p_slip = 0.0;
  g.hazards.clear();
  const cmp::SafetyTable t = cmp::exact_safety_value(g);
  const cmp::Mat rho = cmp::uniform_intent_policy(g);
  for (int n = 1; n <= 4; ++n) {
    const cmp::Mat pn = cmp::n_step_expansion(g, t.kernel, t.v, rho, n);
    for (double x : pn.a) REQUIRE(x == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("expansion chain is monotone and bounds its lambda mixture") {
  for (const cmp::GridSpec& g : {cmp::default_grid(), small_board()}) {
    const cmp::SafetyTable t = cmp::default_safety_oracle(g);
    const cmp::Mat rho = cmp::uniform_intent_policy(g);
    std::vector<cmp::Mat> chain;
    for (int n = 1; n <= 4; ++n)
      chain.push_back(cmp::n_step_expansion(g, t.kernel, t.v, rho, n));
    for (std::size_t n = 0; n + 1 < chain.size(); ++n)
      for (std::size_t i = 0; i < chain[n].a.size(); ++i)
        REQUIRE(chain[n].a[i] >= chain[n + 1].a[i] - 1e-12);
    const cmp::Mat mix = cmp::lambda_mixture(chain, 0.8);
    for (std::size_t i = 0; i < mix.a.size(); ++i)
      REQUIRE(mix.a[i] <= chain[0].a[i] + 1e-12);
  }
}

TEST_CASE("monte carlo expansions agree with the analytic chain") {
  const cmp::GridSpec g = small_board();
  const cmp::SafetyTable t = cmp::default_safety_oracle(g);
  const cmp::Mat rho = cmp::uniform_intent_policy(g);
  cmp::Rng rng(777);
  const int cell = g.cell_id(2, 1);
  for (int n = 1; n <= 3; ++n) {
    const cmp::Mat pn = cmp::n_step_expansion(g, t.kernel, t.v, rho, n);
    const auto [est, se] = cmp::mc_n_step(g, t.v, rho, cell, cmp::kRight, n, 40000, rng);
    REQUIRE(std::abs(est - pn(cell, cmp::kRight)) < std::max(3.5 * se, 1e-3));
  }
}

TEST_CASE("monte carlo chain is monotone within sampling error") {
  const cmp::GridSpec g = small_board();
  const cmp::SafetyTable t = cmp::default_safety_oracle(g);
  const cmp::Mat rho = cmp::uniform_intent_policy(g);
  cmp::Rng rng(31);
  for (int cell : {0, 6, 10}) {
    if (!g.safe(cell)) continue;
    double prev = 2.0, prev_se = 0.0;
    for (int n = 1; n <= 5; ++n) {
      const auto [est, se] = cmp::mc_n_step(g, t.v, rho, cell, cmp::kStay, n, 20000, rng);
      if (n > 1) {
        const double joint = std::sqrt(se * se + prev_se * prev_se);
        REQUIRE(est - prev <= 1.5 * joint);
      }
      prev = est;
      prev_se = se;
    }
  }
}
