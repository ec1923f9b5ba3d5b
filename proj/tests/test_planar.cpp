#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "cmp/planar.hpp"
#include "cmp/rng.hpp"

namespace {

cmp::Trajectory constant_traj(double x, double y, double yaw, int steps = 2500) {
  cmp::Trajectory t;
  t.kind = cmp::TrajKind::kIdPush;
  t.seed = 0;
  t.index = 0;
  t.pos.assign(steps, {x, y, 0.1});
  t.eul.assign(steps, {0.0, 0.0, yaw});
  return t;
}

}  // namespace

TEST_CASE("tool pose composes the arm offset onto the base") {
  cmp::PlanarState s;
  s.x = 1.0;
  s.y = -2.0;

  SECTION("retracted arm puts the tool on the base") {
    s.e = 0.0;
    s.th = 0.7;
    s.al = -0.3;
    const auto p = cmp::tool_pose(s);
    REQUIRE(p.x == 1.0);
    REQUIRE(p.y == -2.0);
    REQUIRE(p.yaw == Catch::Approx(0.4).margin(1e-15));
  }

  SECTION("forward-facing base, centered arm") {
    s.th = 0.0;
    s.al = 0.0;
    s.e = 0.5;
    const auto p = cmp::tool_pose(s);
    REQUIRE(p.x == Catch::Approx(1.5).margin(1e-12));
    REQUIRE(p.y == Catch::Approx(-2.0).margin(1e-12));
    REQUIRE(p.yaw == 0.0);
  }

  SECTION("base turned to +y") {
    s.th = M_PI / 2;
    s.al = 0.0;
    s.e = 1.0;
    const auto p = cmp::tool_pose(s);
    REQUIRE(p.x == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(p.y == Catch::Approx(-1.0).margin(1e-12));
  }
}

TEST_CASE("zero action from rest leaves the state unchanged") {
  cmp::PlanarState s;
  s.x = 0.4;
  s.y = -0.2;
  s.th = 1.1;
  const auto out = cmp::planar_step(s, {0, 0, 0, 0}, cmp::PlanarConfig{});
  REQUIRE(out.safe);
  REQUIRE(out.next.x == s.x);
  REQUIRE(out.next.y == s.y);
  REQUIRE(out.next.th == s.th);
  REQUIRE(out.next.v == 0.0);
  REQUIRE(out.next.om == 0.0);
  REQUIRE(out.next.e == s.e);
  REQUIRE(out.next.al == 0.0);
}

TEST_CASE("coasting advances the base along its heading") {
  cmp::PlanarConfig cfg;
  cmp::PlanarState s;
  s.th = 0.6;
  s.v = 1.3;
  auto cur = s;
  for (int i = 0; i < 50; ++i) {
    const auto out = cmp::planar_step(cur, {0, 0, 0, 0}, cfg);
    REQUIRE(out.safe);
    REQUIRE(out.next.x - cur.x == Catch::Approx(1.3 * cfg.dt * std::cos(0.6)).margin(1e-12));
    REQUIRE(out.next.y - cur.y == Catch::Approx(1.3 * cfg.dt * std::sin(0.6)).margin(1e-12));
    REQUIRE(out.next.th == cur.th);
    cur = out.next;
  }
}

TEST_CASE("integration is semi-implicit: new rates move this step's pose") {
  cmp::PlanarConfig cfg;
  cmp::PlanarState s;
  const auto out = cmp::planar_step(s, {1.0, 0.5, 0.25, -0.5}, cfg);
  const double v1 = 1.0 * cfg.dt;
  const double om1 = 0.5 * cfg.dt;
  const double th1 = om1 * cfg.dt;
  REQUIRE(out.next.v == Catch::Approx(v1).margin(1e-15));
  REQUIRE(out.next.om == Catch::Approx(om1).margin(1e-15));
  REQUIRE(out.next.th == Catch::Approx(th1).margin(1e-15));
  REQUIRE(out.next.x == Catch::Approx(v1 * std::cos(th1) * cfg.dt).margin(1e-15));
  REQUIRE(out.next.y == Catch::Approx(v1 * std::sin(th1) * cfg.dt).margin(1e-15));
  REQUIRE(out.next.de == Catch::Approx(0.25 * cfg.dt).margin(1e-15));
  REQUIRE(out.next.dal == Catch::Approx(-0.5 * cfg.dt).margin(1e-15));
  REQUIRE(out.next.e == Catch::Approx(0.5 + 0.25 * cfg.dt * cfg.dt).margin(1e-15));
}

TEST_CASE("actions beyond the bounds are clamped") {
  cmp::PlanarConfig cfg;
  cmp::PlanarState s;
  const auto out = cmp::planar_step(s, {100.0, -100.0, 100.0, -100.0}, cfg);
  REQUIRE(out.next.v == Catch::Approx(cfg.bounds.lin_acc * cfg.dt).margin(1e-15));
  REQUIRE(out.next.om == Catch::Approx(-cfg.bounds.yaw_acc * cfg.dt).margin(1e-15));
  REQUIRE(out.next.de == Catch::Approx(cfg.bounds.ext_acc * cfg.dt).margin(1e-15));
  REQUIRE(out.next.dal == Catch::Approx(-cfg.bounds.lat_acc * cfg.dt).margin(1e-15));
}

TEST_CASE("sustained max yaw acceleration trips the rate limit exactly once") {
  cmp::PlanarConfig cfg;
  cmp::PlanarState s;
  double prev_om = 0.0;
  bool tripped = false;
  for (int i = 0; i < 200 && !tripped; ++i) {
    const auto out = cmp::planar_step(s, {0, cfg.bounds.yaw_acc, 0, 0}, cfg);
    if (!out.safe) {
      tripped = true;
      REQUIRE(std::abs(out.next.om) > cfg.limits.om_max);
      REQUIRE(std::abs(prev_om) <= cfg.limits.om_max);
    }
    prev_om = out.next.om;
    s = out.next;
  }
  REQUIRE(tripped);
}

TEST_CASE("leaving the arena is a failure") {
  cmp::PlanarConfig cfg;
  cmp::PlanarState s;
  s.x = 2.99;
  s.v = 1.0;
  bool tripped = false;
  for (int i = 0; i < 10 && !tripped; ++i) {
    const auto out = cmp::planar_step(s, {0, 0, 0, 0}, cfg);
    tripped = !out.safe;
    s = out.next;
  }
  REQUIRE(tripped);
  REQUIRE(s.x > cfg.limits.arena_half);
}

TEST_CASE("arm joint limit is a failure") {
  cmp::PlanarState s;
  s.al = 1.21;
  REQUIRE(cmp::planar_failed(s, cmp::FailureSpec{}));
  s.al = 1.19;
  REQUIRE_FALSE(cmp::planar_failed(s, cmp::FailureSpec{}));
}

TEST_CASE("non-finite states are failures") {
  cmp::PlanarState s;
  s.x = std::numeric_limits<double>::quiet_NaN();
  REQUIRE(cmp::planar_failed(s, cmp::FailureSpec{}));
  s = cmp::PlanarState{};
  s.v = std::numeric_limits<double>::infinity();
  REQUIRE(cmp::planar_failed(s, cmp::FailureSpec{}));
}

TEST_CASE("extension hits the mechanical stops and holds") {
  cmp::PlanarConfig cfg;
  cmp::PlanarState s;
  for (int i = 0; i < 300; ++i) s = cmp::planar_step(s, {0, 0, cfg.bounds.ext_acc, 0}, cfg).next;
  REQUIRE(s.e == cfg.e_hi);
  REQUIRE(s.de == 0.0);
  for (int i = 0; i < 600; ++i) s = cmp::planar_step(s, {0, 0, -cfg.bounds.ext_acc, 0}, cfg).next;
  REQUIRE(s.e == cfg.e_lo);
  REQUIRE(s.de == 0.0);
}

TEST_CASE("planar config round-trips through the key-value format") {
  cmp::PlanarConfig c;
  c.dt = 0.01;
  c.bounds.yaw_acc = 4.5;
  c.limits.arena_half = 2.0;
  const auto parsed = cmp::parse_planar_config(cmp::format_planar_config(c));
  REQUIRE(parsed.dt == c.dt);
  REQUIRE(parsed.bounds.yaw_acc == c.bounds.yaw_acc);
  REQUIRE(parsed.bounds.lin_acc == c.bounds.lin_acc);
  REQUIRE(parsed.limits.arena_half == c.limits.arena_half);
  REQUIRE(parsed.limits.v_max == c.limits.v_max);

  REQUIRE_THROWS_AS(cmp::parse_planar_config("warp_speed 9"), std::invalid_argument);
  REQUIRE_THROWS_AS(cmp::parse_planar_config("dt -0.5"), std::invalid_argument);
  cmp::PlanarConfig zero_dt;
  zero_dt.dt = 0.0;
  REQUIRE_THROWS_AS(cmp::planar_step(cmp::PlanarState{}, {0, 0, 0, 0}, zero_dt),
                    std::invalid_argument);
}

TEST_CASE("tracker recenters goals on the centroid and spawns tool-on-goal") {
  cmp::Trajectory t;
  t.kind = cmp::TrajKind::kIdAugmented;
  t.pos = {{1.0, 2.0, 0.1}, {3.0, 4.0, 0.1}, {2.0, 0.0, 0.1}};
  t.eul.assign(3, {0.0, 0.0, 1.0});
  cmp::TrackerEnv env;
  env.reset(t);
  REQUIRE(env.gox == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(env.goy == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(env.s.v == 0.0);
  REQUIRE(env.s.e == env.cfg.start_e);
  REQUIRE_FALSE(env.done);

  // recentered goals stay inside the arena even when the recording does not
  const auto g0 = env.current_goal();
  REQUIRE(g0.x == Catch::Approx(-1.0).margin(1e-12));
  REQUIRE(g0.y == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(g0.yaw == Catch::Approx(1.0).margin(1e-12));

  // the arm is part of the spawn pose: the tool starts on the goal position,
  // but the heading stays at the rig's zero so the source yaw is the opening gap
  const auto tool = cmp::tool_pose(env.s);
  REQUIRE(env.s.th == 0.0);
  REQUIRE(tool.x == Catch::Approx(g0.x).margin(1e-12));
  REQUIRE(tool.y == Catch::Approx(g0.y).margin(1e-12));
  REQUIRE(tool.yaw == 0.0);
}

TEST_CASE("tracker reward on a constant goal is the tracking error") {
  auto t = constant_traj(-0.7, 0.4, 0.3);
  cmp::TrackerEnv env;
  env.reset(t);

  SECTION("holding the spawn charges only the source's opening yaw") {
    const double r = env.step({0, 0, 0, 0});
    REQUIRE(r == Catch::Approx(-0.5 * 0.3).margin(1e-12));
    REQUIRE_FALSE(env.done);
  }

  SECTION("a pure position offset adds its distance") {
    env.s.y += 0.25;
    const double r = env.step({0, 0, 0, 0});
    REQUIRE(r == Catch::Approx(-0.25 - 0.5 * 0.3).margin(1e-12));
  }

  SECTION("an arm swing moves the chord and closes part of the yaw gap") {
    env.s.al = 0.2;
    const auto tool = cmp::tool_pose(env.s);
    const auto g = env.current_goal();
    const double expect = -std::hypot(tool.x - g.x, tool.y - g.y) -
                          0.5 * std::abs(cmp::wrap_pi(tool.yaw - g.yaw));
    const double r = env.step({0, 0, 0, 0});
    REQUIRE(r == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("tracker action and soft-limit penalties show up in the reward") {
  auto t = constant_traj(0.0, 0.0, 0.0);
  cmp::TrackerEnv env;
  env.reset(t);
  cmp::PlanarState forced = env.s;
  forced.v = 1.9;  // past the 0.75 * 2.0 soft margin by 0.4
  env.s = forced;
  const double r = env.step({0.1, 0, 0, 0});
  // One step of 0.1 m/s^2 keeps v at ~1.902; pose moved ~0.038 m.
  const auto tool = cmp::tool_pose(env.s);
  const double pos_err = std::hypot(tool.x, tool.y);
  const double expect =
      -pos_err - 0.01 * 0.1 * 0.1 - 2.0 * (std::abs(env.s.v) - 0.75 * 2.0);
  REQUIRE(r == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("tracker episodes time out at the configured step count") {
  auto t = constant_traj(0.0, 0.0, 0.0);
  cmp::TrackerEnv env;
  env.cfg.control_steps = 40;
  env.reset(t);
  int n = 0;
  while (!env.done) {
    env.step({0, 0, 0, 0});
    ++n;
  }
  REQUIRE(n == 40);
  REQUIRE_FALSE(env.failed);
  REQUIRE_THROWS_AS(env.step({0, 0, 0, 0}), std::logic_error);
}

TEST_CASE("tracker failure ends the episode with the terminal penalty") {
  auto t = constant_traj(0.0, 0.0, 0.0);
  cmp::TrackerEnv env;
  env.reset(t);
  double r = 0.0;
  while (!env.done) r = env.step({env.cfg.planar.bounds.lin_acc, 0, 0, 0});
  REQUIRE(env.failed);
  REQUIRE(r <= -5.0);
  REQUIRE(env.t < env.cfg.control_steps);
}

TEST_CASE("tracker goal indexing subsamples the 200 Hz source by four") {
  auto t = constant_traj(0.0, 0.0, 0.0, 100);
  cmp::TrackerEnv env;
  env.reset(t);
  REQUIRE(env.source_index() == 0);
  for (int i = 0; i < 10; ++i) env.step({0, 0, 0, 0});
  REQUIRE(env.source_index() == 40);
  for (int i = 0; i < 20; ++i) env.step({0, 0, 0, 0});
  REQUIRE(env.source_index() == 99);  // clamped at the last sample
}

TEST_CASE("tracker observation pieces have the advertised shapes") {
  auto t = constant_traj(0.2, -0.1, 0.0);
  cmp::TrackerEnv env;
  env.reset(t);
  env.step({0.3, -0.2, 0.1, 0.05});

  const auto f = env.features();
  REQUIRE(f.size() == static_cast<size_t>(cmp::kPlanarFeatureDim));
  REQUIRE(f[0] == env.s.v);
  REQUIRE(f[1] == env.s.om);
  REQUIRE(f[2] == env.s.e);
  REQUIRE(f[3] == env.s.al);
  REQUIRE(f[4] == env.s.de);
  REQUIRE(f[5] == env.s.dal);

  const auto g = env.goal_window();
  REQUIRE(g.size() == static_cast<size_t>(cmp::kGoalDim));
  cmp::PlanarPose shifted_tool = cmp::tool_pose(env.s);
  shifted_tool.x += env.gox;
  shifted_tool.y += env.goy;
  const auto direct = cmp::relative_keyframes(t, env.source_index(), shifted_tool,
                                              env.cfg.goal_stride, env.cfg.goal_k);
  REQUIRE(direct.size() == g.size());
  for (size_t i = 0; i < g.size(); ++i)
    REQUIRE(g[i] == Catch::Approx(direct[i]).margin(1e-12));
}

TEST_CASE("tracker rollouts are bit-for-bit repeatable") {
  auto t = constant_traj(0.1, 0.1, 0.2);
  cmp::Rng rng(7);
  std::vector<cmp::PlanarAction> acts;
  for (int i = 0; i < 120; ++i)
    acts.push_back({rng.normal() * 0.5, rng.normal() * 0.5, rng.normal() * 0.2, rng.normal() * 0.2});

  auto run = [&](std::vector<double>& xs) {
    cmp::TrackerEnv env;
    env.reset(t);
    for (const auto& a : acts) {
      if (env.done) break;
      env.step(a);
      xs.push_back(env.s.x);
      xs.push_back(env.s.y);
      xs.push_back(env.s.th);
    }
  };
  std::vector<double> a, b;
  run(a);
  run(b);
  REQUIRE(a == b);
}
