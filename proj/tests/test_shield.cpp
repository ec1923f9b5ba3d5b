#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "cmp/rng.hpp"
#include "cmp/shield.hpp"

namespace {

std::vector<double> random_vec(cmp::Rng& rng, int d, double scale) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("projection worked example") {
  const auto p = cmp::project_to_ball({3.0, 4.0, 0.0, 0.0, 0.0, 0.0}, 2.5);
  const std::vector<double> want = {1.5, 2.0, 0.0, 0.0, 0.0, 0.0};
  REQUIRE(p.size() == want.size());
  for (size_t i = 0; i < p.size(); ++i) REQUIRE(p[i] == Catch::Approx(want[i]).margin(1e-12));
}

TEST_CASE("in-ball vectors pass through untouched") {
  const std::vector<double> z = {0.3, -0.2, 0.1};
  REQUIRE(cmp::project_to_ball(z, 1.0) == z);
  const std::vector<double> zero(6, 0.0);
  REQUIRE(cmp::project_to_ball(zero, 0.5) == zero);
  const std::vector<double> edge = {2.0, 0.0};
  REQUIRE(cmp::project_to_ball(edge, 2.0) == edge);
}

TEST_CASE("projection never leaves the ball") {
  cmp::Rng rng(41);
  for (int i = 0; i < 100000; ++i) {
    const double scale = std::exp(rng.normal() * 2.0);  // norms from ~0 to huge
    const auto z = random_vec(rng, 6, scale);
    const double r = 0.1 + 3.0 * rng.u01();
    REQUIRE(cmp::vec_norm(cmp::project_to_ball(z, r)) <= r);
  }
}

TEST_CASE("projection is idempotent bit for bit") {
  cmp::Rng rng(42);
  for (int i = 0; i < 10000; ++i) {
    const auto z = random_vec(rng, 6, std::exp(rng.normal()));
    const double r = 0.2 + 2.0 * rng.u01();
    const auto once = cmp::project_to_ball(z, r);
    REQUIRE(cmp::project_to_ball(once, r) == once);
  }
}

TEST_CASE("projection contracts distances") {
  cmp::Rng rng(43);
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_vec(rng, 6, std::exp(rng.normal()));
    const auto b = random_vec(rng, 6, std::exp(rng.normal()));
    const double r = 0.2 + 2.0 * rng.u01();
    REQUIRE(dist(cmp::project_to_ball(a, r), cmp::project_to_ball(b, r)) <=
            dist(a, b) + 1e-12);
  }
}

TEST_CASE("projection lands on the nearest in-ball point") {
  cmp::Rng rng(44);
  for (int i = 0; i < 500; ++i) {
    const auto z = random_vec(rng, 5, 2.0);
    const double r = 0.3 + 1.5 * rng.u01();
    const auto p = cmp::project_to_ball(z, r);
    const double d_proj = dist(z, p);

    // sampled search over feasible competitors
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 400; ++k) {
      auto y = random_vec(rng, 5, 1.0);
      const double n = cmp::vec_norm(y);
      const double target = r * std::pow(rng.u01(), 1.0 / 5.0);
      for (auto& c : y) c *= target / n;
      best = std::min(best, dist(z, y));
    }
    REQUIRE(d_proj <= best + 1e-12);
  }
}

TEST_CASE("projection keeps the direction and is monotone in the radius") {
  cmp::Rng rng(45);
  for (int i = 0; i < 2000; ++i) {
    const auto z = random_vec(rng, 4, 3.0);
    const double r1 = 0.2 + rng.u01();
    const double r2 = r1 + rng.u01();
    const auto p1 = cmp::project_to_ball(z, r1);
    const auto p2 = cmp::project_to_ball(z, r2);
    REQUIRE(cmp::vec_norm(p1) <= cmp::vec_norm(p2) + 1e-15);

    double dot = 0.0;
    for (size_t j = 0; j < z.size(); ++j) dot += p1[j] * z[j];
    REQUIRE(dot >= 0.0);
    REQUIRE(std::abs(dot - cmp::vec_norm(p1) * cmp::vec_norm(z)) <=
            1e-9 * std::max(1.0, cmp::vec_norm(z)));
  }
}

TEST_CASE("projection rejects bad inputs") {
  REQUIRE_THROWS_AS(cmp::project_to_ball({1.0}, 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(cmp::project_to_ball({1.0}, -2.0), std::invalid_argument);
  REQUIRE_THROWS_AS(cmp::project_to_ball({std::nan("")}, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(cmp::project_to_ball({std::numeric_limits<double>::infinity()}, 1.0),
                    std::invalid_argument);
}

TEST_CASE("shield modes") {
  const std::vector<double> inside = {0.5, 0.5};
  const std::vector<double> outside = {30.0, 40.0};

  SECTION("none is a passthrough at any norm") {
    REQUIRE(cmp::apply_shield(inside, 1.0, cmp::ShieldMode::kNone) == inside);
    REQUIRE(cmp::apply_shield(outside, 1.0, cmp::ShieldMode::kNone) == outside);
  }

  SECTION("hard-stop zeroes out-of-ball intents and keeps the rest") {
    REQUIRE(cmp::apply_shield(inside, 1.0, cmp::ShieldMode::kHardStop) == inside);
    REQUIRE(cmp::apply_shield(outside, 1.0, cmp::ShieldMode::kHardStop) ==
            std::vector<double>{0.0, 0.0});
    const std::vector<double> edge = {1.0, 0.0};
    REQUIRE(cmp::apply_shield(edge, 1.0, cmp::ShieldMode::kHardStop) == edge);
  }

  SECTION("cmp is the ball projection") {
    REQUIRE(cmp::apply_shield(outside, 2.5, cmp::ShieldMode::kCmp) ==
            cmp::project_to_ball(outside, 2.5));
  }

  SECTION("a huge radius makes cmp behave exactly like none") {
    cmp::Rng rng(46);
    for (int i = 0; i < 5000; ++i) {
      const auto z = random_vec(rng, 6, 4.0);
      REQUIRE(cmp::apply_shield(z, 100.0, cmp::ShieldMode::kCmp) ==
              cmp::apply_shield(z, 100.0, cmp::ShieldMode::kNone));
    }
  }
}

TEST_CASE("shield mode names round-trip") {
  for (auto m : {cmp::ShieldMode::kNone, cmp::ShieldMode::kHardStop, cmp::ShieldMode::kCmp})
    REQUIRE(cmp::shield_mode_from_name(cmp::shield_mode_name(m)) == m);
  REQUIRE_THROWS_AS(cmp::shield_mode_from_name("soft"), std::invalid_argument);
}
