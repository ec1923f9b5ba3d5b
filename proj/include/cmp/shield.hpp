#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmp {

inline double vec_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Euclidean projection onto the closed ball of the given radius. Vectors
// already inside pass through untouched, which makes reapplication a no-op
// bit for bit. Rescaled outputs are nudged a few ulps inside the boundary so
// that any norm computation — including ones the compiler contracts
// differently at other call sites — still sees them in the ball.
inline std::vector<double> project_to_ball(const std::vector<double>& z, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("project_to_ball: radius must be positive");
  const double n = vec_norm(z);
  if (!std::isfinite(n)) throw std::invalid_argument("project_to_ball: non-finite input");
  if (n <= radius) return z;
  const double snug = radius * (1.0 - 8.0 * std::numeric_limits<double>::epsilon());
  double scale = radius / n;
  std::vector<double> out(z.size());
  for (;;) {
    for (size_t i = 0; i < z.size(); ++i) out[i] = z[i] * scale;
    if (vec_norm(out) <= snug) return out;
    scale = std::nextafter(scale, 0.0);
  }
}

enum class ShieldMode { kNone, kHardStop, kCmp };

inline const char* shield_mode_name(ShieldMode m) {
  switch (m) {
    case ShieldMode::kNone: return "none";
    case ShieldMode::kHardStop: return "hard-stop";
    case ShieldMode::kCmp: return "cmp";
  }
  return "?";
}

inline ShieldMode shield_mode_from_name(const std::string& s) {
  if (s == "none") return ShieldMode::kNone;
  if (s == "hard-stop") return ShieldMode::kHardStop;
  if (s == "cmp") return ShieldMode::kCmp;
  throw std::invalid_argument("unknown shield mode '" + s + "'");
}

// none: passthrough. hard-stop: out-of-ball intents are zeroed outright.
// cmp: nearest in-ball point.
inline std::vector<double> apply_shield(const std::vector<double>& z, double radius,
                                        ShieldMode mode) {
  switch (mode) {
    case ShieldMode::kNone: return z;
    case ShieldMode::kHardStop: {
      if (!(radius > 0.0)) throw std::invalid_argument("apply_shield: radius must be positive");
      if (vec_norm(z) > radius) return std::vector<double>(z.size(), 0.0);
      return z;
    }
    case ShieldMode::kCmp: return project_to_ball(z, radius);
  }
  throw std::logic_error("apply_shield: bad mode");
}

}  // namespace cmp
