#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cmp {

// Generalized advantage estimation over one contiguous segment. done[t] marks
// steps that end an episode (failure or timeout): the value beyond them is
// masked to zero. last_value bootstraps a segment that was cut mid-episode.
inline std::vector<double> gae_advantages(const std::vector<double>& rewards,
                                          const std::vector<double>& values,
                                          const std::vector<std::uint8_t>& done,
                                          double last_value, double gamma, double lambda) {
  const size_t n = rewards.size();
  if (values.size() != n || done.size() != n)
    throw std::invalid_argument("gae_advantages: input length mismatch");
  if (gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("gae_advantages: gamma/lambda must be in [0,1]");
  std::vector<double> adv(n);
  double carry = 0.0;
  for (size_t i = n; i-- > 0;) {
    const double next_v = (i + 1 < n) ? values[i + 1] : last_value;
    const double mask = done[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_v * mask - values[i];
    carry = delta + gamma * lambda * mask * carry;
    adv[i] = carry;
  }
  return adv;
}

// In-place shift/scale to zero mean and unit standard deviation (population
// convention). A constant batch maps to all zeros.
inline void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  double mu = 0.0;
  for (double a : adv) mu += a;
  mu /= adv.size();
  double var = 0.0;
  for (double a : adv) var += (a - mu) * (a - mu);
  const double sd = std::sqrt(var / adv.size());
  for (double& a : adv) a = (a - mu) / (sd + 1e-8);
}

// Pessimistic clipped policy objective for one sample, to be maximized.
// dratio is d(obj)/d(ratio), zero on the clipped plateau.
struct SurrogateTerm {
  double obj = 0.0;
  double dratio = 0.0;
};

inline SurrogateTerm clipped_surrogate(double ratio, double adv, double clip) {
  if (!(clip > 0.0)) throw std::invalid_argument("clipped_surrogate: clip must be positive");
  const double lo = 1.0 - clip, hi = 1.0 + clip;
  const double unclipped = ratio * adv;
  const double clipped = std::clamp(ratio, lo, hi) * adv;
  if (unclipped <= clipped) return {unclipped, adv};
  return {clipped, (ratio > lo && ratio < hi) ? adv : 0.0};
}

// Linear warm-up of the bottleneck weight from 0 to beta_final over ramp
// iterations, flat afterwards.
inline double beta_kl_schedule(double beta_final, long long iter, long long ramp) {
  if (iter < 0) throw std::invalid_argument("beta_kl_schedule: negative iteration");
  if (ramp <= 0) return beta_final;
  const double f = std::min(1.0, static_cast<double>(iter) / static_cast<double>(ramp));
  return beta_final * f;
}

// Nonnegative estimator of KL(old || new) from likelihood ratios
// (ratio - 1 - log ratio averaged over samples).
inline double kl_from_ratios(const std::vector<double>& ratios) {
  if (ratios.empty()) return 0.0;
  double acc = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("kl_from_ratios: ratios must be positive");
    acc += r - 1.0 - std::log(r);
  }
  return acc / ratios.size();
}

}  // namespace cmp
