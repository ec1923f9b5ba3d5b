#pragma once

#include <cmath>
#include <cstdio>
#include <vector>

namespace cmp {

// Adam with bias correction; moments and step counter are checkpointable state
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<double> m;
  std::vector<double> v;
  long long rejected = 0;

  explicit Adam(std::size_t n = 0, double lr_ = 1e-3) : lr(lr_), m(n, 0.0), v(n, 0.0) {}
};

// One update in place. A non-finite gradient rejects the whole step: parameters,
// moments and the step counter stay untouched and the incident is counted.
inline bool adam_step(Adam& opt, std::vector<double>& params, const std::vector<double>& grads) {
  if (params.size() != grads.size() || params.size() != opt.m.size()) return false;
  for (double g : grads) {
    if (!std::isfinite(g)) {
      ++opt.rejected;
      std::fprintf(stderr, "[adam] non-finite gradient, step %lld rejected\n", opt.step + 1);
      return false;
    }
  }
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * grads[i];
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * grads[i] * grads[i];
    const double mhat = opt.m[i] / c1;
    const double vhat = opt.v[i] / c2;
    params[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
  return true;
}

// Learning-rate adaptation driven by the mean policy KL of the last update:
// halve above 2x target, double below 0.5x target.
inline double adapt_lr(double lr, double mean_kl, double target_kl,
                       double lr_min = 1e-6, double lr_max = 1e-2) {
  if (mean_kl > 2.0 * target_kl) lr *= 0.5;
  else if (mean_kl < 0.5 * target_kl && mean_kl >= 0.0) lr *= 2.0;
  if (lr < lr_min) lr = lr_min;
  if (lr > lr_max) lr = lr_max;
  return lr;
}

}  // namespace cmp
