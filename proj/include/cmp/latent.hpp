#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmp/rng.hpp"

namespace cmp {

inline constexpr double kLogSigmaLo = -5.0;
inline constexpr double kLogSigmaHi = 2.0;
inline constexpr double kSigmaFloor = 1e-4;

// The intent encoder emits 2d numbers: d means followed by d raw log-stds.
// dsig_dlog carries d(sigma)/d(log-sigma) per dimension, zeroed where the
// clamp or the floor is active, so backprop can treat the head uniformly.
struct LatentHead {
  std::vector<double> mu, sigma, dsig_dlog;

  int dim() const { return static_cast<int>(mu.size()); }
};

inline LatentHead split_latent_head(const std::vector<double>& head) {
  if (head.empty() || head.size() % 2 != 0)
    throw std::invalid_argument("split_latent_head: head size must be even and nonzero");
  const size_t d = head.size() / 2;
  LatentHead out;
  out.mu.assign(head.begin(), head.begin() + d);
  out.sigma.resize(d);
  out.dsig_dlog.resize(d);
  for (size_t i = 0; i < d; ++i) {
    const double raw = head[d + i];
    const double cl = std::clamp(raw, kLogSigmaLo, kLogSigmaHi);
    double sg = std::exp(cl);
    bool flat = (raw != cl);
    if (sg < kSigmaFloor) {
      sg = kSigmaFloor;
      flat = true;
    }
    out.sigma[i] = sg;
    out.dsig_dlog[i] = flat ? 0.0 : sg;
  }
  return out;
}

// Chain (dL/dmu, dL/dsigma) back onto the raw 2d head vector.
inline std::vector<double> latent_head_backward(const LatentHead& h,
                                                const std::vector<double>& dmu,
                                                const std::vector<double>& dsigma) {
  const size_t d = h.mu.size();
  if (dmu.size() != d || dsigma.size() != d)
    throw std::invalid_argument("latent_head_backward: gradient size mismatch");
  std::vector<double> dhead(2 * d);
  for (size_t i = 0; i < d; ++i) {
    dhead[i] = dmu[i];
    dhead[d + i] = dsigma[i] * h.dsig_dlog[i];
  }
  return dhead;
}

struct LatentSample {
  std::vector<double> z, eps;
};

inline LatentSample sample_latent(const LatentHead& h, Rng& rng) {
  LatentSample s;
  const size_t d = h.mu.size();
  s.z.resize(d);
  s.eps.resize(d);
  for (size_t i = 0; i < d; ++i) {
    s.eps[i] = rng.normal();
    s.z[i] = h.mu[i] + h.sigma[i] * s.eps[i];
  }
  return s;
}

// Competence-to-radius: confident states earn small balls, incompetent ones
// large. The batch mean enters through the additive offset 1 - w_bar, which
// keeps the map centered: w == w_bar always lands on radius 1.
inline double radius_map(double w, double w_bar, double r_min = 0.1, double r_max = 10.0) {
  if (!(r_min > 0.0) || !(r_max >= r_min))
    throw std::invalid_argument("radius_map: need 0 < r_min <= r_max");
  const double q = w + 1.0 - w_bar;
  if (q <= 0.0) return r_max;
  return std::clamp(1.0 / (q * q * q), r_min, r_max);
}

// KL( N(mu, diag(sigma^2)) || N(0, R^2 I) ), summed over dimensions.
inline double ils_kl_loss(const std::vector<double>& mu, const std::vector<double>& sigma,
                          double radius) {
  if (mu.size() != sigma.size())
    throw std::invalid_argument("ils_kl_loss: mu/sigma size mismatch");
  if (!(radius > 0.0)) throw std::invalid_argument("ils_kl_loss: radius must be positive");
  const double r2 = radius * radius;
  double acc = 0.0;
  for (size_t i = 0; i < mu.size(); ++i) {
    const double s = sigma[i];
    if (!(s > 0.0)) throw std::invalid_argument("ils_kl_loss: sigma must be positive");
    acc += std::log(radius / s) + (s * s + mu[i] * mu[i]) / (2.0 * r2) - 0.5;
  }
  return acc;
}

inline void ils_kl_grad(const std::vector<double>& mu, const std::vector<double>& sigma,
                        double radius, std::vector<double>& dmu, std::vector<double>& dsigma) {
  const double r2 = radius * radius;
  dmu.resize(mu.size());
  dsigma.resize(mu.size());
  for (size_t i = 0; i < mu.size(); ++i) {
    dmu[i] = mu[i] / r2;
    dsigma[i] = sigma[i] / r2 - 1.0 / sigma[i];
  }
}

enum class LatentReg { kNone, kCvae, kScvae, kCmp };

inline const char* latent_reg_name(LatentReg m) {
  switch (m) {
    case LatentReg::kNone: return "none";
    case LatentReg::kCvae: return "cvae";
    case LatentReg::kScvae: return "scvae";
    case LatentReg::kCmp: return "cmp";
  }
  return "?";
}

inline LatentReg latent_reg_from_name(const std::string& s) {
  if (s == "none") return LatentReg::kNone;
  if (s == "cvae") return LatentReg::kCvae;
  if (s == "scvae") return LatentReg::kScvae;
  if (s == "cmp") return LatentReg::kCmp;
  throw std::invalid_argument("unknown latent regularizer '" + s + "'");
}

// Per-row regularizer output. Rows a mode skips keep loss 0, zero gradients,
// and radius 0 as the "not constrained" marker.
struct KlTerm {
  double loss = 0.0;
  double radius = 0.0;
  std::vector<double> dmu, dsigma;
};

// w = safety targets aligned with the heads; static_radius is only consulted
// by the cvae mode. scvae regularizes strictly-above-average rows toward the
// unit ball; cmp gives every row its competence-mapped radius.
inline std::vector<KlTerm> kl_regularizer(LatentReg mode, const std::vector<LatentHead>& heads,
                                          const std::vector<double>& w,
                                          double static_radius = 1.0,
                                          double r_min = 0.1, double r_max = 10.0) {
  if (heads.size() != w.size())
    throw std::invalid_argument("kl_regularizer: heads/w size mismatch");
  std::vector<KlTerm> out(heads.size());
  for (size_t i = 0; i < heads.size(); ++i) {
    out[i].dmu.assign(heads[i].mu.size(), 0.0);
    out[i].dsigma.assign(heads[i].mu.size(), 0.0);
  }
  if (mode == LatentReg::kNone || heads.empty()) return out;

  double w_bar = 0.0;
  for (double x : w) w_bar += x;
  w_bar /= w.size();

  for (size_t i = 0; i < heads.size(); ++i) {
    double radius = 0.0;
    switch (mode) {
      case LatentReg::kCvae: radius = static_radius; break;
      case LatentReg::kScvae:
        if (!(w[i] > w_bar)) continue;
        radius = 1.0;
        break;
      case LatentReg::kCmp: radius = radius_map(w[i], w_bar, r_min, r_max); break;
      case LatentReg::kNone: break;
    }
    out[i].radius = radius;
    out[i].loss = ils_kl_loss(heads[i].mu, heads[i].sigma, radius);
    ils_kl_grad(heads[i].mu, heads[i].sigma, radius, out[i].dmu, out[i].dsigma);
  }
  return out;
}

}  // namespace cmp
