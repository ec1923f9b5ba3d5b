#pragma once

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cmp/estimator.hpp"
#include "cmp/latent.hpp"
#include "cmp/net.hpp"
#include "cmp/planar.hpp"
#include "cmp/rng.hpp"
#include "cmp/serialize.hpp"
#include "cmp/shield.hpp"

namespace cmp {

// Everything the agent carries: intent encoder, conditioned policy, value
// critic, and the safety head with its own optimizer. The action distribution
// is a diagonal Gaussian around the policy output with one learnable,
// state-independent log-std per action dimension.
struct PolicyBundle {
  DenseNet encoder;        // features+goal -> 2*latent (means, log-stds)
  DenseNet policy;         // features+latent -> action means
  DenseNet critic;         // features+goal -> value
  SafetyEstimator omega;   // features+latent -> survival probability
  std::vector<double> log_std;
  int latent_dim = 6;

  int feature_dim() const { return policy.in_dim() - latent_dim; }
  int goal_dim() const { return encoder.in_dim() - feature_dim(); }
  int action_dim() const { return policy.out_dim(); }
};

struct BundleSpec {
  int feature_dim = kPlanarFeatureDim;
  int goal_dim = kGoalDim;
  int latent_dim = 6;
  int action_dim = 4;
  std::vector<int> encoder_hidden = {32, 32};
  std::vector<int> policy_hidden = {32, 32};
  std::vector<int> critic_hidden = {32, 32};
  std::vector<int> estimator_hidden = {32, 32};
  double log_std_init = -1.0;
  double log_sigma_init = -2.0;
  double estimator_lr = 1e-3;
};

inline PolicyBundle make_bundle(const BundleSpec& spec, Rng& rng) {
  if (spec.latent_dim < 1 || spec.action_dim < 1)
    throw std::invalid_argument("make_bundle: bad dimensions");
  PolicyBundle b;
  b.latent_dim = spec.latent_dim;

  std::vector<int> ew = {spec.feature_dim + spec.goal_dim};
  ew.insert(ew.end(), spec.encoder_hidden.begin(), spec.encoder_hidden.end());
  ew.push_back(2 * spec.latent_dim);
  b.encoder = make_dense(ew, Act::kElu, Act::kIdentity, rng);
  // start the latent channel tight: a wide fresh sigma drowns the goal signal
  // in per-step resampling noise and the policy never picks up the task
  for (int i = 0; i < spec.latent_dim; ++i)
    b.encoder.b.back()[spec.latent_dim + i] = spec.log_sigma_init;

  std::vector<int> pw = {spec.feature_dim + spec.latent_dim};
  pw.insert(pw.end(), spec.policy_hidden.begin(), spec.policy_hidden.end());
  pw.push_back(spec.action_dim);
  b.policy = make_dense(pw, Act::kElu, Act::kIdentity, rng);

  std::vector<int> cw = {spec.feature_dim + spec.goal_dim};
  cw.insert(cw.end(), spec.critic_hidden.begin(), spec.critic_hidden.end());
  cw.push_back(1);
  b.critic = make_dense(cw, Act::kElu, Act::kIdentity, rng);

  b.omega = make_estimator(spec.feature_dim, spec.latent_dim, spec.estimator_hidden, rng,
                           spec.estimator_lr);
  b.log_std.assign(spec.action_dim, spec.log_std_init);
  return b;
}

// --- diagonal Gaussian action head ---

inline double gauss_log_prob(const std::vector<double>& a, const std::vector<double>& mu,
                             const std::vector<double>& log_std) {
  if (a.size() != mu.size() || a.size() != log_std.size())
    throw std::invalid_argument("gauss_log_prob: size mismatch");
  constexpr double kLogTwoPi = 1.8378770664093454836;
  double lp = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double sd = std::exp(log_std[i]);
    const double u = (a[i] - mu[i]) / sd;
    lp += -0.5 * u * u - log_std[i] - 0.5 * kLogTwoPi;
  }
  return lp;
}

// gradients of the log-density wrt the mean and the log-std
inline void gauss_log_prob_grad(const std::vector<double>& a, const std::vector<double>& mu,
                                const std::vector<double>& log_std, std::vector<double>& dmu,
                                std::vector<double>& dlog_std) {
  dmu.resize(a.size());
  dlog_std.resize(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    const double sd = std::exp(log_std[i]);
    const double u = (a[i] - mu[i]) / sd;
    dmu[i] = u / sd;
    dlog_std[i] = u * u - 1.0;
  }
}

inline std::vector<double> gauss_sample(const std::vector<double>& mu,
                                        const std::vector<double>& log_std, Rng& rng) {
  std::vector<double> a(mu.size());
  for (size_t i = 0; i < mu.size(); ++i) a[i] = mu[i] + std::exp(log_std[i]) * rng.normal();
  return a;
}

inline double gauss_entropy(const std::vector<double>& log_std) {
  constexpr double kHalfLogTwoPiE = 1.4189385332046727418;
  double h = 0.0;
  for (double ls : log_std) h += ls + kHalfLogTwoPiE;
  return h;
}

// --- runtime inference ---

struct InferResult {
  std::vector<double> action;  // action-distribution mean after shielding
  std::vector<double> z;       // shielded latent that conditioned the policy
};

// Wall-clock split of one inference call, so the shield's cost can be audited
// separately from the network forwards.
struct InferTiming {
  double net_us = 0.0;     // encoder + policy forwards
  double shield_us = 0.0;  // latent projection only
  double total_us() const { return net_us + shield_us; }
};

// The deterministic path takes the encoder mean; the stochastic one draws a
// reparameterized sample. Either way the latent crosses the shield before the
// policy sees it, and the safety head is never consulted. Pass a timing probe
// to record the per-call cost; leave it null on the training path.
inline InferResult infer_action(const PolicyBundle& b, const std::vector<double>& features,
                                const std::vector<double>& goal, double radius, ShieldMode mode,
                                bool deterministic = true, Rng* rng = nullptr,
                                InferTiming* timing = nullptr) {
  if (static_cast<int>(features.size()) != b.feature_dim())
    throw std::invalid_argument("infer_action: feature dim mismatch");
  if (static_cast<int>(goal.size()) != b.goal_dim())
    throw std::invalid_argument("infer_action: goal dim mismatch");
  using Clock = std::chrono::steady_clock;
  const auto us_between = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::micro>(b - a).count();
  };

  const auto t0 = timing ? Clock::now() : Clock::time_point{};
  std::vector<double> enc_in = features;
  enc_in.insert(enc_in.end(), goal.begin(), goal.end());
  const LatentHead head = split_latent_head(forward(b.encoder, enc_in));

  std::vector<double> z;
  if (deterministic) {
    z = head.mu;
  } else {
    if (!rng) throw std::invalid_argument("infer_action: stochastic mode needs an rng");
    z = sample_latent(head, *rng).z;
  }
  const auto t1 = timing ? Clock::now() : Clock::time_point{};
  z = apply_shield(z, radius, mode);
  const auto t2 = timing ? Clock::now() : Clock::time_point{};

  std::vector<double> pol_in = features;
  pol_in.insert(pol_in.end(), z.begin(), z.end());
  InferResult out{forward(b.policy, pol_in), std::move(z)};
  if (timing) {
    const auto t3 = Clock::now();
    timing->shield_us = us_between(t1, t2);
    timing->net_us = us_between(t0, t1) + us_between(t2, t3);
  }
  return out;
}

// --- serialization ---

inline void write_bundle(BinWriter& w, const PolicyBundle& b) {
  w.u32(static_cast<std::uint32_t>(b.latent_dim));
  write_net(w, b.encoder);
  write_net(w, b.policy);
  write_net(w, b.critic);
  write_net(w, b.omega.net);
  write_adam(w, b.omega.opt);
  w.i64(b.omega.skipped);
  w.f64s(b.log_std);
}

inline PolicyBundle read_bundle(BinReader& r) {
  PolicyBundle b;
  b.latent_dim = static_cast<int>(r.u32());
  b.encoder = read_net(r);
  b.policy = read_net(r);
  b.critic = read_net(r);
  b.omega.net = read_net(r);
  b.omega.opt = read_adam(r);
  b.omega.skipped = r.i64();
  b.log_std = r.f64s();
  if (b.policy.in_dim() <= b.latent_dim)
    throw std::runtime_error("bundle: policy input narrower than the latent");
  return b;
}

}  // namespace cmp
