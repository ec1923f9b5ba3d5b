#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmp/gae.hpp"
#include "cmp/policy.hpp"
#include "cmp/td_targets.hpp"
#include "cmp/trajectory.hpp"

namespace cmp {

struct TrainConfig {
  std::uint64_t seed = 0;
  int iterations = 300;
  int num_envs = 64;
  int horizon = 128;
  int checkpoint_every = 50;

  BundleSpec model;

  double gamma = 0.9;
  double gae_lambda = 0.95;
  double clip = 0.2;
  int epochs = 32;
  int minibatches = 4;
  double lr_init = 3e-4;
  double lr_min = 1e-6;
  double lr_max = 1e-2;
  double kl_target = 0.01;
  double entropy_coef = 0.0;
  double critic_lr = 1e-3;

  LatentReg regularizer = LatentReg::kCmp;
  double beta_kl = 1e-3;
  long long beta_ramp = 100;  // reach full beta_kl a third of the way into a default run
  double static_radius = 1.0;
  double r_min = 0.1;
  double r_max = 10.0;

  double td_lambda = 0.8;
  bool bootstrap_timeout = false;
  int estimator_updates = 64;
  int estimator_batch = 256;

  TrackerConfig tracker;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw std::invalid_argument("config: unknown key '" + item.key() + "' in " + where);
}

}  // namespace detail

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["iterations"] = c.iterations;
  j["num_envs"] = c.num_envs;
  j["horizon"] = c.horizon;
  j["checkpoint_every"] = c.checkpoint_every;
  j["latent_dim"] = c.model.latent_dim;
  j["encoder_hidden"] = c.model.encoder_hidden;
  j["policy_hidden"] = c.model.policy_hidden;
  j["critic_hidden"] = c.model.critic_hidden;
  j["estimator_hidden"] = c.model.estimator_hidden;
  j["log_std_init"] = c.model.log_std_init;
  j["log_sigma_init"] = c.model.log_sigma_init;
  j["estimator_lr"] = c.model.estimator_lr;
  j["gamma"] = c.gamma;
  j["gae_lambda"] = c.gae_lambda;
  j["clip"] = c.clip;
  j["epochs"] = c.epochs;
  j["minibatches"] = c.minibatches;
  j["lr_init"] = c.lr_init;
  j["lr_min"] = c.lr_min;
  j["lr_max"] = c.lr_max;
  j["kl_target"] = c.kl_target;
  j["entropy_coef"] = c.entropy_coef;
  j["critic_lr"] = c.critic_lr;
  j["regularizer"] = latent_reg_name(c.regularizer);
  j["beta_kl"] = c.beta_kl;
  j["beta_ramp"] = c.beta_ramp;
  j["static_radius"] = c.static_radius;
  j["r_min"] = c.r_min;
  j["r_max"] = c.r_max;
  j["td_lambda"] = c.td_lambda;
  j["bootstrap_timeout"] = c.bootstrap_timeout;
  j["estimator_updates"] = c.estimator_updates;
  j["estimator_batch"] = c.estimator_batch;
  j["control_steps"] = c.tracker.control_steps;
  j["subsample"] = c.tracker.subsample;
  j["goal_stride"] = c.tracker.goal_stride;
  j["goal_k"] = c.tracker.goal_k;
  j["start_e"] = c.tracker.start_e;
  nlohmann::json p;
  const PlanarConfig& pc = c.tracker.planar;
  p["dt"] = pc.dt;
  p["lin_acc"] = pc.bounds.lin_acc;
  p["yaw_acc"] = pc.bounds.yaw_acc;
  p["ext_acc"] = pc.bounds.ext_acc;
  p["lat_acc"] = pc.bounds.lat_acc;
  p["v_max"] = pc.limits.v_max;
  p["om_max"] = pc.limits.om_max;
  p["alpha_max"] = pc.limits.alpha_max;
  p["arena_half"] = pc.limits.arena_half;
  p["e_lo"] = pc.e_lo;
  p["e_hi"] = pc.e_hi;
  j["planar"] = p;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::check_keys(
      j,
      {"seed", "iterations", "num_envs", "horizon", "checkpoint_every", "latent_dim",
       "encoder_hidden", "policy_hidden", "critic_hidden", "estimator_hidden", "log_std_init",
       "log_sigma_init", "estimator_lr", "gamma", "gae_lambda", "clip", "epochs", "minibatches",
       "lr_init",
       "lr_min", "lr_max", "kl_target", "entropy_coef", "critic_lr", "regularizer", "beta_kl",
       "beta_ramp", "static_radius", "r_min", "r_max", "td_lambda", "bootstrap_timeout",
       "estimator_updates", "estimator_batch", "control_steps", "subsample", "goal_stride",
       "goal_k", "start_e", "planar"},
      "train config");
  TrainConfig c;
  c.seed = j.value("seed", c.seed);
  c.iterations = j.value("iterations", c.iterations);
  c.num_envs = j.value("num_envs", c.num_envs);
  c.horizon = j.value("horizon", c.horizon);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.model.latent_dim = j.value("latent_dim", c.model.latent_dim);
  c.model.encoder_hidden = j.value("encoder_hidden", c.model.encoder_hidden);
  c.model.policy_hidden = j.value("policy_hidden", c.model.policy_hidden);
  c.model.critic_hidden = j.value("critic_hidden", c.model.critic_hidden);
  c.model.estimator_hidden = j.value("estimator_hidden", c.model.estimator_hidden);
  c.model.log_std_init = j.value("log_std_init", c.model.log_std_init);
  c.model.log_sigma_init = j.value("log_sigma_init", c.model.log_sigma_init);
  c.model.estimator_lr = j.value("estimator_lr", c.model.estimator_lr);
  c.gamma = j.value("gamma", c.gamma);
  c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
  c.clip = j.value("clip", c.clip);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatches = j.value("minibatches", c.minibatches);
  c.lr_init = j.value("lr_init", c.lr_init);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.lr_max = j.value("lr_max", c.lr_max);
  c.kl_target = j.value("kl_target", c.kl_target);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.critic_lr = j.value("critic_lr", c.critic_lr);
  if (j.contains("regularizer")) c.regularizer = latent_reg_from_name(j["regularizer"]);
  c.beta_kl = j.value("beta_kl", c.beta_kl);
  c.beta_ramp = j.value("beta_ramp", c.beta_ramp);
  c.static_radius = j.value("static_radius", c.static_radius);
  c.r_min = j.value("r_min", c.r_min);
  c.r_max = j.value("r_max", c.r_max);
  c.td_lambda = j.value("td_lambda", c.td_lambda);
  c.bootstrap_timeout = j.value("bootstrap_timeout", c.bootstrap_timeout);
  c.estimator_updates = j.value("estimator_updates", c.estimator_updates);
  c.estimator_batch = j.value("estimator_batch", c.estimator_batch);
  c.tracker.control_steps = j.value("control_steps", c.tracker.control_steps);
  c.tracker.subsample = j.value("subsample", c.tracker.subsample);
  c.tracker.goal_stride = j.value("goal_stride", c.tracker.goal_stride);
  c.tracker.goal_k = j.value("goal_k", c.tracker.goal_k);
  c.tracker.start_e = j.value("start_e", c.tracker.start_e);
  if (j.contains("planar")) {
    const auto& p = j["planar"];
    detail::check_keys(p,
                       {"dt", "lin_acc", "yaw_acc", "ext_acc", "lat_acc", "v_max", "om_max",
                        "alpha_max", "arena_half", "e_lo", "e_hi"},
                       "planar config");
    PlanarConfig& pc = c.tracker.planar;
    pc.dt = p.value("dt", pc.dt);
    pc.bounds.lin_acc = p.value("lin_acc", pc.bounds.lin_acc);
    pc.bounds.yaw_acc = p.value("yaw_acc", pc.bounds.yaw_acc);
    pc.bounds.ext_acc = p.value("ext_acc", pc.bounds.ext_acc);
    pc.bounds.lat_acc = p.value("lat_acc", pc.bounds.lat_acc);
    pc.limits.v_max = p.value("v_max", pc.limits.v_max);
    pc.limits.om_max = p.value("om_max", pc.limits.om_max);
    pc.limits.alpha_max = p.value("alpha_max", pc.limits.alpha_max);
    pc.limits.arena_half = p.value("arena_half", pc.limits.arena_half);
    pc.e_lo = p.value("e_lo", pc.e_lo);
    pc.e_hi = p.value("e_hi", pc.e_hi);
  }
  if (c.num_envs < 1 || c.horizon < 1 || c.minibatches < 1 || c.epochs < 1 || c.iterations < 0)
    throw std::invalid_argument("config: counts must be positive (iterations may be zero)");
  if (c.num_envs * c.horizon % c.minibatches != 0)
    throw std::invalid_argument("config: num_envs*horizon must divide by minibatches");
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, true, false);
  return train_config_from_json(j);
}

// --- training state and checkpoints ---

struct TrainState {
  TrainConfig cfg;
  PolicyBundle bundle;
  Adam opt_encoder, opt_policy, opt_critic;  // opt_policy also covers log_std
  double lr = 3e-4;
  long long iteration = 0;
  long long episodes = 0;
  long long failures = 0;
  long long resets = 0;
  Rng rng{0};
};

inline TrainState make_train_state(const TrainConfig& cfg) {
  TrainState st;
  st.cfg = cfg;
  st.rng = Rng(mix_seed(cfg.seed, 0xA11CE));
  st.bundle = make_bundle(cfg.model, st.rng);
  st.opt_encoder = Adam(st.bundle.encoder.param_count(), cfg.lr_init);
  st.opt_policy =
      Adam(st.bundle.policy.param_count() + st.bundle.log_std.size(), cfg.lr_init);
  st.opt_critic = Adam(st.bundle.critic.param_count(), cfg.critic_lr);
  st.lr = cfg.lr_init;
  return st;
}

inline constexpr char kCkptMagic[] = "CMPCKPT1";

inline void write_checkpoint(BinWriter& w, const TrainState& st) {
  w.str(kCkptMagic);
  w.u32(1);
  w.str(train_config_to_json(st.cfg).dump());
  w.i64(st.iteration);
  w.i64(st.episodes);
  w.i64(st.failures);
  w.i64(st.resets);
  w.f64(st.lr);
  write_bundle(w, st.bundle);
  write_adam(w, st.opt_encoder);
  write_adam(w, st.opt_policy);
  write_adam(w, st.opt_critic);
}

inline void save_checkpoint(const std::string& path, const TrainState& st) {
  BinWriter w;
  write_checkpoint(w, st);
  w.to_file(path);
}

inline TrainState load_checkpoint(const std::string& path) {
  BinReader r = BinReader::from_file(path);
  std::string magic;
  try {
    magic = r.str();
  } catch (const std::exception&) {
    throw std::runtime_error("not a cmp checkpoint: " + path);
  }
  if (magic != kCkptMagic) throw std::runtime_error("not a cmp checkpoint: " + path);
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " in " + path);
  TrainState st;
  st.cfg = train_config_from_json(nlohmann::json::parse(r.str()));
  st.iteration = r.i64();
  st.episodes = r.i64();
  st.failures = r.i64();
  st.resets = r.i64();
  st.lr = r.f64();
  st.bundle = read_bundle(r);
  st.opt_encoder = read_adam(r);
  st.opt_policy = read_adam(r);
  st.opt_critic = read_adam(r);
  st.rng = Rng(mix_seed(st.cfg.seed, 0xE0000 + static_cast<std::uint64_t>(st.iteration)));
  return st;
}

// --- rollout storage ---

struct RolloutStep {
  std::vector<double> features, goal, z, eps, action, next_features;
  double reward = 0.0, value = 0.0, logp = 0.0;
  double w_target = 0.0, adv = 0.0, v_target = 0.0;
  TerminalTag tag = TerminalTag::kContinue;
};

struct RolloutBatch {
  std::vector<std::vector<RolloutStep>> traces;   // one per env, horizon long
  std::vector<double> trunc_value;                // critic bootstrap per env at the cut
  std::vector<std::vector<double>> trunc_features;  // features at the cut state
  std::vector<double> ep_returns;  // episodes that ended inside this window
  std::vector<bool> ep_failed;
};

struct IterStats {
  double surrogate = 0.0, value_loss = 0.0, kl_reg = 0.0, estimator_loss = 0.0;
  double mean_w_target = 0.0, beta = 0.0, lr = 0.0, mean_kl = 0.0;
  double enc_grad_ppo = 0.0, enc_grad_kl = 0.0;
  long long episodes = 0;
  double success_rate = -1.0;  // -1 when no episode ended in the window
  double mean_return = 0.0;
};

namespace detail {

inline std::vector<double> concat(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Fisher-Yates with the training stream so update order is reproducible.
inline void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(i)));
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace detail

// One vectorized rollout window: every env advances horizon steps, resetting
// onto the next trajectory (round-robin) whenever its episode ends. Latents
// are sampled, never shielded — training explores the raw intent space.
inline RolloutBatch collect_rollout(TrainState& st, std::vector<TrackerEnv>& envs,
                                    std::vector<double>& ep_return_acc,
                                    const std::vector<Trajectory>& dataset) {
  const TrainConfig& cfg = st.cfg;
  const int ne = cfg.num_envs;
  RolloutBatch out;
  out.traces.assign(ne, {});
  for (auto& tr : out.traces) tr.reserve(cfg.horizon);
  out.trunc_value.assign(ne, 0.0);
  out.trunc_features.assign(ne, {});

  Mat enc_in(ne, st.bundle.encoder.in_dim());
  Mat pol_in(ne, st.bundle.policy.in_dim());
  FwdCache enc_cache, pol_cache, val_cache;

  for (int t = 0; t < cfg.horizon; ++t) {
    std::vector<std::vector<double>> feats(ne), goals(ne);
    for (int i = 0; i < ne; ++i) {
      feats[i] = envs[i].features();
      goals[i] = envs[i].goal_window();
      const auto row = detail::concat(feats[i], goals[i]);
      std::copy(row.begin(), row.end(), enc_in.row(i));
    }
    const Mat& heads = forward_batch(st.bundle.encoder, enc_in, enc_cache);
    const Mat& values = forward_batch(st.bundle.critic, enc_in, val_cache);

    std::vector<LatentHead> split(ne);
    std::vector<LatentSample> zs(ne);
    for (int i = 0; i < ne; ++i) {
      std::vector<double> head(heads.row(i), heads.row(i) + heads.cols);
      split[i] = split_latent_head(head);
      zs[i] = sample_latent(split[i], st.rng);
      const auto row = detail::concat(feats[i], zs[i].z);
      std::copy(row.begin(), row.end(), pol_in.row(i));
    }
    const Mat& mu_a = forward_batch(st.bundle.policy, pol_in, pol_cache);

    for (int i = 0; i < ne; ++i) {
      RolloutStep s;
      s.features = std::move(feats[i]);
      s.goal = std::move(goals[i]);
      s.z = zs[i].z;
      s.eps = zs[i].eps;
      std::vector<double> mu(mu_a.row(i), mu_a.row(i) + mu_a.cols);
      s.action = gauss_sample(mu, st.bundle.log_std, st.rng);
      s.logp = gauss_log_prob(s.action, mu, st.bundle.log_std);
      s.value = values.row(i)[0];

      PlanarAction act{};
      for (int k = 0; k < 4; ++k) act[k] = s.action[k];
      s.reward = envs[i].step(act);
      ep_return_acc[i] += s.reward;
      s.next_features = envs[i].features();

      if (envs[i].done) {
        s.tag = envs[i].failed ? TerminalTag::kFailure : TerminalTag::kTimeout;
        out.ep_returns.push_back(ep_return_acc[i]);
        out.ep_failed.push_back(envs[i].failed);
        ep_return_acc[i] = 0.0;
        ++st.episodes;
        if (envs[i].failed) ++st.failures;
        envs[i].reset(dataset[static_cast<size_t>(st.resets++) % dataset.size()]);
      }
      out.traces[i].push_back(std::move(s));
    }
  }

  // bootstrap values for segments cut by the window edge
  for (int i = 0; i < ne; ++i) {
    auto& last = out.traces[i].back();
    if (last.tag == TerminalTag::kContinue) {
      last.tag = TerminalTag::kTruncated;
      out.trunc_features[i] = envs[i].features();
      const auto row = detail::concat(out.trunc_features[i], envs[i].goal_window());
      out.trunc_value[i] = forward(st.bundle.critic, row)[0];
    }
  }
  return out;
}

// Safety targets for every rollout row plus standalone records for the
// failure states themselves, so the estimator sees the hazard side too.
inline std::vector<SafetyRecord> label_safety_targets(TrainState& st, RolloutBatch& batch) {
  const int d = st.bundle.latent_dim;
  const std::vector<double> zero_z(d, 0.0);
  std::vector<SafetyRecord> pool;

  for (size_t i = 0; i < batch.traces.size(); ++i) {
    auto& trace = batch.traces[i];
    size_t seg_start = 0;
    for (size_t t = 0; t < trace.size(); ++t) {
      if (trace[t].tag == TerminalTag::kContinue && t + 1 < trace.size()) continue;
      std::vector<SafetyRecord> seg;
      for (size_t k = seg_start; k <= t; ++k) {
        SafetyRecord r;
        r.state = trace[k].features;
        r.z = trace[k].z;
        r.tag = k == t ? trace[t].tag : TerminalTag::kContinue;
        r.bootstrap =
            predict_safety(st.bundle.omega.net,
                           k == t && trace[t].tag == TerminalTag::kTruncated
                               ? batch.trunc_features[i]
                               : trace[k].next_features,
                           zero_z);
        seg.push_back(std::move(r));
      }
      td_lambda_targets(seg, {st.cfg.td_lambda, st.cfg.bootstrap_timeout});
      for (size_t k = seg_start; k <= t; ++k) trace[k].w_target = seg[k - seg_start].target;
      if (trace[t].tag == TerminalTag::kFailure) {
        SafetyRecord hazard;
        hazard.state = trace[t].next_features;
        hazard.z = zero_z;
        hazard.safe = 0.0;
        hazard.tag = TerminalTag::kFailure;
        hazard.target = 0.0;
        seg.push_back(hazard);
      }
      pool.insert(pool.end(), seg.begin(), seg.end());
      seg_start = t + 1;
    }
  }
  return pool;
}

inline void compute_advantages(const TrainConfig& cfg, RolloutBatch& batch) {
  for (size_t i = 0; i < batch.traces.size(); ++i) {
    auto& trace = batch.traces[i];
    std::vector<double> rewards, values;
    std::vector<std::uint8_t> done;
    for (const auto& s : trace) {
      rewards.push_back(s.reward);
      values.push_back(s.value);
      done.push_back(s.tag == TerminalTag::kFailure || s.tag == TerminalTag::kTimeout ? 1 : 0);
    }
    const auto adv =
        gae_advantages(rewards, values, done, batch.trunc_value[i], cfg.gamma, cfg.gae_lambda);
    for (size_t t = 0; t < trace.size(); ++t) {
      trace[t].adv = adv[t];
      trace[t].v_target = adv[t] + trace[t].value;
    }
  }
}

// The PPO/KL joint update. Policy and encoder share the adapted learning
// rate; the encoder's gradient combines the reparameterized policy path with
// the bottleneck KL path, and both contributions are tracked separately.
inline void ppo_update(TrainState& st, RolloutBatch& batch, IterStats& stats) {
  const TrainConfig& cfg = st.cfg;
  std::vector<RolloutStep*> rows;
  for (auto& trace : batch.traces)
    for (auto& s : trace) rows.push_back(&s);
  const int n = static_cast<int>(rows.size());
  const int mb_size = n / cfg.minibatches;
  const int d = st.bundle.latent_dim;
  const int fdim = st.bundle.feature_dim();
  const int adim = st.bundle.action_dim();

  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;

  st.opt_encoder.lr = st.lr;
  st.opt_policy.lr = st.lr;
  st.opt_critic.lr = cfg.critic_lr;
  const double beta = beta_kl_schedule(cfg.beta_kl, st.iteration, cfg.beta_ramp);
  stats.beta = beta;

  std::vector<double> last_epoch_ratios;
  double surr_acc = 0.0, vloss_acc = 0.0, kl_acc = 0.0;
  double enc_ppo_acc = 0.0, enc_kl_acc = 0.0;
  long long update_count = 0;

  FwdCache enc_cache, pol_cache, val_cache;
  NetGrads g_pol, g_enc, g_val;
  std::vector<double> pol_params, pol_grads, enc_params, enc_grads, val_params, val_grads;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::shuffle_indices(idx, st.rng);
    if (epoch + 1 == cfg.epochs) last_epoch_ratios.clear();

    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      const int lo = mb * mb_size, hi = lo + mb_size;
      const int bs = hi - lo;

      Mat enc_in(bs, st.bundle.encoder.in_dim());
      std::vector<double> w_mb(bs);
      for (int r = 0; r < bs; ++r) {
        const RolloutStep& s = *rows[idx[lo + r]];
        const auto row = detail::concat(s.features, s.goal);
        std::copy(row.begin(), row.end(), enc_in.row(r));
        w_mb[r] = s.w_target;
      }
      const Mat& heads = forward_batch(st.bundle.encoder, enc_in, enc_cache);

      std::vector<LatentHead> split(bs);
      Mat pol_in(bs, st.bundle.policy.in_dim());
      for (int r = 0; r < bs; ++r) {
        std::vector<double> head(heads.row(r), heads.row(r) + heads.cols);
        split[r] = split_latent_head(head);
        const RolloutStep& s = *rows[idx[lo + r]];
        double* dst = pol_in.row(r);
        for (int k = 0; k < fdim; ++k) dst[k] = s.features[k];
        for (int k = 0; k < d; ++k)
          dst[fdim + k] = split[r].mu[k] + split[r].sigma[k] * s.eps[k];
      }
      const Mat& mu_a = forward_batch(st.bundle.policy, pol_in, pol_cache);

      std::vector<double> adv_mb(bs);
      for (int r = 0; r < bs; ++r) adv_mb[r] = rows[idx[lo + r]]->adv;
      normalize_advantages(adv_mb);

      // policy loss and its gradient wrt action means / log-std
      Mat dmu_a(bs, adim);
      std::vector<double> dlog_std(adim, 0.0);
      std::vector<double> ratios(bs);
      double surr_obj = 0.0;
      for (int r = 0; r < bs; ++r) {
        const RolloutStep& s = *rows[idx[lo + r]];
        std::vector<double> mu(mu_a.row(r), mu_a.row(r) + adim);
        const double logp = gauss_log_prob(s.action, mu, st.bundle.log_std);
        const double ratio = std::exp(logp - s.logp);
        ratios[r] = ratio;
        const SurrogateTerm term = clipped_surrogate(ratio, adv_mb[r], cfg.clip);
        surr_obj += term.obj;
        // minimize -obj: d(-obj)/dlogp = -dratio * ratio, averaged over the batch
        const double dlogp = -term.dratio * ratio / bs;
        std::vector<double> gmu, gls;
        gauss_log_prob_grad(s.action, mu, st.bundle.log_std, gmu, gls);
        for (int k = 0; k < adim; ++k) {
          dmu_a.row(r)[k] = dlogp * gmu[k];
          dlog_std[k] += dlogp * gls[k];
        }
      }
      surr_obj /= bs;
      for (int k = 0; k < adim; ++k) dlog_std[k] -= cfg.entropy_coef;  // entropy bonus

      backward_batch(st.bundle.policy, pol_cache, dmu_a, g_pol);

      // bottleneck KL on the same minibatch
      const auto kl_terms =
          kl_regularizer(cfg.regularizer, split, w_mb, cfg.static_radius, cfg.r_min, cfg.r_max);
      double kl_mean = 0.0;
      for (const auto& t : kl_terms) kl_mean += t.loss;
      kl_mean /= bs;

      // combine PPO and KL paths on the raw encoder head
      Mat dhead(bs, 2 * d);
      double norm_ppo = 0.0, norm_kl = 0.0;
      for (int r = 0; r < bs; ++r) {
        std::vector<double> dmu_ppo(d), dsig_ppo(d), dmu_kl(d), dsig_kl(d);
        const RolloutStep& s = *rows[idx[lo + r]];
        for (int k = 0; k < d; ++k) {
          const double dz = g_pol.dx.row(r)[fdim + k];
          dmu_ppo[k] = dz;
          dsig_ppo[k] = dz * s.eps[k];
          dmu_kl[k] = beta / bs * kl_terms[r].dmu[k];
          dsig_kl[k] = beta / bs * kl_terms[r].dsigma[k];
        }
        const auto h_ppo = latent_head_backward(split[r], dmu_ppo, dsig_ppo);
        const auto h_kl = latent_head_backward(split[r], dmu_kl, dsig_kl);
        for (int k = 0; k < 2 * d; ++k) {
          dhead.row(r)[k] = h_ppo[k] + h_kl[k];
          norm_ppo += h_ppo[k] * h_ppo[k];
          norm_kl += h_kl[k] * h_kl[k];
        }
      }
      backward_batch(st.bundle.encoder, enc_cache, dhead, g_enc);

      // critic regression on the same rows
      const Mat& v = forward_batch(st.bundle.critic, enc_in, val_cache);
      Mat dv(bs, 1);
      double vloss = 0.0;
      for (int r = 0; r < bs; ++r) {
        const double err = v.row(r)[0] - rows[idx[lo + r]]->v_target;
        vloss += 0.5 * err * err;
        dv.row(r)[0] = err / bs;
      }
      vloss /= bs;
      backward_batch(st.bundle.critic, val_cache, dv, g_val);

      // optimizer steps
      flatten_params(st.bundle.policy, pol_params);
      pol_params.insert(pol_params.end(), st.bundle.log_std.begin(), st.bundle.log_std.end());
      flatten_grads(g_pol, pol_grads);
      pol_grads.insert(pol_grads.end(), dlog_std.begin(), dlog_std.end());
      if (adam_step(st.opt_policy, pol_params, pol_grads)) {
        st.bundle.log_std.assign(pol_params.end() - adim, pol_params.end());
        pol_params.resize(pol_params.size() - adim);
        assign_params(st.bundle.policy, pol_params);
      }

      flatten_params(st.bundle.encoder, enc_params);
      flatten_grads(g_enc, enc_grads);
      if (adam_step(st.opt_encoder, enc_params, enc_grads))
        assign_params(st.bundle.encoder, enc_params);

      flatten_params(st.bundle.critic, val_params);
      flatten_grads(g_val, val_grads);
      if (adam_step(st.opt_critic, val_params, val_grads))
        assign_params(st.bundle.critic, val_params);

      surr_acc += surr_obj;
      vloss_acc += vloss;
      kl_acc += kl_mean;
      enc_ppo_acc += std::sqrt(norm_ppo);
      enc_kl_acc += std::sqrt(norm_kl);
      ++update_count;
      if (epoch + 1 == cfg.epochs)
        last_epoch_ratios.insert(last_epoch_ratios.end(), ratios.begin(), ratios.end());
    }
  }

  stats.surrogate = surr_acc / update_count;
  stats.value_loss = vloss_acc / update_count;
  stats.kl_reg = kl_acc / update_count;
  stats.enc_grad_ppo = enc_ppo_acc / update_count;
  stats.enc_grad_kl = enc_kl_acc / update_count;
  stats.mean_kl = kl_from_ratios(last_epoch_ratios);
  st.lr = adapt_lr(st.lr, stats.mean_kl, cfg.kl_target, cfg.lr_min, cfg.lr_max);
  stats.lr = st.lr;
}

inline double update_estimator_from_pool(TrainState& st, const std::vector<SafetyRecord>& pool) {
  if (pool.empty()) return 0.0;
  double acc = 0.0;
  std::vector<SafetyRecord> batch;
  for (int u = 0; u < st.cfg.estimator_updates; ++u) {
    batch.clear();
    for (int k = 0; k < st.cfg.estimator_batch; ++k)
      batch.push_back(pool[static_cast<size_t>(st.rng.uniform_int(static_cast<int>(pool.size())))]);
    acc += estimator_update(st.bundle.omega, batch);
  }
  return acc / st.cfg.estimator_updates;
}

// --- the outer loop ---

inline void append_log_row(const std::string& path, long long iteration, const IterStats& s) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot append training log " + path);
  if (fresh)
    f << "# cmp-train-v1\n"
         "iteration,surrogate,value_loss,kl_reg,estimator_loss,mean_w_target,beta_kl,lr,"
         "mean_kl,episodes,success_rate,mean_return,enc_grad_ppo,enc_grad_kl\n";
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%lld,%.10g,%.10g,%.10g,"
                "%.10g\n",
                iteration, s.surrogate, s.value_loss, s.kl_reg, s.estimator_loss,
                s.mean_w_target, s.beta, s.lr, s.mean_kl, s.episodes, s.success_rate,
                s.mean_return, s.enc_grad_ppo, s.enc_grad_kl);
  f << buf;
}

inline bool stats_finite(const IterStats& s) {
  for (double v : {s.surrogate, s.value_loss, s.kl_reg, s.estimator_loss, s.mean_w_target,
                   s.mean_kl})
    if (!std::isfinite(v)) return false;
  return true;
}

// Runs cfg.iterations rollout/update cycles, appending one log row per
// iteration and snapshotting checkpoint.ckpt every checkpoint_every
// iterations (and at the end). A non-finite loss aborts after writing the
// last healthy state to emergency.ckpt.
inline IterStats train_loop(TrainState& st, const std::vector<Trajectory>& dataset,
                            const std::string& out_dir) {
  if (dataset.empty()) throw std::invalid_argument("train_loop: empty trajectory dataset");
  std::filesystem::create_directories(out_dir);
  const std::string ckpt_path = out_dir + "/checkpoint.ckpt";
  const std::string log_path = out_dir + "/training_log.csv";
  std::filesystem::remove(log_path);  // one log per run, not per directory

  std::vector<TrackerEnv> envs(st.cfg.num_envs);
  std::vector<double> ep_return_acc(st.cfg.num_envs, 0.0);
  for (int i = 0; i < st.cfg.num_envs; ++i) {
    envs[i].cfg = st.cfg.tracker;
    envs[i].reset(dataset[static_cast<size_t>(st.resets++) % dataset.size()]);
  }

  BinWriter last_good;
  write_checkpoint(last_good, st);

  IterStats stats;
  for (long long it = 0; it < st.cfg.iterations; ++it) {
    stats = IterStats{};
    RolloutBatch batch = collect_rollout(st, envs, ep_return_acc, dataset);

    const auto pool = label_safety_targets(st, batch);
    double w_sum = 0.0;
    for (const auto& r : pool) w_sum += r.target;
    stats.mean_w_target = pool.empty() ? 0.0 : w_sum / pool.size();
    stats.estimator_loss = update_estimator_from_pool(st, pool);

    compute_advantages(st.cfg, batch);
    ppo_update(st, batch, stats);

    stats.episodes = static_cast<long long>(batch.ep_returns.size());
    if (!batch.ep_returns.empty()) {
      double ret = 0.0;
      long long ok = 0;
      for (size_t i = 0; i < batch.ep_returns.size(); ++i) {
        ret += batch.ep_returns[i];
        ok += batch.ep_failed[i] ? 0 : 1;
      }
      stats.mean_return = ret / batch.ep_returns.size();
      stats.success_rate = 100.0 * ok / batch.ep_returns.size();
    }

    st.iteration = it + 1;
    if (!stats_finite(stats)) {
      last_good.to_file(out_dir + "/emergency.ckpt");
      append_log_row(log_path, st.iteration, stats);
      throw std::runtime_error(
          "train_loop: non-finite loss at iteration " + std::to_string(st.iteration) +
          " (surrogate=" + std::to_string(stats.surrogate) +
          ", value=" + std::to_string(stats.value_loss) +
          ", estimator=" + std::to_string(stats.estimator_loss) +
          "); last good state written to " + out_dir + "/emergency.ckpt");
    }
    append_log_row(log_path, st.iteration, stats);

    last_good = BinWriter();
    write_checkpoint(last_good, st);
    if (st.cfg.checkpoint_every > 0 && st.iteration % st.cfg.checkpoint_every == 0)
      last_good.to_file(ckpt_path);
  }
  last_good.to_file(ckpt_path);
  return stats;
}

}  // namespace cmp
