#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cmp/datagen.hpp"
#include "cmp/policy.hpp"
#include "cmp/train.hpp"

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("cmp_train_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::vector<char> slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

cmp::TrainConfig smoke_config() {
  cmp::TrainConfig cfg;
  cfg.seed = 5;
  cfg.iterations = 3;
  cfg.num_envs = 4;
  cfg.horizon = 16;
  cfg.checkpoint_every = 2;
  cfg.epochs = 3;
  cfg.minibatches = 2;
  cfg.estimator_updates = 4;
  cfg.estimator_batch = 32;
  cfg.model.encoder_hidden = {16};
  cfg.model.policy_hidden = {16};
  cfg.model.critic_hidden = {16};
  cfg.model.estimator_hidden = {16};
  cfg.tracker.control_steps = 60;
  return cfg;
}

}  // namespace

TEST_CASE("train config round-trips through json") {
  cmp::TrainConfig c;
  c.seed = 42;
  c.iterations = 17;
  c.regularizer = cmp::LatentReg::kScvae;
  c.model.latent_dim = 3;
  c.model.policy_hidden = {64, 48};
  c.beta_ramp = 123;
  c.tracker.planar.limits.arena_half = 2.25;
  c.tracker.goal_stride = 25;
  const auto j = cmp::train_config_to_json(c);
  const auto back = cmp::train_config_from_json(j);
  REQUIRE(cmp::train_config_to_json(back).dump() == j.dump());
  REQUIRE(back.regularizer == cmp::LatentReg::kScvae);
  REQUIRE(back.model.policy_hidden == std::vector<int>{64, 48});
  REQUIRE(back.tracker.planar.limits.arena_half == 2.25);
}

TEST_CASE("train config rejects unknown keys and bad shapes") {
  auto j = cmp::train_config_to_json(cmp::TrainConfig{});
  j["turbo"] = true;
  REQUIRE_THROWS_WITH(cmp::train_config_from_json(j),
                      Catch::Matchers::ContainsSubstring("unknown key 'turbo'"));

  auto j2 = cmp::train_config_to_json(cmp::TrainConfig{});
  j2["planar"]["warp"] = 1;
  REQUIRE_THROWS_WITH(cmp::train_config_from_json(j2),
                      Catch::Matchers::ContainsSubstring("unknown key 'warp'"));

  auto j3 = cmp::train_config_to_json(cmp::TrainConfig{});
  j3["num_envs"] = 3;
  j3["horizon"] = 3;
  j3["minibatches"] = 4;  // 9 rows cannot split into 4 minibatches
  REQUIRE_THROWS_AS(cmp::train_config_from_json(j3), std::invalid_argument);
}

TEST_CASE("bundle wiring matches the advertised dimensions") {
  cmp::Rng rng(1);
  const auto b = cmp::make_bundle(cmp::BundleSpec{}, rng);
  REQUIRE(b.encoder.in_dim() == 18);
  REQUIRE(b.encoder.out_dim() == 12);
  REQUIRE(b.policy.in_dim() == 12);
  REQUIRE(b.policy.out_dim() == 4);
  REQUIRE(b.critic.in_dim() == 18);
  REQUIRE(b.critic.out_dim() == 1);
  REQUIRE(b.omega.net.in_dim() == 12);
  REQUIRE(b.omega.net.out_dim() == 1);
  REQUIRE(b.log_std == std::vector<double>(4, -1.0));
  REQUIRE(b.feature_dim() == 6);
  REQUIRE(b.goal_dim() == 12);
  REQUIRE(b.action_dim() == 4);
}

TEST_CASE("gaussian log density and gradients") {
  // N(0,1) at x=1: -0.5 - 0.5*log(2*pi)
  const double expect = -0.5 - 0.5 * std::log(2.0 * M_PI);
  REQUIRE(cmp::gauss_log_prob({1.0}, {0.0}, {0.0}) == Catch::Approx(expect).margin(1e-12));

  cmp::Rng rng(8);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(4), mu(4), ls(4);
    for (auto& x : a) x = rng.normal();
    for (auto& x : mu) x = rng.normal();
    for (auto& x : ls) x = rng.uniform(-1.5, 0.5);
    std::vector<double> dmu, dls;
    cmp::gauss_log_prob_grad(a, mu, ls, dmu, dls);
    for (int i = 0; i < 4; ++i) {
      auto mu_p = mu, mu_m = mu, ls_p = ls, ls_m = ls;
      mu_p[i] += h;
      mu_m[i] -= h;
      ls_p[i] += h;
      ls_m[i] -= h;
      const double fd_mu =
          (cmp::gauss_log_prob(a, mu_p, ls) - cmp::gauss_log_prob(a, mu_m, ls)) / (2 * h);
      const double fd_ls =
          (cmp::gauss_log_prob(a, mu, ls_p) - cmp::gauss_log_prob(a, mu, ls_m)) / (2 * h);
      REQUIRE(dmu[i] == Catch::Approx(fd_mu).margin(1e-5));
      REQUIRE(dls[i] == Catch::Approx(fd_ls).margin(1e-5));
    }
  }

  REQUIRE(cmp::gauss_entropy({0.0, 0.0}) ==
          Catch::Approx(std::log(2.0 * M_PI * std::exp(1.0))).margin(1e-12));
}

TEST_CASE("inference is deterministic, shielded, and estimator-free") {
  cmp::Rng rng(2);
  const auto b = cmp::make_bundle(cmp::BundleSpec{}, rng);
  const std::vector<double> feats = {0.1, -0.2, 0.5, 0.0, 0.05, -0.05};
  const std::vector<double> goal(12, 0.3);

  const auto r1 = cmp::infer_action(b, feats, goal, 2.0, cmp::ShieldMode::kCmp);
  const auto r2 = cmp::infer_action(b, feats, goal, 2.0, cmp::ShieldMode::kCmp);
  REQUIRE(r1.action == r2.action);
  REQUIRE(r1.z == r2.z);
  REQUIRE(r1.action.size() == 4);

  // shrinking the ball caps the latent norm
  const auto tight = cmp::infer_action(b, feats, goal, 1e-3, cmp::ShieldMode::kCmp);
  REQUIRE(cmp::vec_norm(tight.z) <= 1e-3);

  // passthrough mode hands the policy the raw encoder mean
  const auto open = cmp::infer_action(b, feats, goal, 1e-3, cmp::ShieldMode::kNone);
  std::vector<double> enc_in = feats;
  enc_in.insert(enc_in.end(), goal.begin(), goal.end());
  const auto head = cmp::split_latent_head(cmp::forward(b.encoder, enc_in));
  REQUIRE(open.z == head.mu);

  // a de-facto-infinite radius is indistinguishable from no shield
  const auto wide = cmp::infer_action(b, feats, goal, 100.0, cmp::ShieldMode::kCmp);
  REQUIRE(wide.action == open.action);
  REQUIRE(wide.z == open.z);

  // stochastic mode needs a generator
  REQUIRE_THROWS_AS(cmp::infer_action(b, feats, goal, 1.0, cmp::ShieldMode::kCmp, false),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(cmp::infer_action(b, {0.1}, goal, 1.0, cmp::ShieldMode::kCmp),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(cmp::infer_action(b, feats, {0.1}, 1.0, cmp::ShieldMode::kCmp),
                    std::invalid_argument);
}

TEST_CASE("checkpoints restore the full training state") {
  TempDir dir("ckpt");
  auto st = cmp::make_train_state(smoke_config());
  st.iteration = 7;
  st.lr = 4.5e-4;
  st.episodes = 12;
  const std::string path = dir.str() + "/state.ckpt";
  cmp::save_checkpoint(path, st);

  const auto back = cmp::load_checkpoint(path);
  REQUIRE(back.iteration == 7);
  REQUIRE(back.lr == 4.5e-4);
  REQUIRE(back.episodes == 12);
  REQUIRE(cmp::train_config_to_json(back.cfg).dump() ==
          cmp::train_config_to_json(st.cfg).dump());
  std::vector<double> a, b;
  cmp::flatten_params(st.bundle.encoder, a);
  cmp::flatten_params(back.bundle.encoder, b);
  REQUIRE(a == b);
  cmp::flatten_params(st.bundle.omega.net, a);
  cmp::flatten_params(back.bundle.omega.net, b);
  REQUIRE(a == b);
  REQUIRE(back.bundle.log_std == st.bundle.log_std);
  REQUIRE(back.opt_policy.m == st.opt_policy.m);
  REQUIRE(back.opt_policy.step == st.opt_policy.step);

  // wrong magic and missing file are loud
  const std::string junk = dir.str() + "/junk.ckpt";
  std::ofstream(junk) << "not a checkpoint at all";
  REQUIRE_THROWS_WITH(cmp::load_checkpoint(junk),
                      Catch::Matchers::ContainsSubstring("not a cmp checkpoint"));
  REQUIRE_THROWS_WITH(cmp::load_checkpoint(dir.str() + "/absent.ckpt"),
                      Catch::Matchers::ContainsSubstring("absent.ckpt"));
}

TEST_CASE("a tiny training run is finite, logged, and reproducible") {
  const auto dataset = cmp::build_dataset("id", 6, 3, 300, 200.0);
  const auto cfg = smoke_config();

  TempDir d1("run1"), d2("run2"), d3("run3");
  auto s1 = cmp::make_train_state(cfg);
  const auto stats = cmp::train_loop(s1, dataset, d1.str());
  REQUIRE(s1.iteration == 3);
  REQUIRE(std::isfinite(stats.surrogate));
  REQUIRE(std::isfinite(stats.value_loss));
  REQUIRE(std::isfinite(stats.estimator_loss));
  REQUIRE(stats.mean_w_target >= 0.0);
  REQUIRE(stats.mean_w_target <= 1.0);

  // log: two header lines plus one row per iteration
  std::ifstream log(d1.str() + "/training_log.csv");
  REQUIRE(log.good());
  std::string line;
  int lines = 0;
  std::getline(log, line);
  REQUIRE(line == "# cmp-train-v1");
  while (std::getline(log, line)) ++lines;
  REQUIRE(lines == 1 + 3);

  const auto loaded = cmp::load_checkpoint(d1.str() + "/checkpoint.ckpt");
  REQUIRE(loaded.iteration == 3);
  REQUIRE(loaded.episodes == s1.episodes);

  // bit-identical rerun with the same seed
  auto s2 = cmp::make_train_state(cfg);
  cmp::train_loop(s2, dataset, d2.str());
  REQUIRE(slurp(d1.str() + "/checkpoint.ckpt") == slurp(d2.str() + "/checkpoint.ckpt"));
  REQUIRE(slurp(d1.str() + "/training_log.csv") == slurp(d2.str() + "/training_log.csv"));

  // a different seed takes a different path
  auto cfg3 = cfg;
  cfg3.seed = 6;
  auto s3 = cmp::make_train_state(cfg3);
  cmp::train_loop(s3, dataset, d3.str());
  REQUIRE(slurp(d1.str() + "/checkpoint.ckpt") != slurp(d3.str() + "/checkpoint.ckpt"));
}

TEST_CASE("zero training iterations just materialize the initial state") {
  const auto dataset = cmp::build_dataset("id", 4, 9, 300, 200.0);
  auto cfg = smoke_config();
  cfg.iterations = 0;

  TempDir dir("init");
  auto st = cmp::make_train_state(cfg);
  cmp::train_loop(st, dataset, dir.str());

  const auto loaded = cmp::load_checkpoint(dir.str() + "/checkpoint.ckpt");
  REQUIRE(loaded.iteration == 0);
  const auto fresh = cmp::make_train_state(cfg);
  std::vector<double> a, b;
  cmp::flatten_params(loaded.bundle.policy, a);
  cmp::flatten_params(fresh.bundle.policy, b);
  REQUIRE(a == b);
  REQUIRE(loaded.opt_policy.step == 0);
}
