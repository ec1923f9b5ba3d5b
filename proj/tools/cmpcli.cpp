// Command-line front end: data synthesis, training, evaluation sweeps and the
// exact-oracle self checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmp/datagen.hpp"
#include "cmp/estimator.hpp"
#include "cmp/eval.hpp"
#include "cmp/grid.hpp"
#include "cmp/safety_table.hpp"
#include "cmp/train.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<double> parse_radii(const std::string& s) {
  std::vector<double> out;
  for (const std::string& tok : split_list(s)) {
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::invalid_argument("--radii: cannot parse '" + tok + "' as a number");
    }
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const std::string& tok : split_list(s)) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::invalid_argument("--seeds: cannot parse '" + tok + "' as a seed");
    }
  }
  return out;
}

// --data accepts "name=path"; a bare path is labeled by its file stem.
cmp::EvalDataset load_named_dataset(const std::string& spec) {
  const auto eq = spec.find('=');
  std::string name, path;
  if (eq == std::string::npos) {
    path = spec;
    name = std::filesystem::path(spec).stem().string();
  } else {
    name = spec.substr(0, eq);
    path = spec.substr(eq + 1);
  }
  if (name.empty() || path.empty())
    throw std::invalid_argument("--data expects name=path, got '" + spec + "'");
  return {name, cmp::load_trajectories(path)};
}

std::vector<cmp::EvalDataset> load_named_datasets(const std::vector<std::string>& specs) {
  std::vector<cmp::EvalDataset> out;
  out.reserve(specs.size());
  for (const std::string& s : specs) out.push_back(load_named_dataset(s));
  return out;
}

void emit_text(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + out_path);
  f << text;
  if (!f) throw std::runtime_error("short write to " + out_path);
}

// --- oracle-check ---

int run_oracle_check(const std::string& grid_file, std::uint64_t seed, const std::string& out) {
  cmp::GridSpec g;
  if (grid_file.empty()) {
    g = cmp::default_grid();
  } else {
    std::ifstream f(grid_file);
    if (!f) {
      std::cerr << "oracle-check: cannot open grid file '" << grid_file << "'\n";
      return 1;
    }
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    g = cmp::parse_grid(text);
  }
  const cmp::SafetyTable fixed = cmp::exact_safety_value(g);
  std::printf("bellman residual      %.3e (converged=%d, %d sweeps)\n", fixed.residual,
              fixed.converged ? 1 : 0, fixed.iterations);

  cmp::Mat w2;
  std::vector<double> v2;
  cmp::bellman_apply(g, fixed.kernel, fixed.v, w2, v2);
  double reapply = 0.0;
  for (int c = 0; c < g.cells(); ++c) reapply = std::max(reapply, std::abs(v2[c] - fixed.v[c]));
  std::printf("reapplication delta   %.3e\n", reapply);

  const cmp::SafetyTable table = cmp::default_safety_oracle(g);
  const cmp::Mat rho = cmp::uniform_intent_policy(g);
  std::vector<cmp::Mat> chain;
  for (int n = 1; n <= 4; ++n)
    chain.push_back(cmp::n_step_expansion(g, table.kernel, table.v, rho, n));
  bool monotone = true;
  double worst = 0.0;
  for (std::size_t n = 0; n + 1 < chain.size(); ++n) {
    for (std::size_t i = 0; i < chain[n].a.size(); ++i) {
      const double gap = chain[n].a[i] - chain[n + 1].a[i];
      worst = std::min(worst, gap);
      if (gap < -1e-12) monotone = false;
    }
  }
  std::printf("expansion chain       %s (worst signed gap %.3e)\n",
              monotone ? "monotone" : "NOT monotone", worst);

  const cmp::Mat mix = cmp::lambda_mixture(chain, 0.8);
  bool bounded = true;
  for (std::size_t i = 0; i < mix.a.size(); ++i)
    if (mix.a[i] > chain[0].a[i] + 1e-12) bounded = false;
  std::printf("lambda mixture bound  %s\n", bounded ? "holds" : "VIOLATED");
  std::printf("horizon %d table:\n", g.horizon);
  (void)seed;

  emit_text(out, "# cmp-oracle-v1\n" + cmp::format_safety_table(table));
  return monotone && bounded && fixed.converged ? 0 : 1;
}

// --- gen-data ---

int run_gen_data(const std::string& kind, int n, std::uint64_t seed, int steps, double rate,
                 const std::string& out) {
  cmp::build_dataset_file(out, kind, n, seed, steps, rate);
  std::printf("wrote %d %s trajectories (seed %llu, %d samples @ %g Hz) to %s\n", n, kind.c_str(),
              static_cast<unsigned long long>(seed), steps, rate, out.c_str());
  return 0;
}

// --- train ---

int run_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, bool seed_set, std::uint64_t seed, bool iters_set,
              int iterations, const std::string& regularizer) {
  cmp::TrainConfig cfg;
  if (!config_path.empty()) cfg = cmp::load_train_config(config_path);
  if (seed_set) cfg.seed = seed;
  if (iters_set) cfg.iterations = iterations;
  if (!regularizer.empty()) cfg.regularizer = cmp::latent_reg_from_name(regularizer);

  const auto dataset = cmp::load_trajectories(data_path);
  cmp::TrainState st = cmp::make_train_state(cfg);
  const cmp::IterStats last = cmp::train_loop(st, dataset, out_dir);
  std::printf("trained %lld iterations: success_rate %.3f, mean_return %.3f, mean_w %.3f, "
              "lr %.3g\ncheckpoint: %s/checkpoint.ckpt\nlog: %s/training_log.csv\n",
              st.iteration, last.success_rate, last.mean_return, last.mean_w_target, last.lr,
              out_dir.c_str(), out_dir.c_str());
  return 0;
}

// --- eval / sweep / ablate ---

cmp::EvalOptions make_eval_options(double radius, const std::string& mode, int episodes,
                                   bool latency) {
  cmp::EvalOptions opt;
  opt.radius = radius;
  opt.mode = cmp::shield_mode_from_name(mode);
  opt.episodes = episodes;
  opt.measure_latency = latency;
  return opt;
}

int run_eval(const std::string& ckpt, const std::string& data_path, const std::string& name,
             double radius, const std::string& mode, const std::string& seeds_str, int episodes,
             bool latency, const std::string& out) {
  const cmp::TrainState st = cmp::load_checkpoint(ckpt);
  const auto dataset = cmp::load_trajectories(data_path);
  const cmp::EvalOptions opt = make_eval_options(radius, mode, episodes, latency);
  cmp::MetricsReport m =
      cmp::evaluate_seeds(st.bundle, dataset, st.cfg.tracker, opt, parse_seeds(seeds_str));
  if (!name.empty()) m.dataset = name;
  emit_text(out, cmp::metrics_csv({m}));
  return 0;
}

int run_sweep(const std::string& ckpt, const std::vector<std::string>& data_specs,
              const std::string& radii_str, const std::string& mode,
              const std::string& seeds_str, int episodes, bool latency, const std::string& out) {
  const cmp::TrainState st = cmp::load_checkpoint(ckpt);
  const auto datasets = load_named_datasets(data_specs);
  const cmp::EvalOptions opt = make_eval_options(2.0, mode, episodes, latency);
  const auto rows = cmp::sweep_radius(st.bundle, st.cfg.tracker, datasets,
                                      parse_radii(radii_str), opt, parse_seeds(seeds_str));
  emit_text(out, cmp::metrics_csv(rows));
  return 0;
}

int run_ablate(const std::string& config_path, const std::string& train_data,
               const std::vector<std::string>& data_specs, const std::string& methods_str,
               const std::string& radii_str, const std::string& seeds_str, int episodes,
               bool latency, bool seed_set, std::uint64_t seed, bool iters_set, int iterations,
               const std::string& work_dir, const std::string& out) {
  cmp::TrainConfig cfg;
  if (!config_path.empty()) cfg = cmp::load_train_config(config_path);
  if (seed_set) cfg.seed = seed;
  if (iters_set) cfg.iterations = iterations;

  const auto train_set = cmp::load_trajectories(train_data);
  const auto datasets = load_named_datasets(data_specs);
  const cmp::EvalOptions opt = make_eval_options(2.0, "cmp", episodes, latency);
  const auto rows = cmp::run_ablation(cfg, split_list(methods_str), train_set, datasets,
                                      parse_radii(radii_str), opt, parse_seeds(seeds_str),
                                      work_dir);
  emit_text(out, cmp::metrics_csv(rows));
  return 0;
}

// --- correlate ---

constexpr const char* kOmegaMagic = "cmp-omega-v1";

void save_omega(const std::string& path, const cmp::DenseNet& net) {
  cmp::BinWriter w;
  w.str(kOmegaMagic);
  cmp::write_net(w, net);
  w.to_file(path);
}

cmp::DenseNet load_omega(const std::string& path) {
  cmp::BinReader r = cmp::BinReader::from_file(path);
  try {
    if (r.str() != kOmegaMagic) throw std::runtime_error("bad magic");
  } catch (const std::exception&) {
    throw std::runtime_error("not a cmp omega checkpoint: " + path);
  }
  cmp::DenseNet net = cmp::read_net(r);
  r.done();
  return net;
}

int run_correlate(const std::string& grid_file, const std::string& ckpt, const std::string& save,
                  int episodes, int steps, int batch, int samples, std::uint64_t seed,
                  const std::string& out) {
  cmp::GridSpec g;
  if (grid_file.empty()) {
    g = cmp::default_grid();
  } else {
    std::ifstream f(grid_file);
    if (!f) {
      std::cerr << "correlate: cannot open grid file '" << grid_file << "'\n";
      return 1;
    }
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    g = cmp::parse_grid(text);
  }
  const cmp::SafetyTable table = cmp::default_safety_oracle(g);
  cmp::Rng rng(cmp::mix_seed(seed, 0xC0881));
  cmp::SafetyEstimator est = cmp::make_estimator(g.cells(), cmp::kNumIntents, {32, 32}, rng, 1e-3);
  if (!ckpt.empty()) {
    est.net = load_omega(ckpt);
  } else {
    const auto records = cmp::collect_grid_records_oracle(g, table, episodes, rng);
    cmp::train_estimator(est, records, steps, batch, rng);
  }
  if (!save.empty()) save_omega(save, est.net);

  const auto origin = cmp::grid_intent_latent(cmp::GridIntent::kStay);
  const auto predict = [&](int cell) {
    return cmp::predict_safety(est.net, cmp::grid_state_features(g, cell), origin);
  };
  const auto tab = cmp::oracle_correlation(g, table, predict, samples, rng);
  emit_text(out, "# cmp-contingency-v1\n" + cmp::format_contingency(tab));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cmp: latent-intent safety shielding toolkit"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_kind, gd_out;
  int gd_n = 200, gd_steps = cmp::kDefaultTrajSteps;
  double gd_rate = cmp::kDefaultTrajRate;
  std::uint64_t gd_seed = 0;
  CLI::App* gen = app.add_subcommand("gen-data", "synthesize a goal-trajectory dataset file");
  gen->add_option("--kind", gd_kind, "dataset kind")
      ->required()
      ->check(CLI::IsMember({"id", "ood-geometry", "ood-sensor"}));
  gen->add_option("--n", gd_n, "trajectory count")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gd_seed, "rng seed");
  gen->add_option("--steps", gd_steps, "samples per trajectory")->check(CLI::PositiveNumber);
  gen->add_option("--rate", gd_rate, "sample rate in Hz")->check(CLI::PositiveNumber);
  gen->add_option("--out", gd_out, "output dataset file")->required();

  // train
  std::string tr_config, tr_data, tr_out, tr_reg;
  std::uint64_t tr_seed = 0;
  int tr_iters = 0;
  CLI::App* train = app.add_subcommand("train", "run the PPO + safety-estimator training loop");
  train->add_option("--config", tr_config, "training config json (defaults used when absent)");
  train->add_option("--data", tr_data, "goal-trajectory dataset file")->required();
  train->add_option("--out", tr_out, "output directory (checkpoints + csv log)")->required();
  CLI::Option* tr_seed_opt = train->add_option("--seed", tr_seed, "override the config seed");
  CLI::Option* tr_iter_opt =
      train->add_option("--iterations", tr_iters, "override the config iteration count");
  train->add_option("--regularizer", tr_reg, "override the latent regularizer")
      ->check(CLI::IsMember({"none", "cvae", "scvae", "cmp"}));

  // eval
  std::string ev_ckpt, ev_data, ev_name, ev_mode = "cmp", ev_seeds = "0,1,2", ev_out;
  double ev_radius = 2.0;
  int ev_episodes = 200;
  bool ev_latency = false;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on one dataset");
  eval->add_option("--checkpoint", ev_ckpt, "training checkpoint")->required();
  eval->add_option("--data", ev_data, "dataset file")->required();
  eval->add_option("--name", ev_name, "dataset label for the report row");
  eval->add_option("--radius", ev_radius, "safety radius")->check(CLI::PositiveNumber);
  eval->add_option("--shield-mode", ev_mode, "latent shield mode")
      ->check(CLI::IsMember({"none", "hard-stop", "cmp"}));
  eval->add_option("--seeds", ev_seeds, "comma-separated evaluation seeds");
  eval->add_option("--episodes", ev_episodes, "episodes per seed")->check(CLI::PositiveNumber);
  eval->add_flag("--latency", ev_latency,
                 "measure per-call latency (report bytes stop being reproducible)");
  eval->add_option("--out", ev_out, "write the CSV here instead of stdout");

  // sweep
  std::string sw_ckpt, sw_radii = "1,1.5,2,3,100", sw_mode = "cmp", sw_seeds = "0,1,2", sw_out;
  std::vector<std::string> sw_data;
  int sw_episodes = 200;
  bool sw_latency = false;
  CLI::App* sweep = app.add_subcommand("sweep", "radius sweep over one or more datasets");
  sweep->add_option("--checkpoint", sw_ckpt, "training checkpoint")->required();
  sweep->add_option("--data", sw_data, "dataset as name=path (repeatable)")->required();
  sweep->add_option("--radii", sw_radii, "comma-separated ascending radii");
  sweep->add_option("--shield-mode", sw_mode, "latent shield mode")
      ->check(CLI::IsMember({"none", "hard-stop", "cmp"}));
  sweep->add_option("--seeds", sw_seeds, "comma-separated evaluation seeds");
  sweep->add_option("--episodes", sw_episodes, "episodes per seed")->check(CLI::PositiveNumber);
  sweep->add_flag("--latency", sw_latency, "measure per-call latency");
  sweep->add_option("--out", sw_out, "write the CSV here instead of stdout");

  // ablate
  std::string ab_config, ab_train_data, ab_methods = "umi-like,cvae,scvae,cmp";
  std::string ab_radii = "1,1.5,2,3,100", ab_seeds = "0,1,2", ab_work, ab_out;
  std::vector<std::string> ab_data;
  std::uint64_t ab_seed = 0;
  int ab_iters = 0, ab_episodes = 200;
  bool ab_latency = false;
  CLI::App* ablate =
      app.add_subcommand("ablate", "train each latent-regularizer variant and sweep it");
  ablate->add_option("--config", ab_config, "base training config json");
  ablate->add_option("--train-data", ab_train_data, "training dataset file")->required();
  ablate->add_option("--data", ab_data, "eval dataset as name=path (repeatable)")->required();
  ablate->add_option("--methods", ab_methods, "comma-separated variant list");
  ablate->add_option("--radii", ab_radii, "comma-separated ascending radii");
  ablate->add_option("--seeds", ab_seeds, "comma-separated evaluation seeds");
  ablate->add_option("--episodes", ab_episodes, "episodes per seed")->check(CLI::PositiveNumber);
  ablate->add_flag("--latency", ab_latency, "measure per-call latency");
  CLI::Option* ab_seed_opt = ablate->add_option("--seed", ab_seed, "override the config seed");
  CLI::Option* ab_iter_opt =
      ablate->add_option("--iterations", ab_iters, "override the config iteration count");
  ablate->add_option("--work", ab_work, "directory for per-variant training runs")->required();
  ablate->add_option("--out", ab_out, "write the CSV here instead of stdout");

  // oracle-check
  std::string oc_grid, oc_out;
  std::uint64_t oc_seed = 0;
  CLI::App* oracle = app.add_subcommand("oracle-check", "solve the exact grid safety values and "
                                                        "verify the expansion-chain bounds");
  oracle->add_option("--grid", oc_grid, "grid config file (default: built-in board)");
  oracle->add_option("--out", oc_out, "write the value table here instead of stdout");
  oracle->add_option("--seed", oc_seed, "rng seed");

  // correlate
  std::string co_grid, co_ckpt, co_save, co_out;
  int co_episodes = 400, co_steps = 2000, co_batch = 64, co_samples = 4000;
  std::uint64_t co_seed = 0;
  CLI::App* correlate = app.add_subcommand(
      "correlate", "cross-tabulate safety-head predictions against the exact grid oracle");
  correlate->add_option("--grid", co_grid, "grid config file (default: built-in board)");
  correlate->add_option("--checkpoint", co_ckpt, "load a saved estimator instead of training");
  correlate->add_option("--save", co_save, "save the estimator here after training");
  correlate->add_option("--episodes", co_episodes, "oracle-labeled rollouts to collect")
      ->check(CLI::PositiveNumber);
  correlate->add_option("--steps", co_steps, "training steps")->check(CLI::PositiveNumber);
  correlate->add_option("--batch", co_batch, "training batch size")->check(CLI::PositiveNumber);
  correlate->add_option("--samples", co_samples, "visited states to tabulate")
      ->check(CLI::PositiveNumber);
  correlate->add_option("--seed", co_seed, "rng seed");
  correlate->add_option("--out", co_out, "write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(gd_kind, gd_n, gd_seed, gd_steps, gd_rate, gd_out);
    if (train->parsed())
      return run_train(tr_config, tr_data, tr_out, tr_seed_opt->count() > 0, tr_seed,
                       tr_iter_opt->count() > 0, tr_iters, tr_reg);
    if (eval->parsed())
      return run_eval(ev_ckpt, ev_data, ev_name, ev_radius, ev_mode, ev_seeds, ev_episodes,
                      ev_latency, ev_out);
    if (sweep->parsed())
      return run_sweep(sw_ckpt, sw_data, sw_radii, sw_mode, sw_seeds, sw_episodes, sw_latency,
                       sw_out);
    if (ablate->parsed())
      return run_ablate(ab_config, ab_train_data, ab_data, ab_methods, ab_radii, ab_seeds,
                        ab_episodes, ab_latency, ab_seed_opt->count() > 0, ab_seed,
                        ab_iter_opt->count() > 0, ab_iters, ab_work, ab_out);
    if (oracle->parsed()) return run_oracle_check(oc_grid, oc_seed, oc_out);
    if (correlate->parsed())
      return run_correlate(co_grid, co_ckpt, co_save, co_episodes, co_steps, co_batch, co_samples,
                           co_seed, co_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
