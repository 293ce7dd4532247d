#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fiberloop/errors.hpp"
#include "fiberloop/eval_harness.hpp"
#include "fiberloop/trainer.hpp"

using namespace fiberloop;

namespace {

Dataset tiny_dataset(const RodParams& rod) {
  GenConfig gen;
  gen.grid.rx_min = 8.0;
  gen.grid.rx_max = 13.0;
  gen.grid.rx_step = 1.0;
  gen.grid.ry_min = -2.0;
  gen.grid.ry_max = 2.0;
  gen.grid.ry_step = 1.0;
  gen.n_threads = 4;
  return Dataset::generate(rod, gen, 33);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

PolicyCheckpoint fresh_checkpoint(const EnvConfig& env, uint64_t seed) {
  Rng rng(stream_seed(seed, "test-policy"));
  PolicyCheckpoint ckpt;
  ckpt.params = PolicyParams::make(env.obs_dim(), {32, 16}, 4, rng);
  RunningNorm norm(env.obs_dim(), 10.0);
  // Seed the normalizer with plausible magnitudes so normalization is sane.
  for (int i = 0; i < 64; ++i) {
    Eigen::VectorXd x(env.obs_dim());
    for (int c = 0; c < env.obs_dim(); ++c) x[c] = rng.uniform(-8, 8);
    norm.update(x);
  }
  ckpt.obs_norm = norm;
  return ckpt;
}

TrainConfig smoke_config(uint64_t seed, const std::string& out_dir) {
  TrainConfig tc;
  tc.rod = RodParams{};
  tc.surface = SurfaceModel{};
  tc.ppo.n_envs = 2;
  tc.ppo.rollout_length = 64;
  tc.ppo.batch = 32;
  tc.ppo.epochs_per_rollout = 2;
  tc.ppo.total_steps = 10000;
  tc.ppo.checkpoint_every = 1000;
  tc.env.horizon_steps = 64;  // short episodes keep the smoke run quick
  tc.env.hold_steps = 16;
  tc.seed = seed;
  tc.out_dir = out_dir;
  tc.log_every = 0;
  return tc;
}

}  // namespace

TEST_CASE("train: seed-fixed smoke run is bit-identical across executions "
          "and thread counts") {
  RodParams rod;
  Dataset ds = tiny_dataset(rod);
  REQUIRE(ds.size() > 4);

  TrainConfig a = smoke_config(5, "/tmp/fiberloop_train_a");
  a.n_threads = 1;
  TrainConfig b = smoke_config(5, "/tmp/fiberloop_train_b");
  b.n_threads = 4;

  TrainStats sa = train(a, ds);
  TrainStats sb = train(b, ds);
  CHECK(sa.global_steps == sb.global_steps);
  CHECK(sa.episodes == sb.episodes);

  const std::string ma = read_file(sa.metrics_path);
  const std::string mb = read_file(sb.metrics_path);
  REQUIRE(!ma.empty());
  CHECK(ma == mb);

  // Checkpoints agree bit-for-bit too.
  CHECK(read_file(sa.checkpoint_path) == read_file(sb.checkpoint_path));

  std::filesystem::remove_all("/tmp/fiberloop_train_a");
  std::filesystem::remove_all("/tmp/fiberloop_train_b");
}

TEST_CASE("train: resume restores the checkpointed weights") {
  RodParams rod;
  Dataset ds = tiny_dataset(rod);
  TrainConfig tc = smoke_config(9, "/tmp/fiberloop_train_resume");
  tc.ppo.total_steps = 2000;
  TrainStats first = train(tc, ds);

  TrainConfig more = tc;
  more.out_dir = "/tmp/fiberloop_train_resume2";
  more.resume_from = first.checkpoint_path;
  more.ppo.total_steps = 2000;  // runs one more block of updates
  TrainStats second = train(more, ds);
  CHECK(second.global_steps >= first.global_steps);

  std::filesystem::remove_all("/tmp/fiberloop_train_resume");
  std::filesystem::remove_all("/tmp/fiberloop_train_resume2");
}

TEST_CASE("closed loop: fixed seed reproduces the trial series") {
  RodParams rod;
  EnvConfig env;
  Dataset ds = tiny_dataset(rod);
  PolicyCheckpoint ckpt = fresh_checkpoint(env, 3);

  DeployConfig deploy;
  deploy.max_duration = 1.0;
  TrialResult t1 = run_closed_loop(ckpt, env, rod, deploy, ds.record(0),
                                   ds.record(3), 77);
  TrialResult t2 = run_closed_loop(ckpt, env, rod, deploy, ds.record(0),
                                   ds.record(3), 77);
  REQUIRE(t1.e_mean_series.size() == t2.e_mean_series.size());
  REQUIRE(t1.e_mean_series.size() == 40);  // 1 s at 40 Hz
  for (std::size_t i = 0; i < t1.e_mean_series.size(); ++i) {
    CHECK(t1.e_mean_series[i] == t2.e_mean_series[i]);
    CHECK(t1.e_max_series[i] == t2.e_max_series[i]);
  }
  // Series times strictly increase and the finals equal the last entries.
  for (std::size_t i = 1; i < t1.time_s.size(); ++i) {
    CHECK(t1.time_s[i] > t1.time_s[i - 1]);
  }
  CHECK(t1.final_e_mean == t1.e_mean_series.back());
  CHECK(t1.final_e_max == t1.e_max_series.back());
}

TEST_CASE("open loop equals closed loop at zero perturbation") {
  RodParams rod;
  EnvConfig env;
  Dataset ds = tiny_dataset(rod);
  PolicyCheckpoint ckpt = fresh_checkpoint(env, 4);

  DeployConfig deploy;
  deploy.surface = SurfaceModel{};  // frictionless
  deploy.obs_noise_std = 0.0;
  deploy.max_duration = 1.5;

  TrialResult closed = run_closed_loop(ckpt, env, rod, deploy, ds.record(1),
                                       ds.record(4), 11);
  TrialResult open = run_open_loop(ckpt, env, rod, deploy, ds.record(1),
                                   ds.record(4), 11);
  REQUIRE(closed.e_mean_series.size() == open.e_mean_series.size());
  CHECK(std::abs(closed.final_e_mean - open.final_e_mean) < 1e-9);
  CHECK(std::abs(closed.final_e_max - open.final_e_max) < 1e-9);
}

TEST_CASE("open loop differs from closed loop under friction") {
  RodParams rod;
  EnvConfig env;
  Dataset ds = tiny_dataset(rod);
  PolicyCheckpoint ckpt = fresh_checkpoint(env, 4);

  DeployConfig deploy;  // coulomb mu 0.3 by default
  deploy.obs_noise_std = 0.0;
  deploy.max_duration = 1.5;

  TrialResult closed = run_closed_loop(ckpt, env, rod, deploy, ds.record(1),
                                       ds.record(4), 11);
  TrialResult open = run_open_loop(ckpt, env, rod, deploy, ds.record(1),
                                   ds.record(4), 11);
  // The perturbed replay and the perturbed closed loop see different fibers
  // than the frictionless plan; they must not coincide exactly.
  CHECK(std::abs(closed.final_e_mean - open.final_e_mean) > 1e-12);
}

TEST_CASE("repeatability experiment: 24 trials with stats") {
  RodParams rod;
  EnvConfig env;
  Dataset ds = tiny_dataset(rod);
  PolicyCheckpoint ckpt = fresh_checkpoint(env, 5);

  DeployConfig deploy;
  deploy.max_duration = 0.5;
  RepeatabilityReport report =
      repeatability_experiment(ckpt, env, rod, deploy, ds, 21, 4);
  CHECK(report.trials.size() == 24);
  CHECK(report.mean_final_e_mean >= 0.0);
  CHECK(report.std_final_e_mean >= 0.0);
  // Three distinct targets, eight trials each.
  std::map<int64_t, int> per_target;
  for (const auto& t : report.trials) per_target[t.target_id] += 1;
  CHECK(per_target.size() == 3);
  for (const auto& [id, n] : per_target) CHECK(n == 8);
}

TEST_CASE("generalization experiment: 9 conditions x 20 trials = 180") {
  RodParams rod;
  EnvConfig env;
  PolicyCheckpoint ckpt = fresh_checkpoint(env, 6);

  DeployConfig deploy;
  deploy.max_duration = 0.25;  // keep the unit test quick
  GeneralizationReport report =
      generalization_experiment(ckpt, env, rod, deploy, 13, 4);
  CHECK(report.conditions.size() == 9);
  CHECK(report.total_trials() == 180);

  // Diameter proxies from the d^4 law and the three lengths, 15 mm included.
  std::set<double> scales, lengths;
  for (const auto& c : report.conditions) {
    scales.insert(c.stiffness_scale);
    lengths.insert(c.length);
    CHECK(c.trials.size() == 20);
    for (const auto& t : c.trials) {
      CHECK_FALSE(t.failed);
    }
  }
  CHECK(scales.size() == 3);
  CHECK(scales.count(1.0) == 1);
  CHECK(lengths == std::set<double>{10.0, 15.0, 20.0});
  const double d50 = std::pow(50.0 / 80.0, 4);
  const double d120 = std::pow(120.0 / 80.0, 4);
  CHECK(scales.count(d50) == 1);
  CHECK(scales.count(d120) == 1);
}

TEST_CASE("spearman: synthetic and brute-force oracle") {
  // Strictly increasing pairing.
  std::vector<double> x, y;
  for (int i = 0; i < 20; ++i) {
    x.push_back(0.1 * i);
    y.push_back(5.0 + std::exp(0.2 * i));
  }
  CHECK(spearman_rho(x, y) == doctest::Approx(1.0).epsilon(1e-12));

  // Brute-force O(n^2) average-rank oracle on random pairs.
  Rng rng(stream_seed(8, "spearman"));
  auto rank_oracle = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      int less = 0, equal = 0;
      for (std::size_t j = 0; j < v.size(); ++j) {
        if (v[j] < v[i]) ++less;
        if (v[j] == v[i]) ++equal;
      }
      r[i] = less + 0.5 * (equal - 1) + 1.0;
    }
    return r;
  };
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> a, b;
    for (int i = 0; i < 50; ++i) {
      // Quantized values produce ties.
      a.push_back(std::floor(rng.uniform(0, 10)));
      b.push_back(std::floor(rng.uniform(0, 10)));
    }
    const auto ra = rank_oracle(a);
    const auto rb = rank_oracle(b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
      ma += ra[i];
      mb += rb[i];
    }
    ma /= ra.size();
    mb /= rb.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
      sxy += (ra[i] - ma) * (rb[i] - mb);
      sxx += (ra[i] - ma) * (ra[i] - ma);
      syy += (rb[i] - mb) * (rb[i] - mb);
    }
    const double expect = sxy / std::sqrt(sxx * syy);
    CHECK(std::abs(spearman_rho(a, b) - expect) <= 1e-12);
  }
}

TEST_CASE("bending analysis: degenerate all-equal targets reported as n/a") {
  RodParams rod;
  Dataset ds = tiny_dataset(rod);
  std::vector<TrialResult> trials(5);
  for (int i = 0; i < 5; ++i) {
    trials[i].target_e_bend = 0.0;  // all-straight targets
    trials[i].final_e_mean = 0.1 * (i + 1);
  }
  BendingAnalysis analysis = bending_energy_analysis(trials, ds);
  CHECK(analysis.pairs.size() == 5);
  CHECK_FALSE(analysis.spearman.has_value());
  CHECK(analysis.dataset_e_bend.size() == ds.size());
}

TEST_CASE("svg: deterministic bytes, panel polyline contract, empty report") {
  RodParams rod;
  EnvConfig env;
  Dataset ds = tiny_dataset(rod);
  PolicyCheckpoint ckpt = fresh_checkpoint(env, 7);
  DeployConfig deploy;
  deploy.max_duration = 0.25;
  TrialResult trial = run_closed_loop(ckpt, env, rod, deploy, ds.record(0),
                                      ds.record(2), 3);

  const std::string svg1 = render_trial_svg(trial);
  const std::string svg2 = render_trial_svg(trial);
  CHECK(svg1 == svg2);

  // Exactly three shape polylines per trial panel: init, target, final.
  std::size_t shapes = 0, pos = 0;
  while ((pos = svg1.find("class=\"shape\"", pos)) != std::string::npos) {
    ++shapes;
    pos += 1;
  }
  CHECK(shapes == 3);

  const std::string empty = render_trials_svg({});
  CHECK(empty.find("<svg") == 0);
  CHECK(empty.find("<rect") != std::string::npos);    // axes
  CHECK(empty.find("<polyline") == std::string::npos);  // no curves
}
