#include "fiberloop/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fiberloop/errors.hpp"
#include "fiberloop/thread_pool.hpp"

namespace fiberloop {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct EpisodeAccumulator {
  double reward = 0.0;
  int steps = 0;
};

}  // namespace

TrainStats train(const TrainConfig& cfg, const Dataset& dataset) {
  cfg.env.validate();
  cfg.rod.validate();
  cfg.surface.validate();
  cfg.ppo.validate();
  if (dataset.empty()) throw EmptyDataset("training needs a non-empty dataset");
  if (cfg.out_dir.empty()) throw InvariantViolation("out_dir must be set");
  std::filesystem::create_directories(cfg.out_dir);

  const int n_envs = cfg.ppo.n_envs;
  const int length = cfg.ppo.rollout_length;
  const int obs_dim = cfg.env.obs_dim();
  const int act_dim = 4;

  // Policy, optimizer, normalization.
  Rng init_rng(stream_seed(cfg.seed, "policy-init"));
  PolicyParams params =
      PolicyParams::make(obs_dim, {128, 128, 64}, act_dim, init_rng);
  RunningNorm norm(obs_dim, cfg.ppo.norm_clip);
  long long global_steps = 0;
  if (!cfg.resume_from.empty()) {
    PolicyCheckpoint resume = load_checkpoint(cfg.resume_from);
    if (resume.params.obs_dim() != obs_dim) {
      throw InvariantViolation("resume checkpoint has wrong input dimension");
    }
    params = std::move(resume.params);
    norm = std::move(resume.obs_norm);
    global_steps = resume.global_step;
  }
  Adam opt(params);
  Rng update_rng(stream_seed(cfg.seed, "ppo-shuffle"));

  // Envs with independent streams.
  std::vector<FiberEnv> envs;
  std::vector<Rng> action_rng, reset_rng;
  std::vector<uint64_t> episode_counter(n_envs, 0);
  envs.reserve(n_envs);
  for (int e = 0; e < n_envs; ++e) {
    envs.emplace_back(cfg.env, cfg.rod, cfg.surface);
    action_rng.emplace_back(stream_seed(cfg.seed, "env-action", e));
    reset_rng.emplace_back(stream_seed(cfg.seed, "env-reset", e));
  }

  CurriculumState curriculum;
  auto reset_env = [&](int e) {
    auto [init, target] = dataset.sample_pair(reset_rng[e]);
    const uint64_t ep_seed =
        stream_seed(cfg.seed, "episode", (episode_counter[e]++ << 8) + e);
    envs[e].set_curriculum_level(curriculum.level);
    return envs[e].reset(*init, *target, ep_seed);
  };

  std::vector<Eigen::VectorXd> raw_obs(n_envs);
  for (int e = 0; e < n_envs; ++e) raw_obs[e] = reset_env(e);

  RolloutBuffer buf;
  buf.resize(n_envs, length, obs_dim, act_dim);

  ThreadPool pool(cfg.n_threads > 0
                      ? cfg.n_threads
                      : static_cast<int>(std::thread::hardware_concurrency()));

  const std::string metrics_path = cfg.out_dir + "/train_metrics.csv";
  std::ofstream metrics(metrics_path);
  if (!metrics) throw IoError("cannot open " + metrics_path);
  metrics << "update,global_step,lr,level,episodes,window_mean_reward,"
             "window_mean_final_e_mean,window_success_rate,policy_loss,"
             "value_loss,entropy,clip_fraction,approx_kl,grad_norm\n";

  std::vector<EpisodeAccumulator> acc(n_envs);
  std::vector<Action> pending(n_envs);
  std::vector<FiberEnv::StepResult> results(n_envs);

  TrainStats stats;
  stats.metrics_path = metrics_path;
  long long episodes_total = 0;

  // Logging window accumulators (reset every metrics row).
  double win_reward_sum = 0.0, win_emean_sum = 0.0;
  long long win_episodes = 0, win_successes = 0;

  Eigen::MatrixXd obs_mat(n_envs, obs_dim);
  const int updates_total = static_cast<int>(
      (cfg.ppo.total_steps + static_cast<long long>(n_envs) * length - 1) /
      (static_cast<long long>(n_envs) * length));

  for (int update = 1; global_steps < cfg.ppo.total_steps; ++update) {
    for (int t = 0; t < length; ++t) {
      // Ordered normalization updates, then one batched policy pass.
      for (int e = 0; e < n_envs; ++e) {
        norm.update(raw_obs[e]);
        obs_mat.row(e) = norm.normalize(raw_obs[e]).transpose();
      }
      const Eigen::MatrixXd mean = params.actor.forward(obs_mat);
      const Eigen::VectorXd value = params.critic.forward(obs_mat).col(0);
      const Eigen::ArrayXd sigma = params.log_std.array().exp();

      Eigen::MatrixXd sampled(n_envs, act_dim);
      for (int e = 0; e < n_envs; ++e) {
        for (int d = 0; d < act_dim; ++d) {
          sampled(e, d) = mean(e, d) + sigma[d] * action_rng[e].normal();
        }
      }
      const Eigen::VectorXd logp =
          gaussian_log_prob(mean, params.log_std, sampled);

      for (int e = 0; e < n_envs; ++e) {
        const int row = buf.row(e, t);
        buf.obs.row(row) = obs_mat.row(e);
        buf.actions.row(row) = sampled.row(e);
        buf.logp[row] = logp[e];
        buf.values[row] = value[e];
        Action a;
        for (int d = 0; d < act_dim; ++d) a.v[d] = sampled(e, d);
        pending[e] = a.clipped();
      }

      pool.parallel_for(n_envs,
                        [&](int e) { results[e] = envs[e].step(pending[e]); });

      for (int e = 0; e < n_envs; ++e) {
        const int row = buf.row(e, t);
        buf.rewards[row] = results[e].reward.total;
        buf.dones[row] = results[e].info.done ? 1 : 0;
        acc[e].reward += results[e].reward.total;
        acc[e].steps += 1;
        if (results[e].info.done) {
          episodes_total += 1;
          win_episodes += 1;
          win_reward_sum += acc[e].reward;
          win_emean_sum += results[e].info.e_mean;
          win_successes += results[e].info.episode_success ? 1 : 0;
          acc[e] = EpisodeAccumulator{};
          curriculum =
              curriculum_update(curriculum, results[e].info.episode_success);
          for (auto& env : envs) env.set_curriculum_level(curriculum.level);
          raw_obs[e] = reset_env(e);
        } else {
          raw_obs[e] = results[e].obs;
        }
      }
      global_steps += n_envs;
    }

    // Bootstrap values for cut segments.
    for (int e = 0; e < n_envs; ++e) {
      obs_mat.row(e) = norm.normalize(raw_obs[e]).transpose();
    }
    buf.bootstrap = params.critic.forward(obs_mat).col(0);

    compute_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda);
    const double lr = lr_schedule(std::min(global_steps, cfg.ppo.total_steps),
                                  cfg.ppo.total_steps, cfg.ppo.lr_init,
                                  cfg.ppo.lr_final);

    LossReport report;
    try {
      report = ppo_update(params, opt, buf, cfg.ppo, lr, update_rng);
    } catch (const NonFiniteLoss&) {
      // Divergence: leave a checkpoint behind, then propagate.
      PolicyCheckpoint ckpt{params, norm, global_steps};
      save_checkpoint(cfg.out_dir + "/ckpt_diverged.bin", ckpt);
      throw;
    }

    const double win_reward =
        win_episodes > 0 ? win_reward_sum / win_episodes : 0.0;
    const double win_emean =
        win_episodes > 0 ? win_emean_sum / win_episodes : 0.0;
    const double win_rate =
        win_episodes > 0
            ? static_cast<double>(win_successes) / win_episodes
            : 0.0;
    metrics << update << "," << global_steps << "," << fmt(lr) << ","
            << curriculum.level << "," << episodes_total << ","
            << fmt(win_reward) << "," << fmt(win_emean) << ","
            << fmt(win_rate) << "," << fmt(report.policy_loss) << ","
            << fmt(report.value_loss) << "," << fmt(report.entropy) << ","
            << fmt(report.clip_fraction) << "," << fmt(report.approx_kl)
            << "," << fmt(report.grad_norm) << "\n";
    metrics.flush();

    if (cfg.log_every > 0 && update % cfg.log_every == 0) {
      std::printf(
          "update %d/%d  steps %lld  level %d  episodes %lld  "
          "reward %.2f  final_e_mean %.3f mm  success %.0f%%\n",
          update, updates_total, global_steps, curriculum.level,
          episodes_total, win_reward, win_emean, 100.0 * win_rate);
      std::fflush(stdout);
    }

    stats.mean_episode_reward = win_reward;
    stats.mean_final_e_mean = win_emean;
    if (win_episodes > 0) {
      win_reward_sum = win_emean_sum = 0.0;
      win_episodes = win_successes = 0;
    }

    if (update % cfg.ppo.checkpoint_every == 0) {
      PolicyCheckpoint ckpt{params, norm, global_steps};
      save_checkpoint(cfg.out_dir + "/ckpt_latest.bin", ckpt);
    }
    stats.updates = update;
  }

  PolicyCheckpoint final_ckpt{params, norm, global_steps};
  stats.checkpoint_path = cfg.out_dir + "/policy_final.ckpt";
  save_checkpoint(stats.checkpoint_path, final_ckpt);

  stats.global_steps = global_steps;
  stats.episodes = episodes_total;
  stats.final_level = curriculum.level;
  return stats;
}

}  // namespace fiberloop
