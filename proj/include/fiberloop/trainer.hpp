#ifndef FIBERLOOP_TRAINER_HPP_
#define FIBERLOOP_TRAINER_HPP_

#include <string>

#include "fiberloop/checkpoint.hpp"
#include "fiberloop/dataset.hpp"
#include "fiberloop/env.hpp"
#include "fiberloop/ppo.hpp"

namespace fiberloop {

struct TrainConfig {
  EnvConfig env;
  RodParams rod;
  SurfaceModel surface;  // frictionless during training
  PpoConfig ppo;
  uint64_t seed = 0;
  std::string out_dir;
  int n_threads = 0;           // env-stepping pool; 0 = hardware concurrency
  std::string resume_from;     // optional checkpoint path
  int log_every = 10;          // progress lines, 0 = silent
};

struct TrainStats {
  long long global_steps = 0;
  int updates = 0;
  long long episodes = 0;
  int final_level = 0;
  double mean_episode_reward = 0.0;  // over the last logging window
  double mean_final_e_mean = 0.0;    // over the last logging window, mm
  std::string checkpoint_path;       // final checkpoint
  std::string metrics_path;
};

// Curriculum-driven PPO training: concurrent env instances with per-env rng
// streams, running observation normalization (updated during training only),
// GAE, clipped-surrogate updates on a cosine learning-rate schedule, and
// periodic checkpoints. Deterministic given config and seed; results do not
// depend on n_threads.
TrainStats train(const TrainConfig& cfg, const Dataset& dataset);

}  // namespace fiberloop

#endif  // FIBERLOOP_TRAINER_HPP_
