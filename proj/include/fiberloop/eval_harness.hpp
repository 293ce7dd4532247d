#ifndef FIBERLOOP_EVAL_HARNESS_HPP_
#define FIBERLOOP_EVAL_HARNESS_HPP_

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fiberloop/checkpoint.hpp"
#include "fiberloop/dataset.hpp"
#include "fiberloop/env.hpp"

namespace fiberloop {

// Perturbed-deployment description: the trained policy runs unchanged while
// the simulator gains surface friction, observation noise, and scaled fiber
// properties (stiffness as the diameter proxy, EI ~ d^4).
struct DeployConfig {
  SurfaceModel surface;         // coulomb, mu 0.3 by default
  double obs_noise_std = 0.05;  // mm, additive Gaussian on centerline points
  double stiffness_scale = 1.0;
  double length = 15.0;       // mm
  double control_rate = 40.0;  // Hz; must match the training control_dt
  double max_duration = 8.0;   // s
  double converged_tol_mm = 0.3;  // rms shape error counted as converged

  DeployConfig() {
    surface.mode = SurfaceModel::Mode::kCoulomb;
    surface.mu = 0.3;
  }

  void validate(const EnvConfig& env) const;  // throws InvariantViolation
};

struct TrialResult {
  std::vector<double> time_s;
  std::vector<double> e_mean_series;
  std::vector<double> e_max_series;
  double final_e_mean = 0.0;
  double final_e_max = 0.0;
  double target_e_bend = 0.0;
  bool converged = false;
  bool failed = false;  // physics error mid-trial
  std::string failure;
  int64_t init_id = -1;
  int64_t target_id = -1;
  DeployConfig deploy;
  Centerline init_shape;    // state_points resolution, for rendering
  Centerline target_shape;
  Centerline final_shape;
};

// Closed loop: at every control step the (noisy) observed centerline is
// normalized with the frozen training statistics and the policy mean drives
// the grippers. Runs for max_duration regardless of intermediate success.
TrialResult run_closed_loop(const PolicyCheckpoint& ckpt,
                            const EnvConfig& env_cfg, const RodParams& rod,
                            const DeployConfig& deploy,
                            const ConfigRecord& init,
                            const ConfigRecord& target, uint64_t seed);

// Ablation: plans the gripper trajectory by rolling the policy in the clean
// frictionless simulator, then replays those positions verbatim in the
// perturbed simulator with no feedback.
TrialResult run_open_loop(const PolicyCheckpoint& ckpt,
                          const EnvConfig& env_cfg, const RodParams& rod,
                          const DeployConfig& deploy, const ConfigRecord& init,
                          const ConfigRecord& target, uint64_t seed);

struct RepeatabilityReport {
  std::vector<TrialResult> trials;  // 3 targets x 8 inits
  double mean_final_e_mean = 0.0;
  double std_final_e_mean = 0.0;
  double mean_final_e_max = 0.0;
  double std_final_e_max = 0.0;
};

// 3 dataset targets, 8 distinct initial configurations each, closed loop.
RepeatabilityReport repeatability_experiment(const PolicyCheckpoint& ckpt,
                                             const EnvConfig& env_cfg,
                                             const RodParams& rod,
                                             const DeployConfig& deploy,
                                             const Dataset& dataset,
                                             uint64_t seed, int n_threads = 0);

struct GeneralizationCondition {
  double stiffness_scale = 1.0;
  double length = 15.0;  // mm
  std::vector<TrialResult> trials;  // 20: each of 5 shapes once as target
  double median_final_e_max = 0.0;
  double mean_final_e_max = 0.0;
  double median_final_e_mean = 0.0;
};

struct GeneralizationReport {
  std::vector<GeneralizationCondition> conditions;  // 9 = 3 scales x 3 lengths
  int total_trials() const;
};

// 3 diameter proxies x 3 lengths; per condition 5 freshly settled shapes,
// each used once as the target with the remaining 4 as inits.
GeneralizationReport generalization_experiment(const PolicyCheckpoint& ckpt,
                                               const EnvConfig& env_cfg,
                                               const RodParams& rod,
                                               const DeployConfig& deploy,
                                               uint64_t seed,
                                               int n_threads = 0);

// Spearman rank correlation with average ranks for ties.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

struct BendingAnalysis {
  std::vector<std::pair<double, double>> pairs;  // (target E_bend, final e_mean)
  std::vector<double> dataset_e_bend;
  std::vector<double> eval_e_bend;
  std::optional<double> spearman;  // empty when degenerate (all-equal ranks)
};

BendingAnalysis bending_energy_analysis(const std::vector<TrialResult>& trials,
                                        const Dataset& dataset);

// Deterministic SVG overlays: one panel per trial with exactly three
// polylines (init, target, final) plus the error-curve panel.
std::string render_trial_svg(const TrialResult& trial);
std::string render_trials_svg(const std::vector<TrialResult>& trials);

// CSV emission helpers shared by the CLI; timestamp-free by construction.
std::string trials_csv(const std::vector<TrialResult>& trials);
std::string trial_series_csv(const TrialResult& trial);

}  // namespace fiberloop

#endif  // FIBERLOOP_EVAL_HARNESS_HPP_
