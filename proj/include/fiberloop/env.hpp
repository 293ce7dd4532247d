#ifndef FIBERLOOP_ENV_HPP_
#define FIBERLOOP_ENV_HPP_

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>

#include "fiberloop/dataset.hpp"
#include "fiberloop/geometry.hpp"
#include "fiberloop/rng.hpp"
#include "fiberloop/rod_dynamics.hpp"

namespace fiberloop {

struct EnvConfig {
  double control_dt = 0.025;  // s, 40 Hz
  int horizon_steps = 320;    // 8 s episode cap
  int hold_steps = 80;        // 2 s success hold
  double v_max = 2.0;         // mm/s action scale
  double rho = 0.9;           // safe elongation fraction
  double w_er = 1.0;          // per mm^2
  double w_te = 10.0;         // per mm
  double w_sm = 0.1;
  double bonus_base = 10.0;
  int state_points = 10;
  // Resets re-settle the init record's chain; these must match the values
  // the dataset was generated with for the first observation to reproduce
  // the stored centerline exactly.
  double settle_ke_tol = 1e-10;
  int settle_max_steps = 20000;
  // Additive Gaussian noise on the observed current centerline, in mm.
  // Zero during training; deployment sets it from DeployConfig.
  double obs_noise_std = 0.0;

  int obs_dim() const { return 8 + 4 * state_points + 4; }
  void validate() const;  // throws InvariantViolation
};

// Normalized velocity command, ordered (vx_L, vy_L, vx_R, vy_R).
struct Action {
  std::array<double, 4> v{0.0, 0.0, 0.0, 0.0};

  Action clipped() const {
    Action a = *this;
    for (double& x : a.v) x = std::clamp(x, -1.0, 1.0);
    return a;
  }
};

// 52-dim policy input ordered (x_t, xdot_t, C_t, C*, a_prev).
using Observation = Eigen::VectorXd;

struct RewardBreakdown {
  double epsilon = 0.0;  // mm^2
  double p_te = 0.0;     // mm
  double p_sm = 0.0;
  double bonus = 0.0;
  double total = 0.0;
};

// Success-threshold curriculum over a 50-episode outcome window.
struct CurriculumState {
  static constexpr int kWindow = 50;
  int level = 0;
  std::array<uint8_t, kWindow> window{};
  int count = 0;
  int head = 0;
  int successes = 0;
};

// Geometric interpolation from 1.2 mm (level 0) to 0.01 mm (level 12).
double threshold_for_level(int level);

CurriculumState curriculum_update(const CurriculumState& c,
                                  bool episode_success);

// Clips to [-1, 1] then scales by v_max, giving (v_L, v_R) in mm/s.
std::pair<Vec2, Vec2> scale_action(const Action& a, double v_max);

// Eq. 4 breakdown. The tension penalty activates past rho * fiber_length;
// the success bonus is bonus_base * (1 + level) while the error test passes,
// zero otherwise.
RewardBreakdown compute_reward(const Centerline& current,
                               const Centerline& target,
                               const GripperPair& grippers, const Action& a_t,
                               const Action& a_prev, const EnvConfig& config,
                               double fiber_length, bool success_bonus_active,
                               int level = 0);

struct StepInfo {
  double e_mean = 0.0;
  double e_max = 0.0;
  double epsilon = 0.0;
  bool success_now = false;
  int hold = 0;
  int step_count = 0;
  bool done = false;
  bool episode_success = false;
  double separation = 0.0;
};

// One shape-regulation MDP instance. Single-threaded; run many instances
// concurrently for rollout collection.
class FiberEnv {
 public:
  FiberEnv(EnvConfig config, RodParams rod, SurfaceModel surface);

  // Instantiates the chain at the init record's settled shape and stores the
  // target record's centerline as the goal.
  Observation reset(const ConfigRecord& init, const ConfigRecord& target,
                    uint64_t seed);

  struct StepResult {
    Observation obs;
    RewardBreakdown reward;
    StepInfo info;
  };
  StepResult step(const Action& action);

  void set_curriculum_level(int level);
  int curriculum_level() const { return level_; }
  bool episode_active() const { return active_; }
  const EnvConfig& config() const { return config_; }
  const RodParams& rod_params() const { return rod_; }
  const ChainState& chain() const { return chain_; }
  const Centerline& target() const { return target_; }
  const GripperPair& grippers() const { return grippers_; }
  Centerline current_centerline() const;

 private:
  Observation assemble_observation(const Action& realized_prev,
                                   const Vec2& v_l, const Vec2& v_r);
  void apply_separation_clamp(Vec2& x_l, Vec2& x_r) const;

  EnvConfig config_;
  RodParams rod_;
  SurfaceModel surface_;
  ChainState chain_;
  Centerline target_;
  GripperPair grippers_;
  Action prev_action_;
  Rng noise_rng_{0};
  int level_ = 0;
  int step_count_ = 0;
  int hold_ = 0;
  bool active_ = false;
};

}  // namespace fiberloop

#endif  // FIBERLOOP_ENV_HPP_
