#include "fiberloop/env.hpp"

#include <cmath>
#include <string>

#include "fiberloop/errors.hpp"

namespace fiberloop {

namespace {
constexpr double kThresholdTop = 1.2;      // mm, level 0
constexpr double kThresholdBottom = 0.01;  // mm, level 12
constexpr int kMaxLevel = 12;
// Gripper separation is clamped into this band (fractions of fiber length)
// so the inextensible chain always stays kinematically feasible.
constexpr double kMaxSeparationFrac = 0.98;
constexpr double kMinSeparationFrac = 0.06;
}  // namespace

void EnvConfig::validate() const {
  std::vector<std::string> bad;
  if (!(control_dt > 0.0)) bad.push_back("control_dt must be > 0");
  if (horizon_steps < 1) bad.push_back("horizon_steps must be >= 1");
  if (hold_steps < 1) bad.push_back("hold_steps must be >= 1");
  if (horizon_steps < hold_steps) {
    bad.push_back("horizon_steps must be >= hold_steps");
  }
  if (!(v_max > 0.0)) bad.push_back("v_max must be > 0");
  if (!(rho > 0.0) || rho > 1.0) bad.push_back("rho must be in (0, 1]");
  if (w_er < 0.0 || w_te < 0.0 || w_sm < 0.0) {
    bad.push_back("reward weights must be >= 0");
  }
  if (bonus_base < 0.0) bad.push_back("bonus_base must be >= 0");
  if (state_points < 2) bad.push_back("state_points must be >= 2");
  if (!(settle_ke_tol > 0.0)) bad.push_back("settle_ke_tol must be > 0");
  if (settle_max_steps < 1) bad.push_back("settle_max_steps must be >= 1");
  if (obs_noise_std < 0.0) bad.push_back("obs_noise_std must be >= 0");
  if (!bad.empty()) {
    std::string msg = "invalid EnvConfig:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw InvariantViolation(msg);
  }
}

double threshold_for_level(int level) {
  if (level < 0 || level > kMaxLevel) {
    throw InvariantViolation("curriculum level out of range: " +
                             std::to_string(level));
  }
  return kThresholdTop *
         std::pow(kThresholdBottom / kThresholdTop,
                  static_cast<double>(level) / static_cast<double>(kMaxLevel));
}

CurriculumState curriculum_update(const CurriculumState& c,
                                  bool episode_success) {
  CurriculumState n = c;
  if (n.count < CurriculumState::kWindow) {
    n.window[n.head] = episode_success ? 1 : 0;
    n.successes += episode_success ? 1 : 0;
    n.head = (n.head + 1) % CurriculumState::kWindow;
    n.count += 1;
  } else {
    n.successes -= n.window[n.head];
    n.window[n.head] = episode_success ? 1 : 0;
    n.successes += episode_success ? 1 : 0;
    n.head = (n.head + 1) % CurriculumState::kWindow;
  }

  if (n.count == CurriculumState::kWindow) {
    const double rate =
        static_cast<double>(n.successes) / CurriculumState::kWindow;
    int level = n.level;
    if (rate > 0.70) {
      level = std::min(kMaxLevel, level + 1);
    } else if (rate < 0.30) {
      level = std::max(0, level - 1);
    }
    if (level != n.level) {
      // Clear the window so stale outcomes do not whipsaw the level.
      n = CurriculumState{};
      n.level = level;
    }
  }
  return n;
}

std::pair<Vec2, Vec2> scale_action(const Action& a, double v_max) {
  const Action c = a.clipped();
  return {Vec2{c.v[0] * v_max, c.v[1] * v_max},
          Vec2{c.v[2] * v_max, c.v[3] * v_max}};
}

RewardBreakdown compute_reward(const Centerline& current,
                               const Centerline& target,
                               const GripperPair& grippers, const Action& a_t,
                               const Action& a_prev, const EnvConfig& config,
                               double fiber_length, bool success_bonus_active,
                               int level) {
  if (current.size() != static_cast<std::size_t>(config.state_points) ||
      target.size() != static_cast<std::size_t>(config.state_points)) {
    throw LengthMismatch("reward centerlines must have state_points points");
  }

  RewardBreakdown r;
  r.epsilon = shape_error(current, target).epsilon;

  const double l_max = config.rho * fiber_length;
  const double grip_sep = distance(grippers.x_l, grippers.x_r);
  r.p_te = grip_sep > l_max ? grip_sep - l_max : 0.0;

  const Action a = a_t.clipped();
  const Action prev = a_prev.clipped();
  double sm = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double d = a.v[i] - prev.v[i];
    sm += d * d;
  }
  r.p_sm = std::sqrt(sm);

  r.bonus =
      success_bonus_active ? config.bonus_base * (1.0 + level) : 0.0;
  r.total = -config.w_er * r.epsilon - config.w_te * r.p_te -
            config.w_sm * r.p_sm + r.bonus;
  return r;
}

FiberEnv::FiberEnv(EnvConfig config, RodParams rod, SurfaceModel surface)
    : config_(config), rod_(rod), surface_(surface) {
  config_.validate();
  rod_.validate();
  surface_.validate();
  const double ratio = config_.control_dt / rod_.physics_dt;
  if (std::abs(ratio - std::llround(ratio)) > 1e-9) {
    throw InvariantViolation(
        "control_dt must be an integer multiple of physics_dt");
  }
}

Centerline FiberEnv::current_centerline() const {
  return resample(chain_centerline(chain_, rod_), config_.state_points);
}

void FiberEnv::apply_separation_clamp(Vec2& x_l, Vec2& x_r) const {
  const double max_sep = kMaxSeparationFrac * rod_.total_length;
  const double min_sep = kMinSeparationFrac * rod_.total_length;
  const Vec2 axis = x_r - x_l;
  const double d = axis.norm();
  if (d > max_sep) {
    const Vec2 u = axis / d;
    const double excess = 0.5 * (d - max_sep);
    x_l += u * excess;
    x_r -= u * excess;
  } else if (d < min_sep) {
    Vec2 u = d > 1e-12 ? axis / d : Vec2{1.0, 0.0};
    const double deficit = 0.5 * (min_sep - d);
    x_l -= u * deficit;
    x_r += u * deficit;
  }
}

Observation FiberEnv::assemble_observation(const Action& realized_prev,
                                           const Vec2& v_l, const Vec2& v_r) {
  Observation obs(config_.obs_dim());
  int k = 0;
  obs[k++] = grippers_.x_l.x;
  obs[k++] = grippers_.x_l.y;
  obs[k++] = grippers_.x_r.x;
  obs[k++] = grippers_.x_r.y;
  obs[k++] = v_l.x;
  obs[k++] = v_l.y;
  obs[k++] = v_r.x;
  obs[k++] = v_r.y;
  const Centerline current = current_centerline();
  for (const Vec2& p : current.points) {
    double nx = 0.0, ny = 0.0;
    if (config_.obs_noise_std > 0.0) {
      nx = noise_rng_.normal(0.0, config_.obs_noise_std);
      ny = noise_rng_.normal(0.0, config_.obs_noise_std);
    }
    obs[k++] = p.x + nx;
    obs[k++] = p.y + ny;
  }
  for (const Vec2& p : target_.points) {
    obs[k++] = p.x;
    obs[k++] = p.y;
  }
  for (double a : realized_prev.v) obs[k++] = a;
  return obs;
}

Observation FiberEnv::reset(const ConfigRecord& init,
                            const ConfigRecord& target, uint64_t seed) {
  if (static_cast<int>(target.settled_centerline.size()) !=
      config_.state_points) {
    throw InvariantViolation("target record centerline point count (" +
                             std::to_string(target.settled_centerline.size()) +
                             ") does not match state_points");
  }

  GripperPair grip;
  grip.x_l = init.x_l;
  grip.x_r = init.x_r;
  ChainState chain = init_chain(rod_, grip, init.buckle_sign, seed);
  SurfaceModel frictionless;  // init shapes are settled without contact
  SettleResult settled = settle(chain, rod_, frictionless,
                                config_.settle_ke_tol,
                                config_.settle_max_steps);

  chain_ = std::move(settled.state);
  grippers_ = grip;
  grippers_.v_l = Vec2{0.0, 0.0};
  grippers_.v_r = Vec2{0.0, 0.0};
  target_ = target.settled_centerline;
  prev_action_ = Action{};
  noise_rng_ = Rng(stream_seed(seed, "obs-noise"));
  step_count_ = 0;
  hold_ = 0;
  active_ = true;
  return assemble_observation(prev_action_, Vec2{0, 0}, Vec2{0, 0});
}

FiberEnv::StepResult FiberEnv::step(const Action& action) {
  if (!active_) {
    throw InvariantViolation("step called on an inactive episode");
  }

  const Action a = action.clipped();
  auto [v_l, v_r] = scale_action(a, config_.v_max);

  Vec2 x_l = grippers_.x_l + v_l * config_.control_dt;
  Vec2 x_r = grippers_.x_r + v_r * config_.control_dt;
  apply_separation_clamp(x_l, x_r);
  const Vec2 realized_v_l = (x_l - grippers_.x_l) / config_.control_dt;
  const Vec2 realized_v_r = (x_r - grippers_.x_r) / config_.control_dt;

  GripperPair next = grippers_;
  next.x_l = x_l;
  next.x_r = x_r;
  next.v_l = realized_v_l;
  next.v_r = realized_v_r;
  chain_ = fiberloop::step(chain_, rod_, next, surface_, config_.control_dt);
  grippers_ = next;

  const Centerline current = current_centerline();
  const ShapeError err = shape_error(current, target_);
  const double rms_error = std::sqrt(err.epsilon);
  const bool success_now = rms_error < threshold_for_level(level_);
  hold_ = success_now ? hold_ + 1 : 0;
  step_count_ += 1;

  const RewardBreakdown reward =
      compute_reward(current, target_, grippers_, a, prev_action_, config_,
                     rod_.total_length, success_now, level_);

  StepInfo info;
  info.e_mean = err.e_mean;
  info.e_max = err.e_max;
  info.epsilon = err.epsilon;
  const double grip_sep = distance(grippers_.x_l, grippers_.x_r);
  info.success_now = success_now;
  info.hold = hold_;
  info.step_count = step_count_;
  info.separation = grip_sep;
  if (hold_ >= config_.hold_steps) {
    info.done = true;
    info.episode_success = true;
  } else if (step_count_ >= config_.horizon_steps) {
    info.done = true;
    info.episode_success = false;
  }
  if (info.done) active_ = false;

  prev_action_ = a;
  StepResult result;
  result.obs = assemble_observation(a, realized_v_l, realized_v_r);
  result.reward = reward;
  result.info = info;
  return result;
}

void FiberEnv::set_curriculum_level(int level) {
  if (level < 0 || level > kMaxLevel) {
    throw InvariantViolation("curriculum level out of range");
  }
  level_ = level;
}

}  // namespace fiberloop
