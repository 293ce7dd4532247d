#include "fiberloop/rod_dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fiberloop/errors.hpp"
#include "fiberloop/rng.hpp"

namespace fiberloop {

namespace {

constexpr double kProjectionTarget = 1e-10;  // mm, margin below kEndpointTol
constexpr int kProjectionMaxIters = 80;
constexpr double kClampAngleTol = 1e-12;  // rad, total-turn residual
constexpr double kStraightSlackTol = 1e-12;  // relative slack treated as zero
constexpr double kTieBreakAngle = 1e-4;      // rad, buckle tie-break scale
// Frozen (stuck) joints get this inverse weight in the projections, so the
// endpoint correction is absorbed almost entirely by the slipping joints.
constexpr double kFrozenInvWeight = 1e-8;

struct Workspace {
  std::vector<double> headings;  // per segment
  std::vector<Vec2> points;      // n_segments + 1
  std::vector<double> jac[3];    // constraint rows over DOFs
  std::vector<double> delta;
  std::vector<double> inv_w;       // per-DOF inverse projection weight
  std::vector<double> torque;      // generalized friction torque
  std::vector<Vec2> force;         // per segment friction force
  std::vector<Vec2> suffix_f;      // suffix force sums
  std::vector<double> suffix_t;    // suffix torque sums about origin
  std::vector<Vec2> mid_velocity;  // per segment
  std::vector<char> frozen;        // per joint
};

void forward_points(const ChainState& s, const RodParams& p, Workspace& w) {
  const int n = p.n_segments;
  const double l = p.segment_length();
  w.headings.resize(n);
  w.points.resize(n + 1);
  double phi = s.base_heading;
  w.points[0] = s.base_position;
  for (int i = 0; i < n; ++i) {
    w.headings[i] = phi;
    w.points[i + 1] = w.points[i] + Vec2{l * std::cos(phi), l * std::sin(phi)};
    if (i < n - 1) phi += s.joint_angles[i];
  }
}

// Solves the m x m symmetric system A x = b in place (m <= 3), Gaussian
// elimination with partial pivoting plus a Levenberg shift when A is close
// to singular (straight-chain endpoint Jacobians lose rank along the axis).
bool solve_small(int m, double a[3][3], double b[3], double x[3]) {
  double trace = 0.0;
  for (int i = 0; i < m; ++i) trace += a[i][i];
  const double shift = std::max(trace, 1e-30) * 1e-12;
  for (int i = 0; i < m; ++i) a[i][i] += shift;

  int piv[3] = {0, 1, 2};
  for (int col = 0; col < m; ++col) {
    int best = col;
    for (int r = col + 1; r < m; ++r) {
      if (std::abs(a[piv[r]][col]) > std::abs(a[piv[best]][col])) best = r;
    }
    std::swap(piv[col], piv[best]);
    const double d = a[piv[col]][col];
    if (std::abs(d) < 1e-300) return false;
    for (int r = col + 1; r < m; ++r) {
      const double f = a[piv[r]][col] / d;
      for (int c = col; c < m; ++c) a[piv[r]][c] -= f * a[piv[col]][c];
      b[piv[r]] -= f * b[piv[col]];
    }
  }
  for (int col = m - 1; col >= 0; --col) {
    double s = b[piv[col]];
    for (int c = col + 1; c < m; ++c) s -= a[piv[col]][c] * x[c];
    x[col] = s / a[piv[col]][col];
  }
  return true;
}

int dof_count(const RodParams& p) {
  return p.end_clamp ? p.n_segments - 1 : p.n_segments;
}

// Per-DOF inverse projection weights: 1 for free joints, kFrozenInvWeight for
// stuck ones. Uniform (empty frozen set) means plain least squares.
void fill_inv_weights(const RodParams& p, const std::vector<char>* frozen,
                      Workspace& w) {
  const int ndof = dof_count(p);
  w.inv_w.assign(ndof, 1.0);
  if (frozen == nullptr) return;
  int col = p.end_clamp ? 0 : 1;  // base heading is never frozen
  for (std::size_t j = 0; j < frozen->size(); ++j, ++col) {
    if ((*frozen)[j]) w.inv_w[col] = kFrozenInvWeight;
  }
}

// Constraint Jacobian at the current configuration. Rows: endpoint x,
// endpoint y, and (if clamped) the total-turn row. DOF order: base_heading
// first when unclamped, then the joint angles.
int build_jacobian(const ChainState& s, const RodParams& p, Workspace& w) {
  const int n = p.n_segments;
  const int ndof = dof_count(p);
  const int rows = p.end_clamp ? 3 : 2;
  for (int r = 0; r < rows; ++r) w.jac[r].assign(ndof, 0.0);

  const Vec2 end = w.points[n];
  int col = 0;
  if (!p.end_clamp) {
    const Vec2 lever = (end - w.points[0]).perp();
    w.jac[0][col] = lever.x;
    w.jac[1][col] = lever.y;
    ++col;
  }
  for (int j = 0; j < n - 1; ++j, ++col) {
    const Vec2 lever = (end - w.points[j + 1]).perp();
    w.jac[0][col] = lever.x;
    w.jac[1][col] = lever.y;
    if (p.end_clamp) w.jac[2][col] = 1.0;
  }
  return rows;
}

double total_turn(const ChainState& s) {
  double t = 0.0;
  for (double a : s.joint_angles) t += a;
  return t;
}

// Re-pins the right endpoint (and, when clamped, the terminal heading) by
// damped Gauss-Newton in joint space, minimum-norm in the weight metric.
// Segment lengths stay exact because the iteration only moves angles.
// Returns the final endpoint residual.
double project_positions(ChainState& s, const RodParams& p, const Vec2& target,
                         Workspace& w) {
  const int n = p.n_segments;
  const int ndof = dof_count(p);

  auto merit = [&](const ChainState& c) {
    forward_points(c, p, w);
    const Vec2 r = w.points[n] - target;
    double m = r.squared_norm();
    if (p.end_clamp) {
      const double ct = total_turn(c) * p.total_length;
      m += ct * ct;
    }
    return m;
  };

  double current = merit(s);
  for (int iter = 0; iter < kProjectionMaxIters; ++iter) {
    const Vec2 r = w.points[n] - target;
    const double turn = p.end_clamp ? total_turn(s) : 0.0;
    if (r.norm() < kProjectionTarget && std::abs(turn) < kClampAngleTol) {
      return r.norm();
    }

    const int rows = build_jacobian(s, p, w);
    double residual[3] = {r.x, r.y, turn};

    double a[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    for (int i = 0; i < rows; ++i) {
      for (int j = i; j < rows; ++j) {
        double acc = 0.0;
        for (int c = 0; c < ndof; ++c) {
          acc += w.jac[i][c] * w.inv_w[c] * w.jac[j][c];
        }
        a[i][j] = a[j][i] = acc;
      }
    }
    double rhs[3] = {-residual[0], -residual[1], -residual[2]};
    double lambda[3] = {0, 0, 0};
    if (!solve_small(rows, a, rhs, lambda)) break;

    w.delta.assign(ndof, 0.0);
    for (int c = 0; c < ndof; ++c) {
      double d = 0.0;
      for (int i = 0; i < rows; ++i) d += w.jac[i][c] * lambda[i];
      w.delta[c] = d * w.inv_w[c];
    }

    // Backtracking keeps far-from-target init guesses from overshooting.
    double scale = 1.0;
    ChainState trial = s;
    bool accepted = false;
    for (int ls = 0; ls < 12; ++ls) {
      trial = s;
      int col = 0;
      if (!p.end_clamp) trial.base_heading += scale * w.delta[col++];
      for (int j = 0; j < n - 1; ++j, ++col) {
        trial.joint_angles[j] += scale * w.delta[col];
      }
      const double trial_merit = merit(trial);
      if (trial_merit < current) {
        s = trial;
        current = trial_merit;
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) break;
  }
  forward_points(s, p, w);
  return (w.points[n] - target).norm();
}

// Removes the constraint-violating rate component (minimum-norm in the
// weight metric) so the endpoint tracks end_rate and, when clamped, the
// total turn rate stays zero.
void project_rates(ChainState& s, const RodParams& p, const Vec2& end_rate,
                   Workspace& w) {
  const int n = p.n_segments;
  const int ndof = dof_count(p);
  forward_points(s, p, w);
  const int rows = build_jacobian(s, p, w);

  double jdot[3] = {0, 0, 0};
  {
    int col = 0;
    auto accumulate = [&](double rate) {
      for (int i = 0; i < rows; ++i) jdot[i] += w.jac[i][col] * rate;
      ++col;
    };
    if (!p.end_clamp) accumulate(s.base_heading_rate);
    for (int j = 0; j < n - 1; ++j) accumulate(s.joint_rates[j]);
  }

  double a[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  for (int i = 0; i < rows; ++i) {
    for (int j = i; j < rows; ++j) {
      double acc = 0.0;
      for (int c = 0; c < ndof; ++c) {
        acc += w.jac[i][c] * w.inv_w[c] * w.jac[j][c];
      }
      a[i][j] = a[j][i] = acc;
    }
  }
  double rhs[3] = {end_rate.x - jdot[0], end_rate.y - jdot[1], -jdot[2]};
  double lambda[3] = {0, 0, 0};
  if (!solve_small(rows, a, rhs, lambda)) return;

  int col = 0;
  auto apply = [&](double& rate) {
    double d = 0.0;
    for (int i = 0; i < rows; ++i) d += w.jac[i][col] * lambda[i];
    rate += d * w.inv_w[col];
    ++col;
  };
  if (!p.end_clamp) apply(s.base_heading_rate);
  for (int j = 0; j < n - 1; ++j) apply(s.joint_rates[j]);
}

// Segment-midpoint material velocities from the rigid-link recursion.
void midpoint_velocities(const ChainState& s, const RodParams& p,
                         const Vec2& base_velocity, Workspace& w) {
  const int n = p.n_segments;
  forward_points(s, p, w);
  w.mid_velocity.resize(n);
  Vec2 v_point = base_velocity;  // velocity of q_1 (dragged by the gripper)
  double omega = s.base_heading_rate;
  for (int i = 0; i < n; ++i) {
    if (i > 0) omega += s.joint_rates[i - 1];
    const Vec2 mid = (w.points[i] + w.points[i + 1]) * 0.5;
    w.mid_velocity[i] = v_point + (mid - w.points[i]).perp() * omega;
    v_point = v_point + (w.points[i + 1] - w.points[i]).perp() * omega;
  }
}

// Kinetic Coulomb forces -mu N v_hat on segment midpoints (tapered below
// stiction_velocity), mapped to generalized torques via suffix sums.
void friction_torques(const ChainState& s, const RodParams& p,
                      const SurfaceModel& surface, const Vec2& base_velocity,
                      Workspace& w) {
  const int n = p.n_segments;
  const int ndof = dof_count(p);
  w.torque.assign(ndof, 0.0);

  midpoint_velocities(s, p, base_velocity, w);
  w.force.resize(n);
  const double f_kinetic = surface.mu * surface.normal_load_per_segment;
  for (int i = 0; i < n; ++i) {
    const Vec2 v = w.mid_velocity[i];
    const double speed = v.norm();
    if (speed <= 0.0) {
      w.force[i] = Vec2{0.0, 0.0};
      continue;
    }
    const double taper = std::min(1.0, speed / surface.stiction_velocity);
    w.force[i] = v * (-f_kinetic * taper / speed);
  }

  // Q_j = sum_{i>j} cross(mid_i - pivot_j, F_i) via suffix sums.
  w.suffix_f.assign(n + 1, Vec2{0.0, 0.0});
  w.suffix_t.assign(n + 1, 0.0);
  for (int i = n - 1; i >= 0; --i) {
    const Vec2 mid = (w.points[i] + w.points[i + 1]) * 0.5;
    w.suffix_f[i] = w.suffix_f[i + 1] + w.force[i];
    w.suffix_t[i] = w.suffix_t[i + 1] + mid.cross(w.force[i]);
  }
  int col = 0;
  if (!p.end_clamp) {
    w.torque[col++] = w.suffix_t[0] - w.points[0].cross(w.suffix_f[0]);
  }
  for (int j = 0; j < n - 1; ++j, ++col) {
    w.torque[col] =
        w.suffix_t[j + 1] - w.points[j + 1].cross(w.suffix_f[j + 1]);
  }
}

void check_rates(const ChainState& s, const RodParams& p) {
  auto bad = [&](double r) {
    return !std::isfinite(r) || std::abs(r) > p.blowup_rate;
  };
  if (bad(s.base_heading_rate)) {
    throw NumericalDivergence("base heading rate exceeded blow-up bound " +
                              std::to_string(p.blowup_rate));
  }
  for (double r : s.joint_rates) {
    if (bad(r)) {
      throw NumericalDivergence("joint rate exceeded blow-up bound " +
                                std::to_string(p.blowup_rate));
    }
  }
}

// One physics_dt substep: implicit joint damping, exact per-joint elastic
// rotation (unconditionally stable and energy-conserving for the decoupled
// part), endpoint re-pinning, then tangent-space rate correction. Joints in
// the frozen set are held by static friction: their angle and rate do not
// integrate and the projections avoid moving them.
void integrate_substep(ChainState& s, const RodParams& p,
                       const SurfaceModel& surface, const Vec2& x_l,
                       const Vec2& x_r, const Vec2& v_l, const Vec2& v_r,
                       const std::vector<char>* frozen, Workspace& w) {
  const int n = p.n_segments;
  const double dt = p.physics_dt;
  const double inertia = p.joint_inertia();

  const bool friction = surface.friction_active();
  if (friction) {
    friction_torques(s, p, surface, v_l, w);
  }

  s.base_position = x_l;

  const double damp = 1.0 / (1.0 + dt * p.joint_damping / inertia);
  const double omega = std::sqrt(p.joint_stiffness / inertia);
  const double ca = std::cos(omega * dt);
  const double sa = std::sin(omega * dt);
  {
    int col = p.end_clamp ? 0 : 1;
    for (int j = 0; j < n - 1; ++j, ++col) {
      if (frozen != nullptr && (*frozen)[j]) {
        s.joint_rates[j] = 0.0;
        continue;
      }
      double rate = s.joint_rates[j] * damp;
      if (friction) rate += dt * w.torque[col] / inertia;
      const double th = s.joint_angles[j];
      s.joint_angles[j] = th * ca + (rate / omega) * sa;
      s.joint_rates[j] = -th * omega * sa + rate * ca;
    }
  }
  if (!p.end_clamp) {
    if (friction) s.base_heading_rate += dt * w.torque[0] / inertia;
    s.base_heading += dt * s.base_heading_rate;
  }

  fill_inv_weights(p, frozen, w);
  const double residual = project_positions(s, p, x_r, w);
  if (!(residual < kEndpointTol)) {
    throw NumericalDivergence(
        "endpoint projection failed to converge (residual " +
        std::to_string(residual) + " mm)");
  }
  project_rates(s, p, v_r - v_l, w);
  if (frozen != nullptr) {
    for (int j = 0; j < n - 1; ++j) {
      if ((*frozen)[j]) s.joint_rates[j] = 0.0;
    }
  }
  check_rates(s, p);
}

// Frictional substep: run an unfrozen candidate pass first, then freeze the
// joints whose candidate motion static friction can absorb (both adjacent
// midpoints below stiction_velocity and momentum gain within the breakaway
// budget mu * N * segment_length * dt), and integrate again with those
// joints held. This is what makes the contact history-dependent: held
// joints keep their angles until something drives them past the budget.
void substep(ChainState& s, const RodParams& p, const SurfaceModel& surface,
             const Vec2& x_l, const Vec2& x_r, const Vec2& v_l,
             const Vec2& v_r, Workspace& w) {
  if (!surface.friction_active()) {
    integrate_substep(s, p, surface, x_l, x_r, v_l, v_r, nullptr, w);
    return;
  }

  const int n = p.n_segments;
  ChainState candidate = s;
  integrate_substep(candidate, p, surface, x_l, x_r, v_l, v_r, nullptr, w);

  midpoint_velocities(candidate, p, v_l, w);
  w.frozen.assign(n - 1, 0);
  const double inertia = p.joint_inertia();
  const double breakaway_rate = surface.mu * surface.normal_load_per_segment *
                                p.segment_length() * p.physics_dt / inertia;
  bool any_frozen = false;
  for (int j = 0; j < n - 1; ++j) {
    const bool slow_mids =
        w.mid_velocity[j].norm() < surface.stiction_velocity &&
        w.mid_velocity[j + 1].norm() < surface.stiction_velocity;
    const bool within_budget =
        std::abs(candidate.joint_rates[j]) <= breakaway_rate;
    if (slow_mids && within_budget) {
      w.frozen[j] = 1;
      any_frozen = true;
    }
  }

  if (!any_frozen) {
    s = std::move(candidate);
    return;
  }
  std::vector<char> frozen = w.frozen;
  integrate_substep(s, p, surface, x_l, x_r, v_l, v_r, &frozen, w);
}

double solve_arc_half_angle(double ratio) {
  // sin(a)/a = ratio, a in (0, pi]. Monotone decreasing, bisection is plenty.
  double lo = 1e-9, hi = M_PI;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (std::sin(mid) / mid > ratio) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Clamped-end bump amplitude: headings phi_i = beta*sin(2*pi*(i-1)/(n-1))
// span a chord of l*sum(cos phi_i); bisect beta for the requested chord.
double solve_bump_amplitude(int n, double seg_len, double chord) {
  auto span = [&](double beta) {
    double x = 0.0;
    for (int i = 0; i < n; ++i) {
      x += std::cos(beta * std::sin(2.0 * M_PI * i / (n - 1.0)));
    }
    return seg_len * x;
  };
  double lo = 0.0, hi = 2.4;
  while (span(hi) > chord && hi < 40.0) hi *= 1.5;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (span(mid) > chord) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

void RodParams::validate() const {
  std::vector<std::string> bad;
  if (n_segments < 3) bad.push_back("n_segments must be >= 3");
  if (!(total_length > 0.0)) bad.push_back("total_length must be > 0");
  if (!(joint_stiffness > 0.0)) bad.push_back("joint_stiffness must be > 0");
  if (!(joint_damping > 0.0)) bad.push_back("joint_damping must be > 0");
  if (!(segment_mass > 0.0)) bad.push_back("segment_mass must be > 0");
  if (!(physics_dt > 0.0)) bad.push_back("physics_dt must be > 0");
  if (!(blowup_rate > 0.0)) bad.push_back("blowup_rate must be > 0");
  if (!bad.empty()) {
    std::string msg = "invalid RodParams:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw InvariantViolation(msg);
  }
}

void SurfaceModel::validate() const {
  if (mu < 0.0) throw InvariantViolation("surface mu must be >= 0");
  if (normal_load_per_segment < 0.0) {
    throw InvariantViolation("normal_load_per_segment must be >= 0");
  }
  if (!(stiction_velocity > 0.0)) {
    throw InvariantViolation("stiction_velocity must be > 0");
  }
}

std::vector<Vec2> chain_points(const ChainState& state,
                               const RodParams& params) {
  Workspace w;
  forward_points(state, params, w);
  return w.points;
}

Centerline chain_centerline(const ChainState& state, const RodParams& params) {
  return Centerline(chain_points(state, params));
}

ChainState init_chain(const RodParams& params, const GripperPair& grippers,
                      int buckle_sign, uint64_t rng_seed) {
  params.validate();
  if (buckle_sign != 1 && buckle_sign != -1) {
    throw InvariantViolation("buckle_sign must be +1 or -1");
  }

  const int n = params.n_segments;
  const double total = params.total_length;
  const double seg = params.segment_length();
  const Vec2 axis = grippers.x_r - grippers.x_l;
  const double d = axis.norm();

  if (d > total) {
    throw InfeasibleEndpoints("gripper separation " + std::to_string(d) +
                              " mm exceeds fiber length " +
                              std::to_string(total) + " mm");
  }
  if (!(d > 0.05 * total)) {
    throw InfeasibleEndpoints("gripper separation " + std::to_string(d) +
                              " mm is below the 0.05 * length floor");
  }

  ChainState s;
  s.joint_angles.assign(n - 1, 0.0);
  s.joint_rates.assign(n - 1, 0.0);
  s.base_position = grippers.x_l;
  s.base_heading = 0.0;
  s.base_heading_rate = 0.0;

  const double axis_angle = std::atan2(axis.y, axis.x);
  const double slack = 1.0 - d / total;
  Workspace w;

  if (slack <= kStraightSlackTol) {
    // No slack: the only feasible configuration is the straight chain.
    if (params.end_clamp && std::abs(axis_angle) > 1e-9) {
      throw InfeasibleEndpoints(
          "taut chain with welded ends requires an x-aligned gripper axis");
    }
    s.base_heading = params.end_clamp ? 0.0 : axis_angle;
    forward_points(s, params, w);
    return s;
  }

  double profile_amplitude = 0.0;
  if (params.end_clamp) {
    // Arch with zero end tangents, built on a horizontal axis and then
    // projected onto the actual endpoint target.
    const double beta = solve_bump_amplitude(n, seg, d);
    profile_amplitude = beta;
    const double sign = static_cast<double>(buckle_sign);
    double prev = 0.0;  // phi_1 = 0 structurally
    for (int i = 1; i < n; ++i) {
      const double phi = sign * beta * std::sin(2.0 * M_PI * i / (n - 1.0));
      s.joint_angles[i - 1] = phi - prev;
      prev = phi;
    }
  } else {
    // Circular arc: tangent sweeps linearly from +alpha to -alpha.
    const double alpha = solve_arc_half_angle(d / total);
    profile_amplitude = alpha;
    const double sign = static_cast<double>(buckle_sign);
    auto tangent = [&](int i) {
      return sign * alpha * (1.0 - (2.0 * i - 1.0) / n);
    };
    s.base_heading = axis_angle + tangent(1);
    for (int i = 1; i < n; ++i) {
      s.joint_angles[i - 1] = tangent(i + 1) - tangent(i);
    }
  }

  // Tie-break near-straight profiles so later buckling picks the asked side.
  if (profile_amplitude < kTieBreakAngle) {
    Rng rng(stream_seed(rng_seed, "init-tiebreak"));
    for (int i = 0; i < n - 1; ++i) {
      s.joint_angles[i] +=
          buckle_sign * kTieBreakAngle * (0.5 + 0.5 * rng.uniform());
    }
  }

  fill_inv_weights(params, nullptr, w);
  const double residual = project_positions(s, params, grippers.x_r, w);
  if (!(residual < kEndpointTol)) {
    throw InfeasibleEndpoints(
        "could not connect endpoints (projection residual " +
        std::to_string(residual) + " mm)");
  }
  return s;
}

ChainState step(const ChainState& state, const RodParams& params,
                const GripperPair& grippers, const SurfaceModel& surface,
                double dt) {
  params.validate();
  surface.validate();
  const double pdt = params.physics_dt;
  const long long substeps = std::llround(dt / pdt);
  if (substeps < 1 ||
      std::abs(substeps * pdt - dt) > 1e-9 * std::max(dt, pdt)) {
    throw InvariantViolation(
        "step dt must be an integer multiple of physics_dt");
  }

  Workspace w;
  ChainState s = state;
  forward_points(s, params, w);
  const Vec2 from_l = w.points.front();
  const Vec2 from_r = w.points.back();
  const Vec2 vel_l = (grippers.x_l - from_l) / dt;
  const Vec2 vel_r = (grippers.x_r - from_r) / dt;

  for (long long k = 1; k <= substeps; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(substeps);
    const Vec2 x_l = from_l + (grippers.x_l - from_l) * t;
    const Vec2 x_r = from_r + (grippers.x_r - from_r) * t;
    substep(s, params, surface, x_l, x_r, vel_l, vel_r, w);
  }
  return s;
}

SettleResult settle(const ChainState& state, const RodParams& params,
                    const SurfaceModel& surface, double ke_tol,
                    int max_steps) {
  params.validate();
  surface.validate();

  Workspace w;
  ChainState s = state;
  forward_points(s, params, w);
  const Vec2 x_l = w.points.front();
  const Vec2 x_r = w.points.back();
  const Vec2 zero{0.0, 0.0};

  SettleResult result;
  for (int i = 1; i <= max_steps; ++i) {
    substep(s, params, surface, x_l, x_r, zero, zero, w);
    result.steps = i;
    if (energies(s, params).kinetic < ke_tol) {
      result.converged = true;
      break;
    }
  }
  result.state = std::move(s);
  return result;
}

Energies energies(const ChainState& state, const RodParams& params) {
  Energies e;
  const double inertia = params.joint_inertia();
  for (double a : state.joint_angles) {
    e.elastic += 0.5 * params.joint_stiffness * a * a;
  }
  for (double r : state.joint_rates) {
    e.kinetic += 0.5 * inertia * r * r;
  }
  if (!params.end_clamp) {
    e.kinetic +=
        0.5 * inertia * state.base_heading_rate * state.base_heading_rate;
  }
  return e;
}

}  // namespace fiberloop
