#ifndef FIBERLOOP_ROD_DYNAMICS_HPP_
#define FIBERLOOP_ROD_DYNAMICS_HPP_

#include <cstdint>
#include <vector>

#include "fiberloop/geometry.hpp"
#include "fiberloop/vec2.hpp"

namespace fiberloop {

// Endpoint pinning tolerance after every step, in mm.
inline constexpr double kEndpointTol = 1e-6;

struct RodParams {
  int n_segments = 20;
  double total_length = 15.0;    // mm
  double joint_stiffness = 0.08;  // torque per radian
  double joint_damping = 0.012;   // torque per radian/s
  double segment_mass = 1e-3;     // mass units
  double physics_dt = 0.001;      // s
  // Terminal segment orientations locked to the (fixed, +x-aligned) gripper
  // frames, i.e. weld rather than pin attachment.
  bool end_clamp = true;
  // Joint-rate magnitude beyond which the integrator reports divergence.
  double blowup_rate = 1e5;  // rad/s

  double segment_length() const {
    return total_length / static_cast<double>(n_segments);
  }
  // Diagonal rotational inertia used for every angular coordinate.
  double joint_inertia() const {
    const double l = segment_length();
    return segment_mass * l * l;
  }

  void validate() const;  // throws InvariantViolation
};

struct GripperPair {
  Vec2 x_l;  // mm
  Vec2 x_r;  // mm
  Vec2 v_l;  // mm/s
  Vec2 v_r;  // mm/s
};

struct SurfaceModel {
  enum class Mode { kFrictionless, kCoulomb };
  Mode mode = Mode::kFrictionless;
  double mu = 0.0;
  double normal_load_per_segment = 0.01;  // force units
  // Below this midpoint speed a segment is treated as stuck: the friction
  // impulse is capped at the amount that would bring it to rest.
  double stiction_velocity = 0.01;  // mm/s

  bool friction_active() const { return mode == Mode::kCoulomb && mu > 0.0; }
  void validate() const;
};

// Reduced-coordinate chain state. Segment lengths are exact by construction;
// only the right endpoint needs projection after integration.
struct ChainState {
  std::vector<double> joint_angles;  // n_segments - 1, radians
  std::vector<double> joint_rates;   // radians/s
  Vec2 base_position;                // q_1, pinned to the left gripper
  double base_heading = 0.0;         // orientation of segment 1 (0 if clamped)
  double base_heading_rate = 0.0;    // rad/s (0 if clamped)

  int n_segments() const { return static_cast<int>(joint_angles.size()) + 1; }
};

struct Energies {
  double elastic = 0.0;
  double kinetic = 0.0;
};

struct SettleResult {
  ChainState state;
  bool converged = false;
  int steps = 0;
};

// Derived segment endpoint positions q_1 .. q_{n+1}.
std::vector<Vec2> chain_points(const ChainState& state,
                               const RodParams& params);

Centerline chain_centerline(const ChainState& state, const RodParams& params);

// Builds a kinematically feasible chain connecting the grippers with the
// excess length buckled toward the side given by buckle_sign (+1 bulges to
// the left of the x_l -> x_r axis). Throws InfeasibleEndpoints when the
// separation exceeds total_length or is below the 0.05 * total_length floor.
ChainState init_chain(const RodParams& params, const GripperPair& grippers,
                      int buckle_sign, uint64_t rng_seed);

// Advances the chain by dt (an integer multiple of physics_dt). Gripper
// positions are interpolated linearly from the current chain endpoints to
// grippers.x_l / grippers.x_r over the substeps; both endpoints are re-pinned
// by constraint projection after every substep. Throws NumericalDivergence
// when a joint rate exceeds params.blowup_rate or the projection fails.
ChainState step(const ChainState& state, const RodParams& params,
                const GripperPair& grippers, const SurfaceModel& surface,
                double dt);

// Steps with static grippers until kinetic energy < ke_tol or max_steps is
// reached. Non-convergence is reported via the flag, never as an error.
SettleResult settle(const ChainState& state, const RodParams& params,
                    const SurfaceModel& surface, double ke_tol, int max_steps);

// elastic = sum 1/2 k theta_i^2; kinetic = sum 1/2 I rate^2 over all angular
// coordinates, with I = params.joint_inertia().
Energies energies(const ChainState& state, const RodParams& params);

}  // namespace fiberloop

#endif  // FIBERLOOP_ROD_DYNAMICS_HPP_
