#ifndef FIBERLOOP_DATASET_HPP_
#define FIBERLOOP_DATASET_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "fiberloop/geometry.hpp"
#include "fiberloop/rng.hpp"
#include "fiberloop/rod_dynamics.hpp"

namespace fiberloop {

// Sweep ranges for the two gripper positions. A candidate pair enters the
// dataset when its separation satisfies 0.5 l <= d <= 0.9 l.
struct SweepGrid {
  double lx_min = 0.0, lx_max = 0.0, lx_step = 1.0;
  double ly_min = 0.0, ly_max = 0.0, ly_step = 1.0;
  double rx_min = 0.0, rx_max = 0.0, rx_step = 1.0;
  double ry_min = 0.0, ry_max = 0.0, ry_step = 1.0;

  void validate() const;  // throws InvariantViolation
};

struct GenConfig {
  SweepGrid grid;
  double settle_ke_tol = 1e-10;
  int settle_max_steps = 20000;
  int state_points = 10;
  int n_threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

// One settled fiber configuration: endpoints, buckle branch, and the settled
// centerline resampled to state_points points.
struct ConfigRecord {
  int64_t id = 0;
  Vec2 x_l;
  Vec2 x_r;
  int buckle_sign = 1;
  double separation = 0.0;   // mm
  double bend_energy = 0.0;  // 1/mm^2, from the full-resolution chain
  Centerline settled_centerline;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(RodParams rod, GenConfig gen) : rod_(rod), gen_(gen) {}

  // Sweeps the grid, settles the frictionless chain for every admissible
  // gripper pair and both buckle signs, and stores one record per settle.
  // Deterministic given (grid, rod_params, seed) regardless of n_threads.
  static Dataset generate(const RodParams& rod, const GenConfig& gen,
                          uint64_t seed);

  // Two independent uniform draws; init and target may coincide.
  std::pair<const ConfigRecord*, const ConfigRecord*> sample_pair(
      Rng& rng) const;

  void save(const std::string& path) const;
  static Dataset load(const std::string& path);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const ConfigRecord& record(std::size_t i) const { return records_[i]; }
  const std::vector<ConfigRecord>& records() const { return records_; }
  const RodParams& rod_params() const { return rod_; }
  const GenConfig& gen_config() const { return gen_; }

  void append(ConfigRecord rec) { records_.push_back(std::move(rec)); }

  // Re-checks every record invariant (separation bounds, endpoint
  // consistency); throws InvariantViolation naming the offending record.
  void validate() const;

 private:
  RodParams rod_;
  GenConfig gen_;
  std::vector<ConfigRecord> records_;
};

}  // namespace fiberloop

#endif  // FIBERLOOP_DATASET_HPP_
