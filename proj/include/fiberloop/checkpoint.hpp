#ifndef FIBERLOOP_CHECKPOINT_HPP_
#define FIBERLOOP_CHECKPOINT_HPP_

#include <string>

#include "fiberloop/mlp.hpp"
#include "fiberloop/ppo.hpp"

namespace fiberloop {

// Policy weights plus the frozen observation-normalization statistics;
// everything a deployment needs to reproduce training-time inference.
struct PolicyCheckpoint {
  PolicyParams params;
  RunningNorm obs_norm;
  long long global_step = 0;
};

// Versioned binary header followed by flat 64-bit arrays; round-trips
// bit-exactly.
void save_checkpoint(const std::string& path, const PolicyCheckpoint& ckpt);
PolicyCheckpoint load_checkpoint(const std::string& path);

}  // namespace fiberloop

#endif  // FIBERLOOP_CHECKPOINT_HPP_
