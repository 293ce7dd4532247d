#ifndef FIBERLOOP_CONFIG_HPP_
#define FIBERLOOP_CONFIG_HPP_

#include <string>

#include "fiberloop/dataset.hpp"
#include "fiberloop/env.hpp"
#include "fiberloop/eval_harness.hpp"
#include "fiberloop/ppo.hpp"
#include "fiberloop/rod_dynamics.hpp"

namespace fiberloop {

// Everything a run needs, parsed from one sectioned key-value file. Physics
// critical values (joint stiffness and damping) have no silent defaults and
// must appear explicitly; all other keys carry documented defaults.
struct RunConfig {
  uint64_t seed = 0;
  std::string out_dir = "out";
  RodParams rod;
  EnvConfig env;
  PpoConfig ppo;
  GenConfig gen;
  DeployConfig deploy;
  int n_threads = 0;   // worker pool for envs / trials; 0 = hardware
  int log_every = 10;  // trainer progress cadence, 0 = silent
};

// Parses and fully validates. Throws ParseError (with line and key) on
// malformed input, ValidationError carrying every violation otherwise.
// Unknown keys are rejected with a nearest-known-key suggestion.
RunConfig parse_config(const std::string& path);

// The default config text shipped by `fiberloop config init`.
std::string default_config_text();

}  // namespace fiberloop

#endif  // FIBERLOOP_CONFIG_HPP_
