#include "fiberloop/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "fiberloop/errors.hpp"

namespace fiberloop {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int levenshtein(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct Parser {
  std::vector<std::string> issues;

  bool parse_double(const std::string& v, double& out) {
    errno = 0;
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0' || errno == ERANGE) return false;
    out = d;
    return true;
  }

  bool parse_int(const std::string& v, long long& out) {
    errno = 0;
    char* end = nullptr;
    const long long i = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0' || errno == ERANGE) return false;
    out = i;
    return true;
  }

  bool parse_bool(const std::string& v, bool& out) {
    if (v == "true" || v == "1") {
      out = true;
      return true;
    }
    if (v == "false" || v == "0") {
      out = false;
      return true;
    }
    return false;
  }
};

}  // namespace

std::string default_config_text() {
  return R"(# fiberloop run configuration
seed = 0
out_dir = out
n_threads = 0
log_every = 10

[rod]
n_segments = 20
total_length = 15.0
# Physics-critical values: no silent defaults, keep them explicit.
joint_stiffness = 0.08
joint_damping = 0.012
segment_mass = 0.001
physics_dt = 0.001
end_clamp = true
blowup_rate = 1e5

[env]
control_dt = 0.025
horizon_steps = 320
hold_steps = 80
v_max = 2.0
rho = 0.9
w_er = 1.0
w_te = 10.0
w_sm = 0.1
bonus_base = 10.0
state_points = 10
settle_ke_tol = 1e-10
settle_max_steps = 20000

[ppo]
gamma = 0.99
gae_lambda = 0.95
clip = 0.2
batch = 1024
epochs_per_rollout = 10
entropy_coef = 0.01
n_envs = 30
total_steps = 20000000
lr_init = 6e-4
lr_final = 2e-4
rollout_length = 512
value_coef = 0.5
max_grad_norm = 0.5
norm_clip = 10.0
checkpoint_every = 50

[dataset]
# Sweep of the two gripper positions; pairs outside 0.5 l <= d <= 0.9 l are
# filtered out. The default yields about six thousand records at 15 mm.
lx_min = -1.5
lx_max = 0.0
lx_step = 0.75
ly_min = -0.75
ly_max = 0.75
ly_step = 0.75
rx_min = 7.0
rx_max = 13.0
rx_step = 0.5
ry_min = -3.0
ry_max = 3.0
ry_step = 0.75

[deploy]
surface_mode = coulomb
mu = 0.3
normal_load_per_segment = 0.01
stiction_velocity = 0.01
obs_noise_std = 0.05
stiffness_scale = 1.0
length = 15.0
control_rate = 40.0
max_duration = 8.0
converged_tol_mm = 0.3
)";
}

RunConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);

  RunConfig cfg;
  Parser p;
  bool saw_stiffness = false;
  bool saw_damping = false;

  // Registry of known keys: "section.key" -> setter returning success.
  using Setter = std::function<bool(const std::string&)>;
  std::map<std::string, Setter> keys;

  auto dkey = [&](const std::string& name, double* slot) {
    keys[name] = [&p, slot](const std::string& v) {
      return p.parse_double(v, *slot);
    };
  };
  auto ikey = [&](const std::string& name, int* slot) {
    keys[name] = [&p, slot](const std::string& v) {
      long long tmp;
      if (!p.parse_int(v, tmp)) return false;
      *slot = static_cast<int>(tmp);
      return true;
    };
  };
  auto llkey = [&](const std::string& name, long long* slot) {
    keys[name] = [&p, slot](const std::string& v) {
      return p.parse_int(v, *slot);
    };
  };
  auto bkey = [&](const std::string& name, bool* slot) {
    keys[name] = [&p, slot](const std::string& v) {
      return p.parse_bool(v, *slot);
    };
  };

  keys[".seed"] = [&](const std::string& v) {
    long long tmp;
    if (!p.parse_int(v, tmp) || tmp < 0) return false;
    cfg.seed = static_cast<uint64_t>(tmp);
    return true;
  };
  keys[".out_dir"] = [&](const std::string& v) {
    cfg.out_dir = v;
    return !v.empty();
  };
  ikey(".n_threads", &cfg.n_threads);
  ikey(".log_every", &cfg.log_every);

  ikey("rod.n_segments", &cfg.rod.n_segments);
  dkey("rod.total_length", &cfg.rod.total_length);
  keys["rod.joint_stiffness"] = [&](const std::string& v) {
    saw_stiffness = true;
    return p.parse_double(v, cfg.rod.joint_stiffness);
  };
  keys["rod.joint_damping"] = [&](const std::string& v) {
    saw_damping = true;
    return p.parse_double(v, cfg.rod.joint_damping);
  };
  dkey("rod.segment_mass", &cfg.rod.segment_mass);
  dkey("rod.physics_dt", &cfg.rod.physics_dt);
  bkey("rod.end_clamp", &cfg.rod.end_clamp);
  dkey("rod.blowup_rate", &cfg.rod.blowup_rate);

  dkey("env.control_dt", &cfg.env.control_dt);
  ikey("env.horizon_steps", &cfg.env.horizon_steps);
  ikey("env.hold_steps", &cfg.env.hold_steps);
  dkey("env.v_max", &cfg.env.v_max);
  dkey("env.rho", &cfg.env.rho);
  dkey("env.w_er", &cfg.env.w_er);
  dkey("env.w_te", &cfg.env.w_te);
  dkey("env.w_sm", &cfg.env.w_sm);
  dkey("env.bonus_base", &cfg.env.bonus_base);
  ikey("env.state_points", &cfg.env.state_points);
  dkey("env.settle_ke_tol", &cfg.env.settle_ke_tol);
  ikey("env.settle_max_steps", &cfg.env.settle_max_steps);

  dkey("ppo.gamma", &cfg.ppo.gamma);
  dkey("ppo.gae_lambda", &cfg.ppo.gae_lambda);
  dkey("ppo.clip", &cfg.ppo.clip);
  ikey("ppo.batch", &cfg.ppo.batch);
  ikey("ppo.epochs_per_rollout", &cfg.ppo.epochs_per_rollout);
  dkey("ppo.entropy_coef", &cfg.ppo.entropy_coef);
  ikey("ppo.n_envs", &cfg.ppo.n_envs);
  llkey("ppo.total_steps", &cfg.ppo.total_steps);
  dkey("ppo.lr_init", &cfg.ppo.lr_init);
  dkey("ppo.lr_final", &cfg.ppo.lr_final);
  ikey("ppo.rollout_length", &cfg.ppo.rollout_length);
  dkey("ppo.value_coef", &cfg.ppo.value_coef);
  dkey("ppo.max_grad_norm", &cfg.ppo.max_grad_norm);
  dkey("ppo.norm_clip", &cfg.ppo.norm_clip);
  ikey("ppo.checkpoint_every", &cfg.ppo.checkpoint_every);

  dkey("dataset.lx_min", &cfg.gen.grid.lx_min);
  dkey("dataset.lx_max", &cfg.gen.grid.lx_max);
  dkey("dataset.lx_step", &cfg.gen.grid.lx_step);
  dkey("dataset.ly_min", &cfg.gen.grid.ly_min);
  dkey("dataset.ly_max", &cfg.gen.grid.ly_max);
  dkey("dataset.ly_step", &cfg.gen.grid.ly_step);
  dkey("dataset.rx_min", &cfg.gen.grid.rx_min);
  dkey("dataset.rx_max", &cfg.gen.grid.rx_max);
  dkey("dataset.rx_step", &cfg.gen.grid.rx_step);
  dkey("dataset.ry_min", &cfg.gen.grid.ry_min);
  dkey("dataset.ry_max", &cfg.gen.grid.ry_max);
  dkey("dataset.ry_step", &cfg.gen.grid.ry_step);

  keys["deploy.surface_mode"] = [&](const std::string& v) {
    if (v == "frictionless") {
      cfg.deploy.surface.mode = SurfaceModel::Mode::kFrictionless;
      return true;
    }
    if (v == "coulomb") {
      cfg.deploy.surface.mode = SurfaceModel::Mode::kCoulomb;
      return true;
    }
    return false;
  };
  dkey("deploy.mu", &cfg.deploy.surface.mu);
  dkey("deploy.normal_load_per_segment",
       &cfg.deploy.surface.normal_load_per_segment);
  dkey("deploy.stiction_velocity", &cfg.deploy.surface.stiction_velocity);
  dkey("deploy.obs_noise_std", &cfg.deploy.obs_noise_std);
  dkey("deploy.stiffness_scale", &cfg.deploy.stiffness_scale);
  dkey("deploy.length", &cfg.deploy.length);
  dkey("deploy.control_rate", &cfg.deploy.control_rate);
  dkey("deploy.max_duration", &cfg.deploy.max_duration);
  dkey("deploy.converged_tol_mm", &cfg.deploy.converged_tol_mm);

  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ParseError("line " + std::to_string(line_no) +
                         ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty key");
    }
    const std::string full = section + "." + key;

    const auto it = keys.find(full);
    if (it == keys.end()) {
      // Suggest the nearest known key.
      std::string best;
      int best_d = 1 << 20;
      for (const auto& [known, setter] : keys) {
        const int d = levenshtein(full, known);
        if (d < best_d) {
          best_d = d;
          best = known;
        }
      }
      std::string shown = full.front() == '.' ? full.substr(1) : full;
      std::string hint = best.front() == '.' ? best.substr(1) : best;
      p.issues.push_back("line " + std::to_string(line_no) +
                         ": unknown key '" + shown + "' (did you mean '" +
                         hint + "'?)");
      continue;
    }
    if (!it->second(value)) {
      p.issues.push_back("line " + std::to_string(line_no) +
                         ": invalid value '" + value + "' for key '" +
                         (full.front() == '.' ? full.substr(1) : full) + "'");
    }
  }

  if (!saw_stiffness) {
    p.issues.push_back(
        "rod.joint_stiffness is required (physics-critical, no default)");
  }
  if (!saw_damping) {
    p.issues.push_back(
        "rod.joint_damping is required (physics-critical, no default)");
  }

  // Semantic validation; collect every violation instead of stopping at the
  // first.
  auto collect = [&](const char* what, const std::function<void()>& run) {
    try {
      run();
    } catch (const InvariantViolation& e) {
      p.issues.push_back(std::string(what) + ": " + e.what());
    }
  };
  collect("rod", [&] { cfg.rod.validate(); });
  collect("env", [&] { cfg.env.validate(); });
  collect("ppo", [&] { cfg.ppo.validate(); });
  collect("dataset", [&] { cfg.gen.validate(); });
  collect("deploy", [&] { cfg.deploy.validate(cfg.env); });

  // Cross-section coupling: resets re-settle dataset records, so the env and
  // generation settle parameters and point counts must agree.
  cfg.gen.state_points = cfg.env.state_points;
  cfg.gen.settle_ke_tol = cfg.env.settle_ke_tol;
  cfg.gen.settle_max_steps = cfg.env.settle_max_steps;
  cfg.gen.n_threads = cfg.n_threads;
  if (cfg.rod.physics_dt > 0.0 && cfg.env.control_dt > 0.0) {
    const double ratio = cfg.env.control_dt / cfg.rod.physics_dt;
    if (std::abs(ratio - std::llround(ratio)) > 1e-9) {
      p.issues.push_back(
          "env.control_dt must be an integer multiple of rod.physics_dt");
    }
  }

  if (!p.issues.empty()) {
    std::string summary = "config validation failed with " +
                          std::to_string(p.issues.size()) + " issue(s)";
    throw ValidationError(summary, p.issues);
  }
  return cfg;
}

}  // namespace fiberloop
