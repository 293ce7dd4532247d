#include "fiberloop/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "fiberloop/errors.hpp"
#include "fiberloop/thread_pool.hpp"

namespace fiberloop {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

RodParams deploy_rod(const RodParams& base, const DeployConfig& deploy) {
  RodParams rod = base;
  rod.total_length = deploy.length;
  rod.joint_stiffness = base.joint_stiffness * deploy.stiffness_scale;
  return rod;
}

// Env configured so neither the hold logic nor the horizon can end the
// trial before max_duration.
EnvConfig deploy_env_cfg(const EnvConfig& base, const DeployConfig& deploy,
                         int n_steps, bool with_noise) {
  EnvConfig cfg = base;
  cfg.obs_noise_std = with_noise ? deploy.obs_noise_std : 0.0;
  cfg.horizon_steps = n_steps + 1;
  cfg.hold_steps = n_steps + 1;
  return cfg;
}

Action deterministic_action(const PolicyCheckpoint& ckpt,
                            const Eigen::VectorXd& raw_obs) {
  const Eigen::VectorXd normalized = ckpt.obs_norm.normalize(raw_obs);
  const PolicyEval eval = policy_forward(ckpt.params, normalized);
  Action a;
  for (int d = 0; d < 4; ++d) a.v[d] = eval.action_mean[d];
  return a.clipped();
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void finalize_trial(TrialResult& trial, const DeployConfig& deploy) {
  if (!trial.e_mean_series.empty()) {
    trial.final_e_mean = trial.e_mean_series.back();
    trial.final_e_max = trial.e_max_series.back();
  }
  const double rms =
      std::sqrt(0.5 * (trial.final_e_mean * trial.final_e_mean +
                       trial.final_e_max * trial.final_e_max));
  trial.converged = !trial.failed && rms < deploy.converged_tol_mm;
}

}  // namespace

void DeployConfig::validate(const EnvConfig& env) const {
  surface.validate();
  std::vector<std::string> bad;
  if (obs_noise_std < 0.0) bad.push_back("obs_noise_std must be >= 0");
  if (!(stiffness_scale > 0.0)) bad.push_back("stiffness_scale must be > 0");
  if (!(length > 0.0)) bad.push_back("length must be > 0");
  if (!(control_rate > 0.0)) bad.push_back("control_rate must be > 0");
  if (std::abs(1.0 / control_rate - env.control_dt) > 1e-9) {
    bad.push_back("control_rate must match the training control_dt");
  }
  if (!(max_duration > 0.0)) bad.push_back("max_duration must be > 0");
  if (!(converged_tol_mm > 0.0)) bad.push_back("converged_tol_mm must be > 0");
  if (!bad.empty()) {
    std::string msg = "invalid DeployConfig:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw InvariantViolation(msg);
  }
}

TrialResult run_closed_loop(const PolicyCheckpoint& ckpt,
                            const EnvConfig& env_cfg, const RodParams& rod,
                            const DeployConfig& deploy,
                            const ConfigRecord& init,
                            const ConfigRecord& target, uint64_t seed) {
  deploy.validate(env_cfg);
  const int n_steps =
      static_cast<int>(std::llround(deploy.max_duration / env_cfg.control_dt));
  const RodParams drod = deploy_rod(rod, deploy);
  const EnvConfig dcfg = deploy_env_cfg(env_cfg, deploy, n_steps, true);

  TrialResult trial;
  trial.deploy = deploy;
  trial.init_id = init.id;
  trial.target_id = target.id;
  trial.init_shape = init.settled_centerline;
  trial.target_shape = target.settled_centerline;
  trial.target_e_bend = target.bend_energy;

  try {
    FiberEnv env(dcfg, drod, deploy.surface);
    Eigen::VectorXd obs = env.reset(init, target, seed);
    for (int t = 1; t <= n_steps; ++t) {
      const Action a = deterministic_action(ckpt, obs);
      auto result = env.step(a);
      obs = result.obs;
      trial.time_s.push_back(t * dcfg.control_dt);
      trial.e_mean_series.push_back(result.info.e_mean);
      trial.e_max_series.push_back(result.info.e_max);
    }
    trial.final_shape = env.current_centerline();
  } catch (const Error& e) {
    trial.failed = true;
    trial.failure = e.what();
  }
  finalize_trial(trial, deploy);
  return trial;
}

TrialResult run_open_loop(const PolicyCheckpoint& ckpt,
                          const EnvConfig& env_cfg, const RodParams& rod,
                          const DeployConfig& deploy, const ConfigRecord& init,
                          const ConfigRecord& target, uint64_t seed) {
  deploy.validate(env_cfg);
  const int n_steps =
      static_cast<int>(std::llround(deploy.max_duration / env_cfg.control_dt));
  const RodParams drod = deploy_rod(rod, deploy);

  TrialResult trial;
  trial.deploy = deploy;
  trial.init_id = init.id;
  trial.target_id = target.id;
  trial.init_shape = init.settled_centerline;
  trial.target_shape = target.settled_centerline;
  trial.target_e_bend = target.bend_energy;

  try {
    // Plan in the clean frictionless simulator with noise-free observations.
    EnvConfig plan_cfg = deploy_env_cfg(env_cfg, deploy, n_steps, false);
    SurfaceModel frictionless;
    FiberEnv plan_env(plan_cfg, drod, frictionless);
    Eigen::VectorXd obs = plan_env.reset(init, target, seed);
    std::vector<GripperPair> plan;
    plan.reserve(n_steps);
    for (int t = 1; t <= n_steps; ++t) {
      const Action a = deterministic_action(ckpt, obs);
      auto result = plan_env.step(a);
      obs = result.obs;
      plan.push_back(plan_env.grippers());
    }

    // Replay the recorded gripper trajectory verbatim under the perturbed
    // surface, with no feedback.
    GripperPair grip;
    grip.x_l = init.x_l;
    grip.x_r = init.x_r;
    ChainState chain = init_chain(drod, grip, init.buckle_sign, seed);
    chain = settle(chain, drod, frictionless, plan_cfg.settle_ke_tol,
                   plan_cfg.settle_max_steps)
                .state;
    for (int t = 0; t < n_steps; ++t) {
      chain = step(chain, drod, plan[t], deploy.surface, plan_cfg.control_dt);
      const Centerline current =
          resample(chain_centerline(chain, drod), plan_cfg.state_points);
      const ShapeError err = shape_error(current, target.settled_centerline);
      trial.time_s.push_back((t + 1) * plan_cfg.control_dt);
      trial.e_mean_series.push_back(err.e_mean);
      trial.e_max_series.push_back(err.e_max);
    }
    trial.final_shape =
        resample(chain_centerline(chain, drod), plan_cfg.state_points);
  } catch (const Error& e) {
    trial.failed = true;
    trial.failure = e.what();
  }
  finalize_trial(trial, deploy);
  return trial;
}

RepeatabilityReport repeatability_experiment(const PolicyCheckpoint& ckpt,
                                             const EnvConfig& env_cfg,
                                             const RodParams& rod,
                                             const DeployConfig& deploy,
                                             const Dataset& dataset,
                                             uint64_t seed, int n_threads) {
  if (dataset.size() < 9) {
    throw InvariantViolation(
        "repeatability experiment needs at least 9 dataset records");
  }
  Rng rng(stream_seed(seed, "repeatability"));

  // 3 distinct targets, then 8 distinct inits (also distinct from the
  // target) for each.
  std::vector<std::size_t> target_ids;
  while (target_ids.size() < 3) {
    const std::size_t cand = rng.uniform_index(dataset.size());
    if (std::find(target_ids.begin(), target_ids.end(), cand) ==
        target_ids.end()) {
      target_ids.push_back(cand);
    }
  }
  struct Pair {
    std::size_t init, target;
  };
  std::vector<Pair> pairs;
  for (std::size_t target : target_ids) {
    std::vector<std::size_t> inits;
    while (inits.size() < 8) {
      const std::size_t cand = rng.uniform_index(dataset.size());
      if (cand != target &&
          std::find(inits.begin(), inits.end(), cand) == inits.end()) {
        inits.push_back(cand);
      }
    }
    for (std::size_t i : inits) pairs.push_back({i, target});
  }

  RepeatabilityReport report;
  report.trials.resize(pairs.size());
  ThreadPool pool(n_threads > 0
                      ? n_threads
                      : static_cast<int>(std::thread::hardware_concurrency()));
  pool.parallel_for(static_cast<int>(pairs.size()), [&](int i) {
    report.trials[i] = run_closed_loop(
        ckpt, env_cfg, rod, deploy, dataset.record(pairs[i].init),
        dataset.record(pairs[i].target), stream_seed(seed, "trial", i));
  });

  double sum_m = 0.0, sum_x = 0.0;
  for (const auto& t : report.trials) {
    sum_m += t.final_e_mean;
    sum_x += t.final_e_max;
  }
  const double n = static_cast<double>(report.trials.size());
  report.mean_final_e_mean = sum_m / n;
  report.mean_final_e_max = sum_x / n;
  double var_m = 0.0, var_x = 0.0;
  for (const auto& t : report.trials) {
    var_m += std::pow(t.final_e_mean - report.mean_final_e_mean, 2);
    var_x += std::pow(t.final_e_max - report.mean_final_e_max, 2);
  }
  report.std_final_e_mean = std::sqrt(var_m / n);
  report.std_final_e_max = std::sqrt(var_x / n);
  return report;
}

int GeneralizationReport::total_trials() const {
  int n = 0;
  for (const auto& c : conditions) n += static_cast<int>(c.trials.size());
  return n;
}

GeneralizationReport generalization_experiment(const PolicyCheckpoint& ckpt,
                                               const EnvConfig& env_cfg,
                                               const RodParams& rod,
                                               const DeployConfig& deploy,
                                               uint64_t seed, int n_threads) {
  // Diameter proxies from EI ~ d^4 around the 80 um training fiber.
  const double scales[3] = {std::pow(50.0 / 80.0, 4), 1.0,
                            std::pow(120.0 / 80.0, 4)};
  const double lengths[3] = {10.0, 15.0, 20.0};

  GeneralizationReport report;
  struct Job {
    int condition;
    ConfigRecord init, target;
    uint64_t seed;
  };
  std::vector<Job> jobs;

  SurfaceModel frictionless;
  int cond_index = 0;
  for (double scale : scales) {
    for (double length : lengths) {
      DeployConfig cond_deploy = deploy;
      cond_deploy.stiffness_scale = scale;
      cond_deploy.length = length;
      const RodParams crod = deploy_rod(rod, cond_deploy);

      // Five settled shapes per condition, sampled around a fixed left
      // gripper with moderate axis tilt.
      Rng rng(stream_seed(seed, "gen-shapes", cond_index));
      std::vector<ConfigRecord> shapes;
      while (shapes.size() < 5) {
        const double sep = rng.uniform(0.55, 0.85) * length;
        const double angle = rng.uniform(-0.45, 0.45);
        const int sign = rng.uniform() < 0.5 ? 1 : -1;
        GripperPair grip;
        grip.x_l = Vec2{0.0, 0.0};
        grip.x_r = Vec2{sep * std::cos(angle), sep * std::sin(angle)};
        try {
          ChainState chain = init_chain(crod, grip, sign,
                                        stream_seed(seed, "gen-init",
                                                    shapes.size()));
          SettleResult settled =
              settle(chain, crod, frictionless, env_cfg.settle_ke_tol,
                     env_cfg.settle_max_steps);
          const Centerline full = chain_centerline(settled.state, crod);
          ConfigRecord rec;
          rec.id = cond_index * 5 + static_cast<int64_t>(shapes.size());
          rec.x_l = grip.x_l;
          rec.x_r = grip.x_r;
          rec.buckle_sign = sign;
          rec.separation = sep;
          rec.bend_energy = bending_energy(full);
          rec.settled_centerline = resample(full, env_cfg.state_points);
          shapes.push_back(std::move(rec));
        } catch (const InfeasibleEndpoints&) {
          // Resample; clamped ends can reject extreme tilts.
        }
      }

      GeneralizationCondition cond;
      cond.stiffness_scale = scale;
      cond.length = length;
      report.conditions.push_back(std::move(cond));

      // Each shape once as the target, the remaining four as inits.
      int k = 0;
      for (int target = 0; target < 5; ++target) {
        for (int init = 0; init < 5; ++init) {
          if (init == target) continue;
          jobs.push_back({cond_index, shapes[init], shapes[target],
                          stream_seed(seed, "gen-trial",
                                      cond_index * 100 + k)});
          ++k;
        }
      }
      ++cond_index;
    }
  }

  std::vector<TrialResult> trials(jobs.size());
  ThreadPool pool(n_threads > 0
                      ? n_threads
                      : static_cast<int>(std::thread::hardware_concurrency()));
  pool.parallel_for(static_cast<int>(jobs.size()), [&](int i) {
    DeployConfig cond_deploy = deploy;
    cond_deploy.stiffness_scale =
        report.conditions[jobs[i].condition].stiffness_scale;
    cond_deploy.length = report.conditions[jobs[i].condition].length;
    trials[i] = run_closed_loop(ckpt, env_cfg, rod, cond_deploy, jobs[i].init,
                                jobs[i].target, jobs[i].seed);
  });

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    report.conditions[jobs[i].condition].trials.push_back(trials[i]);
  }
  for (auto& cond : report.conditions) {
    std::vector<double> emax, emean;
    double sum = 0.0;
    for (const auto& t : cond.trials) {
      emax.push_back(t.final_e_max);
      emean.push_back(t.final_e_mean);
      sum += t.final_e_max;
    }
    cond.median_final_e_max = median_of(emax);
    cond.median_final_e_mean = median_of(emean);
    cond.mean_final_e_max = cond.trials.empty() ? 0.0 : sum / cond.trials.size();
  }
  return report;
}

double spearman_rho(const std::vector<double>& x,
                    const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw LengthMismatch("spearman needs equal-length vectors");
  }
  const std::size_t n = x.size();
  if (n < 2) throw InvariantViolation("spearman needs at least 2 points");

  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) +
                                static_cast<double>(j)) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };

  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw InvariantViolation("spearman undefined for constant ranks");
  }
  return sxy / std::sqrt(sxx * syy);
}

BendingAnalysis bending_energy_analysis(const std::vector<TrialResult>& trials,
                                        const Dataset& dataset) {
  BendingAnalysis out;
  std::vector<double> eb, em;
  for (const auto& t : trials) {
    if (t.failed) continue;
    out.pairs.push_back({t.target_e_bend, t.final_e_mean});
    eb.push_back(t.target_e_bend);
    em.push_back(t.final_e_mean);
    out.eval_e_bend.push_back(t.target_e_bend);
  }
  for (const auto& r : dataset.records()) {
    out.dataset_e_bend.push_back(r.bend_energy);
  }
  if (eb.size() >= 2) {
    try {
      out.spearman = spearman_rho(eb, em);
    } catch (const InvariantViolation&) {
      out.spearman.reset();  // all-equal ranks: reported as not applicable
    }
  }
  return out;
}

namespace {

struct Box {
  double min_x = 0, max_x = 1, min_y = 0, max_y = 1;
  void include(const Centerline& c) {
    for (const Vec2& p : c.points) {
      min_x = std::min(min_x, p.x);
      max_x = std::max(max_x, p.x);
      min_y = std::min(min_y, p.y);
      max_y = std::max(max_y, p.y);
    }
  }
};

std::string svg_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

void svg_polyline(std::string& out, const Centerline& line, const Box& box,
                  double ox, double oy, double w, double h,
                  const char* color) {
  const double sx = w / (box.max_x - box.min_x + 1e-9);
  const double sy = h / (box.max_y - box.min_y + 1e-9);
  const double s = std::min(sx, sy);
  out += "<polyline class=\"shape\" fill=\"none\" stroke=\"";
  out += color;
  out += "\" stroke-width=\"1.2\" points=\"";
  for (const Vec2& p : line.points) {
    out += svg_number(ox + (p.x - box.min_x) * s);
    out += ",";
    out += svg_number(oy + h - (p.y - box.min_y) * s);
    out += " ";
  }
  out += "\"/>\n";
}

void svg_series(std::string& out, const std::vector<double>& t,
                const std::vector<double>& v, double ox, double oy, double w,
                double h, double v_max, double t_max, const char* color) {
  if (t.empty()) return;
  out += "<polyline class=\"series\" fill=\"none\" stroke=\"";
  out += color;
  out += "\" stroke-width=\"1.0\" points=\"";
  for (std::size_t i = 0; i < t.size(); ++i) {
    out += svg_number(ox + w * t[i] / t_max);
    out += ",";
    out += svg_number(oy + h - h * std::min(v[i], v_max) / v_max);
    out += " ";
  }
  out += "\"/>\n";
}

void render_panel(std::string& out, const TrialResult& trial, double ox,
                  double oy) {
  constexpr double kShapeW = 200, kShapeH = 150, kPlotW = 200, kPlotH = 150;
  Box box;
  box.min_x = 1e300;
  box.max_x = -1e300;
  box.min_y = 1e300;
  box.max_y = -1e300;
  box.include(trial.init_shape);
  box.include(trial.target_shape);
  if (!trial.final_shape.points.empty()) box.include(trial.final_shape);

  out += "<g>\n";
  out += "<rect x=\"" + svg_number(ox) + "\" y=\"" + svg_number(oy) +
         "\" width=\"" + svg_number(kShapeW) + "\" height=\"" +
         svg_number(kShapeH) + "\" fill=\"none\" stroke=\"#999\"/>\n";
  if (!trial.init_shape.points.empty() &&
      !trial.target_shape.points.empty()) {
    svg_polyline(out, trial.init_shape, box, ox + 8, oy + 8, kShapeW - 16,
                 kShapeH - 16, "#888888");
    svg_polyline(out, trial.target_shape, box, ox + 8, oy + 8, kShapeW - 16,
                 kShapeH - 16, "#e08020");
    const Centerline& final_or_init = trial.final_shape.points.empty()
                                          ? trial.init_shape
                                          : trial.final_shape;
    svg_polyline(out, final_or_init, box, ox + 8, oy + 8, kShapeW - 16,
                 kShapeH - 16, "#208080");
  }

  // Error curves.
  const double t_max =
      trial.time_s.empty() ? 1.0 : trial.time_s.back();
  double v_max = 1e-6;
  for (double v : trial.e_max_series) v_max = std::max(v_max, v);
  out += "<rect x=\"" + svg_number(ox + kShapeW + 20) + "\" y=\"" +
         svg_number(oy) + "\" width=\"" + svg_number(kPlotW) +
         "\" height=\"" + svg_number(kPlotH) +
         "\" fill=\"none\" stroke=\"#999\"/>\n";
  svg_series(out, trial.time_s, trial.e_mean_series, ox + kShapeW + 20, oy,
             kPlotW, kPlotH, v_max, t_max, "#2050c0");
  svg_series(out, trial.time_s, trial.e_max_series, ox + kShapeW + 20, oy,
             kPlotW, kPlotH, v_max, t_max, "#c02020");
  out += "<text x=\"" + svg_number(ox) + "\" y=\"" + svg_number(oy - 6) +
         "\" font-size=\"10\">init " + std::to_string(trial.init_id) +
         " target " + std::to_string(trial.target_id) + " e_mean " +
         svg_number(trial.final_e_mean) + " mm</text>\n";
  out += "</g>\n";
}

}  // namespace

std::string render_trial_svg(const TrialResult& trial) {
  std::string out;
  out +=
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"460\" "
      "height=\"200\" viewBox=\"0 0 460 200\">\n";
  render_panel(out, trial, 10, 20);
  out += "</svg>\n";
  return out;
}

std::string render_trials_svg(const std::vector<TrialResult>& trials) {
  const int rows = static_cast<int>(trials.size());
  const int height = std::max(200, 20 + rows * 190);
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"460\" height=\"" +
         std::to_string(height) + "\" viewBox=\"0 0 460 " +
         std::to_string(height) + "\">\n";
  if (trials.empty()) {
    // Valid file with axes and no curves.
    out += "<rect x=\"10\" y=\"20\" width=\"200\" height=\"150\" "
           "fill=\"none\" stroke=\"#999\"/>\n";
    out += "<rect x=\"230\" y=\"20\" width=\"200\" height=\"150\" "
           "fill=\"none\" stroke=\"#999\"/>\n";
  }
  for (std::size_t i = 0; i < trials.size(); ++i) {
    render_panel(out, trials[i], 10, 20 + 190.0 * static_cast<double>(i));
  }
  out += "</svg>\n";
  return out;
}

std::string trials_csv(const std::vector<TrialResult>& trials) {
  std::ostringstream out;
  out << "trial,init_id,target_id,length_mm,stiffness_scale,mu,obs_noise_std,"
         "final_e_mean,final_e_max,target_e_bend,converged,failed\n";
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const TrialResult& t = trials[i];
    out << i << "," << t.init_id << "," << t.target_id << ","
        << fmt(t.deploy.length) << "," << fmt(t.deploy.stiffness_scale) << ","
        << fmt(t.deploy.surface.mu) << "," << fmt(t.deploy.obs_noise_std)
        << "," << fmt(t.final_e_mean) << "," << fmt(t.final_e_max) << ","
        << fmt(t.target_e_bend) << "," << (t.converged ? 1 : 0) << ","
        << (t.failed ? 1 : 0) << "\n";
  }
  return out.str();
}

std::string trial_series_csv(const TrialResult& trial) {
  std::ostringstream out;
  out << "t_s,e_mean_mm,e_max_mm\n";
  for (std::size_t i = 0; i < trial.time_s.size(); ++i) {
    out << fmt(trial.time_s[i]) << "," << fmt(trial.e_mean_series[i]) << ","
        << fmt(trial.e_max_series[i]) << "\n";
  }
  return out.str();
}

}  // namespace fiberloop
