#include "fiberloop/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "fiberloop/config.hpp"
#include "fiberloop/errors.hpp"
#include "fiberloop/thread_pool.hpp"
#include "fiberloop/trainer.hpp"

namespace fiberloop {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << content;
  if (!f.good()) throw IoError("write failure on " + path);
}

void check_rod_matches(const RodParams& config_rod, const RodParams& ds_rod) {
  const bool same = config_rod.n_segments == ds_rod.n_segments &&
                    config_rod.total_length == ds_rod.total_length &&
                    config_rod.joint_stiffness == ds_rod.joint_stiffness &&
                    config_rod.joint_damping == ds_rod.joint_damping &&
                    config_rod.segment_mass == ds_rod.segment_mass &&
                    config_rod.physics_dt == ds_rod.physics_dt &&
                    config_rod.end_clamp == ds_rod.end_clamp;
  if (!same) {
    throw InvariantViolation(
        "config [rod] section disagrees with the dataset header; regenerate "
        "the dataset or fix the config");
  }
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_dataset_gen(const std::string& config_path, const std::string& out,
                    std::optional<uint64_t> seed) {
  RunConfig cfg = parse_config(config_path);
  if (seed) cfg.seed = *seed;
  Dataset ds = Dataset::generate(cfg.rod, cfg.gen, cfg.seed);
  ds.save(out);
  std::printf("dataset: %zu records -> %s\n", ds.size(), out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& dataset_path,
              const std::string& out_dir, std::optional<uint64_t> seed,
              const std::string& resume) {
  RunConfig cfg = parse_config(config_path);
  if (seed) cfg.seed = *seed;
  Dataset ds = Dataset::load(dataset_path);
  check_rod_matches(cfg.rod, ds.rod_params());

  TrainConfig tc;
  tc.env = cfg.env;
  tc.rod = cfg.rod;
  tc.surface = SurfaceModel{};  // training is always frictionless
  tc.ppo = cfg.ppo;
  tc.seed = cfg.seed;
  tc.out_dir = out_dir.empty() ? cfg.out_dir : out_dir;
  tc.n_threads = cfg.n_threads;
  tc.resume_from = resume;
  tc.log_every = cfg.log_every;

  TrainStats stats = train(tc, ds);
  std::printf(
      "training done: %lld steps, %lld episodes, level %d, checkpoint %s\n",
      stats.global_steps, stats.episodes, stats.final_level,
      stats.checkpoint_path.c_str());
  return 0;
}

void write_eval_outputs(const std::string& out_dir,
                        const std::vector<TrialResult>& trials) {
  std::filesystem::create_directories(out_dir);
  write_file(out_dir + "/trials.csv", trials_csv(trials));

  std::vector<double> emean, emax;
  int converged = 0, failed = 0;
  for (const auto& t : trials) {
    emean.push_back(t.final_e_mean);
    emax.push_back(t.final_e_max);
    converged += t.converged ? 1 : 0;
    failed += t.failed ? 1 : 0;
  }
  std::ostringstream summary;
  summary << "n_trials,median_final_e_mean,mean_final_e_mean,"
             "median_final_e_max,converged,failed\n";
  double mean_emean = 0.0;
  for (double v : emean) mean_emean += v;
  if (!emean.empty()) mean_emean /= emean.size();
  summary << trials.size() << "," << fmt(median_of(emean)) << ","
          << fmt(mean_emean) << "," << fmt(median_of(emax)) << "," << converged
          << "," << failed << "\n";
  write_file(out_dir + "/summary.csv", summary.str());

  for (std::size_t i = 0; i < trials.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "/trial_%03zu_series.csv", i);
    write_file(out_dir + name, trial_series_csv(trials[i]));
  }
  write_file(out_dir + "/trials.svg", render_trials_svg(trials));
}

int cmd_eval(const std::string& mode, const std::string& ckpt_path,
             const std::string& config_path, const std::string& dataset_path,
             const std::string& out_dir, int n_pairs,
             std::optional<uint64_t> seed) {
  RunConfig cfg = parse_config(config_path);
  if (seed) cfg.seed = *seed;
  Dataset ds = Dataset::load(dataset_path);
  check_rod_matches(cfg.rod, ds.rod_params());
  PolicyCheckpoint ckpt = load_checkpoint(ckpt_path);

  // Paired sampling: the same seed gives eval closed and eval open the same
  // init/target list. Coincident pairs are redrawn.
  Rng rng(stream_seed(cfg.seed, "eval-pairs"));
  struct Pair {
    const ConfigRecord* init;
    const ConfigRecord* target;
  };
  std::vector<Pair> pairs;
  for (int i = 0; i < n_pairs; ++i) {
    auto [init, target] = ds.sample_pair(rng);
    while (target->id == init->id) {
      target = &ds.record(rng.uniform_index(ds.size()));
    }
    pairs.push_back({init, target});
  }

  std::vector<TrialResult> trials(pairs.size());
  ThreadPool pool(cfg.n_threads > 0
                      ? cfg.n_threads
                      : static_cast<int>(std::thread::hardware_concurrency()));
  pool.parallel_for(static_cast<int>(pairs.size()), [&](int i) {
    const uint64_t trial_seed = stream_seed(cfg.seed, "eval-trial", i);
    trials[i] = mode == "closed"
                    ? run_closed_loop(ckpt, cfg.env, cfg.rod, cfg.deploy,
                                      *pairs[i].init, *pairs[i].target,
                                      trial_seed)
                    : run_open_loop(ckpt, cfg.env, cfg.rod, cfg.deploy,
                                    *pairs[i].init, *pairs[i].target,
                                    trial_seed);
  });

  write_eval_outputs(out_dir, trials);
  std::vector<double> emean;
  for (const auto& t : trials) emean.push_back(t.final_e_mean);
  std::printf("%s-loop eval: %zu trials, median final e_mean %.4f mm -> %s\n",
              mode.c_str(), trials.size(), median_of(emean), out_dir.c_str());
  return 0;
}

int cmd_experiment_repeatability(const std::string& ckpt_path,
                                 const std::string& config_path,
                                 const std::string& dataset_path,
                                 const std::string& out_dir,
                                 std::optional<uint64_t> seed) {
  RunConfig cfg = parse_config(config_path);
  if (seed) cfg.seed = *seed;
  Dataset ds = Dataset::load(dataset_path);
  check_rod_matches(cfg.rod, ds.rod_params());
  PolicyCheckpoint ckpt = load_checkpoint(ckpt_path);

  RepeatabilityReport report = repeatability_experiment(
      ckpt, cfg.env, cfg.rod, cfg.deploy, ds, cfg.seed, cfg.n_threads);

  std::filesystem::create_directories(out_dir);
  write_file(out_dir + "/trials.csv", trials_csv(report.trials));
  std::ostringstream summary;
  summary << "n_trials,mean_final_e_mean,std_final_e_mean,mean_final_e_max,"
             "std_final_e_max,reference_e_mean_um,reference_e_max_um\n";
  summary << report.trials.size() << "," << fmt(report.mean_final_e_mean)
          << "," << fmt(report.std_final_e_mean) << ","
          << fmt(report.mean_final_e_max) << ","
          << fmt(report.std_final_e_max)
          << ",270 +/- 80 (physical reference; not reproduced here)"
          << ",390 +/- 100 (physical reference; not reproduced here)\n";
  write_file(out_dir + "/summary.csv", summary.str());
  write_file(out_dir + "/trials.svg", render_trials_svg(report.trials));

  std::printf(
      "repeatability: %zu trials, sim final e_mean %.3f +/- %.3f mm, "
      "e_max %.3f +/- %.3f mm  (physical reference: 270 +/- 80 um e_mean, "
      "390 +/- 100 um e_max)\n",
      report.trials.size(), report.mean_final_e_mean,
      report.std_final_e_mean, report.mean_final_e_max,
      report.std_final_e_max);
  return 0;
}

std::vector<TrialResult> flatten(const GeneralizationReport& report) {
  std::vector<TrialResult> all;
  for (const auto& c : report.conditions) {
    all.insert(all.end(), c.trials.begin(), c.trials.end());
  }
  return all;
}

void write_generalization_outputs(const std::string& out_dir,
                                  const GeneralizationReport& report) {
  std::filesystem::create_directories(out_dir);
  write_file(out_dir + "/trials.csv", trials_csv(flatten(report)));

  std::ostringstream summary;
  summary << "stiffness_scale,length_mm,n_trials,median_final_e_max,"
             "mean_final_e_max,median_final_e_mean\n";
  for (const auto& c : report.conditions) {
    summary << fmt(c.stiffness_scale) << "," << fmt(c.length) << ","
            << c.trials.size() << "," << fmt(c.median_final_e_max) << ","
            << fmt(c.mean_final_e_max) << "," << fmt(c.median_final_e_mean)
            << "\n";
  }
  write_file(out_dir + "/summary.csv", summary.str());

  // Compact per-condition bar chart of median e_max.
  double vmax = 1e-6;
  for (const auto& c : report.conditions) {
    vmax = std::max(vmax, c.median_final_e_max);
  }
  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"520\" "
      "height=\"240\" viewBox=\"0 0 520 240\">\n";
  svg += "<rect x=\"40\" y=\"20\" width=\"460\" height=\"180\" fill=\"none\" "
         "stroke=\"#999\"/>\n";
  for (std::size_t i = 0; i < report.conditions.size(); ++i) {
    const auto& c = report.conditions[i];
    const double h = 180.0 * c.median_final_e_max / vmax;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"36\" height=\"%.1f\" "
                  "fill=\"#208080\"/>\n"
                  "<text x=\"%.1f\" y=\"214\" font-size=\"8\">s%.2f "
                  "l%.0f</text>\n",
                  48.0 + 50.0 * i, 200.0 - h, h, 46.0 + 50.0 * i,
                  c.stiffness_scale, c.length);
    svg += buf;
  }
  svg += "</svg>\n";
  write_file(out_dir + "/summary.svg", svg);
}

int cmd_experiment_generalization(const std::string& ckpt_path,
                                  const std::string& config_path,
                                  const std::string& out_dir,
                                  std::optional<uint64_t> seed) {
  RunConfig cfg = parse_config(config_path);
  if (seed) cfg.seed = *seed;
  PolicyCheckpoint ckpt = load_checkpoint(ckpt_path);

  GeneralizationReport report = generalization_experiment(
      ckpt, cfg.env, cfg.rod, cfg.deploy, cfg.seed, cfg.n_threads);
  write_generalization_outputs(out_dir, report);
  std::printf("generalization: %d trials over %zu conditions -> %s\n",
              report.total_trials(), report.conditions.size(),
              out_dir.c_str());
  return 0;
}

int cmd_experiment_bending(const std::string& ckpt_path,
                           const std::string& config_path,
                           const std::string& dataset_path,
                           const std::string& out_dir,
                           std::optional<uint64_t> seed) {
  RunConfig cfg = parse_config(config_path);
  if (seed) cfg.seed = *seed;
  Dataset ds = Dataset::load(dataset_path);
  PolicyCheckpoint ckpt = load_checkpoint(ckpt_path);

  GeneralizationReport report = generalization_experiment(
      ckpt, cfg.env, cfg.rod, cfg.deploy, cfg.seed, cfg.n_threads);
  BendingAnalysis analysis = bending_energy_analysis(flatten(report), ds);

  std::filesystem::create_directories(out_dir);
  std::ostringstream scatter;
  scatter << "target_e_bend,final_e_mean\n";
  for (const auto& [eb, em] : analysis.pairs) {
    scatter << fmt(eb) << "," << fmt(em) << "\n";
  }
  write_file(out_dir + "/scatter.csv", scatter.str());

  std::ostringstream dist;
  dist << "source,e_bend\n";
  for (double v : analysis.dataset_e_bend) dist << "training," << fmt(v) << "\n";
  for (double v : analysis.eval_e_bend) dist << "evaluation," << fmt(v) << "\n";
  write_file(out_dir + "/distributions.csv", dist.str());

  std::ostringstream summary;
  summary << "n_pairs,spearman_rho\n";
  summary << analysis.pairs.size() << ","
          << (analysis.spearman ? fmt(*analysis.spearman) : "na") << "\n";
  write_file(out_dir + "/summary.csv", summary.str());

  if (analysis.spearman) {
    std::printf("bending analysis: %zu pairs, spearman rho %.4f -> %s\n",
                analysis.pairs.size(), *analysis.spearman, out_dir.c_str());
  } else {
    std::printf("bending analysis: %zu pairs, spearman not applicable -> %s\n",
                analysis.pairs.size(), out_dir.c_str());
  }
  return 0;
}

int cmd_render(const std::string& series_path, const std::string& out_path) {
  std::ifstream f(series_path);
  if (!f) throw IoError("cannot open " + series_path);
  std::string line;
  if (!std::getline(f, line) || line != "t_s,e_mean_mm,e_max_mm") {
    throw ParseError("not a trial series file: " + series_path);
  }
  TrialResult trial;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    double t = 0, em = 0, ex = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &t, &em, &ex) != 3) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": malformed series row");
    }
    trial.time_s.push_back(t);
    trial.e_mean_series.push_back(em);
    trial.e_max_series.push_back(ex);
  }
  if (!trial.e_mean_series.empty()) {
    trial.final_e_mean = trial.e_mean_series.back();
    trial.final_e_max = trial.e_max_series.back();
  }
  write_file(out_path, render_trial_svg(trial));
  std::printf("rendered %s -> %s\n", series_path.c_str(), out_path.c_str());
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"fiberloop: shape-regulation policy training and evaluation "
               "for a planar elastic-chain fiber simulator"};
  app.require_subcommand(1);

  std::optional<uint64_t> seed;
  app.add_option("--seed", seed,
                 "Override the config seed for any command")
      ->expected(1);

  std::string config_path, out_path, dataset_path, ckpt_path, resume, series;
  int n_pairs = 20;

  auto* dataset_cmd = app.add_subcommand("dataset", "Dataset operations");
  auto* gen = dataset_cmd->add_subcommand("gen", "Sweep and settle fiber "
                                                 "configurations");
  gen->add_option("--config", config_path, "Run config file")->required();
  gen->add_option("--out", out_path, "Output dataset path")->required();

  auto* train_cmd =
      app.add_subcommand("train", "Train the shape-regulation policy");
  train_cmd->add_option("--config", config_path, "Run config file")
      ->required();
  train_cmd->add_option("--dataset", dataset_path, "Dataset path")->required();
  train_cmd->add_option("--out", out_path, "Output directory");
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");

  auto* eval_cmd = app.add_subcommand("eval", "Deploy a checkpoint into the "
                                              "perturbed simulator");
  auto* eval_closed = eval_cmd->add_subcommand("closed", "Closed-loop trials");
  auto* eval_open = eval_cmd->add_subcommand("open", "Open-loop replays");
  for (auto* sub : {eval_closed, eval_open}) {
    sub->add_option("--ckpt", ckpt_path, "Policy checkpoint")->required();
    sub->add_option("--deploy", config_path,
                    "Config file providing the [deploy] section")
        ->required();
    sub->add_option("--dataset", dataset_path, "Dataset path")->required();
    sub->add_option("--out", out_path, "Output directory")->required();
    sub->add_option("--pairs", n_pairs, "Number of init/target pairs");
  }

  auto* exp_cmd = app.add_subcommand("experiment", "Paper-protocol runs");
  auto* exp_rep = exp_cmd->add_subcommand(
      "repeatability", "3 targets x 8 initial configurations");
  auto* exp_gen = exp_cmd->add_subcommand(
      "generalization", "3 stiffness scales x 3 lengths, 20 trials each");
  auto* exp_bend = exp_cmd->add_subcommand(
      "bending", "Target bending-energy effect on final error");
  for (auto* sub : {exp_rep, exp_gen, exp_bend}) {
    sub->add_option("--ckpt", ckpt_path, "Policy checkpoint")->required();
    sub->add_option("--config", config_path, "Run config file")->required();
    sub->add_option("--out", out_path, "Output directory")->required();
  }
  exp_rep->add_option("--dataset", dataset_path, "Dataset path")->required();
  exp_bend->add_option("--dataset", dataset_path, "Dataset path")->required();

  auto* render_cmd = app.add_subcommand("render", "Render a saved trial "
                                                  "series to SVG");
  render_cmd->add_option("--series", series, "trial_###_series.csv path")
      ->required();
  render_cmd->add_option("--out", out_path, "Output SVG path")->required();

  auto* config_cmd = app.add_subcommand("config", "Config helpers");
  auto* config_init =
      config_cmd->add_subcommand("init", "Write the default config");
  config_init->add_option("--out", out_path, "Output config path")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_dataset_gen(config_path, out_path, seed);
    if (train_cmd->parsed()) {
      return cmd_train(config_path, dataset_path, out_path, seed, resume);
    }
    if (eval_closed->parsed()) {
      return cmd_eval("closed", ckpt_path, config_path, dataset_path, out_path,
                      n_pairs, seed);
    }
    if (eval_open->parsed()) {
      return cmd_eval("open", ckpt_path, config_path, dataset_path, out_path,
                      n_pairs, seed);
    }
    if (exp_rep->parsed()) {
      return cmd_experiment_repeatability(ckpt_path, config_path, dataset_path,
                                          out_path, seed);
    }
    if (exp_gen->parsed()) {
      return cmd_experiment_generalization(ckpt_path, config_path, out_path,
                                           seed);
    }
    if (exp_bend->parsed()) {
      return cmd_experiment_bending(ckpt_path, config_path, dataset_path,
                                    out_path, seed);
    }
    if (render_cmd->parsed()) return cmd_render(series, out_path);
    if (config_init->parsed()) {
      write_file(out_path, default_config_text());
      std::printf("wrote default config to %s\n", out_path.c_str());
      return 0;
    }
    std::fprintf(stderr, "usage error: no command given\n");
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    for (const auto& issue : e.issues()) {
      std::fprintf(stderr, "  - %s\n", issue.c_str());
    }
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace fiberloop
