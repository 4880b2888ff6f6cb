// dualtrack: data generation, staged training, evaluation, reconstruction,
// compounding and ablation from the command line.
//
// Failures print one line to stderr, "error: <category>: <message>", and exit 1
// (2 for command-line usage errors).

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "dualtrack/checkpoint.hpp"
#include "dualtrack/compound.hpp"
#include "dualtrack/datagen.hpp"
#include "dualtrack/dataset.hpp"
#include "dualtrack/evaluation.hpp"
#include "dualtrack/training.hpp"

namespace fs = std::filesystem;
using namespace dualtrack;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
  bool force = false;
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// --config, else <run>/config.yaml, else the desk preset.
TrainConfig resolve_config(const Globals& g, const fs::path& run_dir = {}) {
  TrainConfig c;
  if (!g.config.empty()) {
    c = load_config(g.config);
  } else if (!run_dir.empty() && fs::exists(run_dir / "config.yaml")) {
    c = load_config(run_dir / "config.yaml");
  } else {
    c = desk_preset();
  }
  if (g.seed) c.seed = c.generate.seed = *g.seed;
  if (g.deterministic) c.deterministic = true;
  if (!c.dataset_root.empty()) c.dataset_root = fs::absolute(c.dataset_root).lexically_normal();
  c.validate();
  return c;
}

void claim_output(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    require(force, ErrorCategory::refused, "output " + dir.string() + " is not empty (use --force)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

std::vector<Variant> parse_variants(const std::vector<std::string>& names) {
  std::vector<Variant> out;
  for (const auto& n : names) out.push_back(variant_from_string(n));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorCategory::io_error, "cannot write " + path.string());
  f << text;
}

void print_report(const std::string& label, const MetricsReport& r) {
  std::cout << label << ": GPE " << r.gpe_mm << " mm, LPE " << r.lpe_um << " um, FDR " << r.fdr_percent
            << " %, max drift " << r.max_drift_mm << " mm\n";
}

int cmd_generate(const Globals& g, const std::string& data) {
  const TrainConfig c = resolve_config(g);
  fs::path root = !g.out.empty() ? fs::path(g.out) : !data.empty() ? fs::path(data) : c.dataset_root;
  if (root.empty()) root = "data";
  const auto infos = generate_dataset(c.generate, root, g.force);
  std::map<std::string, int> per_split;
  for (const auto& i : infos) ++per_split[i.split];
  std::cout << "wrote " << infos.size() << " sweeps to " << root.string();
  for (const auto& [split, n] : per_split) std::cout << " " << split << "=" << n;
  std::cout << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::string& stage_name, const std::string& data, bool resume, bool quiet) {
  const fs::path run = g.out.empty() ? fs::path("runs/desk") : fs::path(g.out);
  TrainConfig c = resolve_config(g, run);
  if (!data.empty()) c.dataset_root = fs::absolute(data).lexically_normal();
  require(!c.dataset_root.empty(), ErrorCategory::invalid_argument, "no dataset: set dataset_root or pass --data");
  apply_determinism(c);

  std::vector<Stage> stages;
  if (stage_name == "all") {
    stages = {Stage::local_cnn, Stage::local_pool, Stage::global, Stage::fusion, Stage::coupled};
  } else {
    stages = {stage_from_string(stage_name)};
  }
  fs::create_directories(run);
  write_text(run / "config.yaml", dump_config(c));

  std::optional<TrainingSet> train, val;
  for (Stage s : stages) {
    const fs::path selected = checkpoint_path(run, s);
    const fs::path last = checkpoint_path(run, s, true);
    TrainOptions options;
    options.verbose = !quiet;
    const bool complete = fs::exists(selected) && read_manifest(selected).complete;
    if (resume && fs::exists(last) && !read_manifest(last).complete) {
      options.resume = last;
    } else if (complete && !g.force) {
      if (stage_name == "all") {
        std::cout << to_string(s) << ": already complete, skipped\n";
        continue;
      }
      fail(ErrorCategory::refused, "stage " + to_string(s) + " already has " + selected.string() + " (use --force)");
    }
    if (!train) {
      train = make_training_set(load_split(c.dataset_root, "train"), c.model);
      val = make_training_set(load_split(c.dataset_root, "val"), c.model);
    }
    const StageResult r = train_stage(c, s, run, *train, &*val, options);
    std::cout << to_string(s) << ": " << r.losses.size() << " steps from " << r.first_step << ", best val GPE "
              << r.best_val_gpe_mm << " mm -> " << r.checkpoint.string() << "\n";
  }
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& run_dir, const std::string& variant_name,
                 const std::string& split, const std::string& data) {
  const fs::path run = run_dir;
  TrainConfig c = resolve_config(g, run);
  if (!data.empty()) c.dataset_root = fs::absolute(data).lexically_normal();
  apply_determinism(c);
  const Variant v = variant_from_string(variant_name);
  const fs::path out = g.out.empty() ? run / ("eval_" + variant_name + "_" + split) : fs::path(g.out);
  std::string hash;
  DualTrackModel model = load_model(c, run, v, &hash);
  const auto sweeps = load_split(c.dataset_root, split);
  claim_output(out, g.force);
  std::vector<TrajectoryEstimate> estimates;
  const auto evals = evaluate_sweeps(model, v, sweeps, hash, &estimates);
  for (const auto& e : estimates) save_estimate(e, out / "estimates" / (e.sweep_id + ".json"));
  const MetricsReport mean = write_evaluation(evals, out, variant_name + " on " + split);
  print_report(variant_name + " mean over " + std::to_string(evals.size()) + " sweeps", mean);
  std::cout << "reports in " << out.string() << "\n";
  return 0;
}

int cmd_reconstruct(const Globals& g, const std::string& run_dir, const std::string& sweep_dir,
                    const std::vector<std::string>& variant_names) {
  const fs::path run = run_dir;
  const TrainConfig c = resolve_config(g, run);
  apply_determinism(c);
  const Sweep sweep = load_sweep(sweep_dir);
  const fs::path out = g.out.empty() ? run / ("reconstruct_" + sweep.id) : fs::path(g.out);
  std::vector<TrajectoryEstimate> estimates;
  for (Variant v : parse_variants(variant_names)) {
    std::string hash;
    DualTrackModel model = load_model(c, run, v, &hash);
    const auto rel = to_params(predict_sweep(model, v, frames_tensor(sweep.frames)));
    estimates.push_back(make_estimate(sweep.id, rel, to_string(v), hash));
  }
  claim_output(out, g.force);
  for (const auto& e : estimates) {
    save_estimate(e, out / (e.variant + ".estimate.json"));
    print_report(e.variant, evaluate_estimate(sweep, e).report);
  }
  const auto plots = write_reconstruction_plots(sweep, estimates, out);
  std::cout << "plots: " << plots.ribbon.string() << " " << plots.out_of_plane.string() << "\n";
  return 0;
}

int cmd_compound(const Globals& g, const std::string& sweep_dir, const std::string& estimate_path, double spacing) {
  const Sweep sweep = load_sweep(sweep_dir);
  Trajectory poses = sweep.poses;
  if (!estimate_path.empty()) {
    const TrajectoryEstimate e = load_estimate(estimate_path);
    require(e.composed.size() == sweep.poses.size(), ErrorCategory::shape_mismatch,
            "estimate has " + std::to_string(e.composed.size()) + " poses, sweep has " +
                std::to_string(sweep.poses.size()));
    // Anchor the estimate at the sweep's first tracked pose.
    for (std::size_t i = 0; i < poses.size(); ++i) poses[i] = sweep.poses[0] * e.composed[i];
  }
  const fs::path out = g.out.empty() ? fs::path("volume_" + sweep.id) : fs::path(g.out);
  CompoundOptions options;
  options.voxel_spacing_mm = spacing;
  const Volume vol = compound_frames(sweep.frames, poses, sweep.calibration, options);
  claim_output(out, g.force);
  save_volume(vol, out / "volume.json");
  std::size_t written = 0;
  for (auto w : vol.written) written += w;
  std::cout << "volume " << vol.size[0] << "x" << vol.size[1] << "x" << vol.size[2] << " at " << spacing
            << " mm, " << written << " voxels written -> " << (out / "volume.json").string() << "\n";
  return 0;
}

int cmd_ablate(const Globals& g, const std::string& run_dir, const std::vector<std::string>& variant_names,
               const std::string& split, const std::string& data, bool quiet) {
  const fs::path run = run_dir;
  TrainConfig c = resolve_config(g, run);
  if (!data.empty()) c.dataset_root = fs::absolute(data).lexically_normal();
  apply_determinism(c);
  const fs::path out = g.out.empty() ? run / ("ablation_" + split) : fs::path(g.out);
  if (fs::exists(out) && !fs::is_empty(out)) {
    require(g.force, ErrorCategory::refused, "output " + out.string() + " is not empty (use --force)");
  }
  fs::create_directories(run);
  if (!fs::exists(run / "config.yaml")) write_text(run / "config.yaml", dump_config(c));
  const AblationResult r = run_ablation(c, run, parse_variants(variant_names), split, !quiet);
  claim_output(out, true);
  for (const auto& [name, evals] : r.per_sweep) write_evaluation(evals, out / name, name + " on " + split);
  write_ablation_table(r.mean, out / "ablation.csv", out / "ablation.txt");
  for (const auto& name : variant_names) print_report(name, r.mean.at(name));
  std::cout << "table in " << (out / "ablation.txt").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensorless probe tracking: synthetic data, staged training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "YAML config (a preset plus overrides)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, deterministic kernels");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--force", g.force, "Overwrite existing outputs");

  std::string data, run = "runs/desk", stage = "all", variant = "dualtrack", split = "test", sweep, estimate;
  std::vector<std::string> variants;
  bool resume = false, quiet = false;
  double spacing = 0.5;

  auto* gen = app.add_subcommand("generate", "Render a synthetic dataset");
  gen->add_option("--data", data, "Dataset root (default: --out, then the config's dataset_root)");

  auto* train = app.add_subcommand("train", "Train one stage or all of them (--out is the run directory)");
  train->add_option("--stage", stage, "local_cnn, local_pool, global, fusion, coupled or all");
  train->add_option("--data", data, "Dataset root");
  train->add_flag("--resume", resume, "Continue from <stage>_last.pt");
  train->add_flag("--quiet", quiet);

  auto* eval = app.add_subcommand("evaluate", "Metrics for one variant on a split");
  eval->add_option("--run", run, "Run directory with checkpoints");
  eval->add_option("--variant", variant, "zero, local_only, coupled or dualtrack");
  eval->add_option("--split", split);
  eval->add_option("--data", data, "Dataset root");

  auto* recon = app.add_subcommand("reconstruct", "Estimate one sweep's trajectory and plot it");
  recon->add_option("--run", run, "Run directory with checkpoints");
  recon->add_option("--sweep", sweep, "Sweep directory")->required();
  recon->add_option("--variants", variants, "Variants to overlay")->delimiter(',');

  auto* comp = app.add_subcommand("compound", "Splat a sweep into a voxel volume");
  comp->add_option("--sweep", sweep, "Sweep directory")->required();
  comp->add_option("--estimate", estimate, "Trajectory estimate (default: ground-truth poses)");
  comp->add_option("--spacing", spacing, "Voxel size in mm")->check(CLI::PositiveNumber);

  auto* abl = app.add_subcommand("ablate", "Train what is missing, then compare variants");
  abl->add_option("--run", run, "Run directory");
  abl->add_option("--variants", variants, "Variants")->delimiter(',');
  abl->add_option("--split", split);
  abl->add_option("--data", data, "Dataset root");
  abl->add_flag("--quiet", quiet);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: invalid_argument: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*gen) return cmd_generate(g, data);
    if (*train) return cmd_train(g, stage, data, resume, quiet);
    if (*eval) return cmd_evaluate(g, run, variant, split, data);
    if (*recon) {
      if (variants.empty()) variants = {"dualtrack"};
      return cmd_reconstruct(g, run, sweep, variants);
    }
    if (*comp) return cmd_compound(g, sweep, estimate, spacing);
    if (*abl) {
      if (variants.empty()) variants = {"zero", "local_only", "coupled", "dualtrack"};
      return cmd_ablate(g, run, variants, split, data, quiet);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << category_name(e.category()) << ": " << one_line(e.what()) << "\n";
    return 1;
  } catch (const c10::Error& e) {
    std::cerr << "error: backend_error: " << one_line(e.what_without_backtrace()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: io_error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
