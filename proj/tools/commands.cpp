#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "momnet/config.hpp"
#include "momnet/dem.hpp"
#include "momnet/nn.hpp"
#include "momnet/rollout.hpp"
#include "momnet/train.hpp"
#include "momnet/verify.hpp"

namespace momnet::cli {

namespace fs = std::filesystem;

namespace {

KeyValues to_kv(const ArgMap& args) {
  KeyValues kv;
  for (const auto& [k, v] : args) kv.set(k, v);
  return kv;
}

void ensure_dir(const std::string& path) {
  if (path.empty()) throw ConfigError("missing output directory");
  fs::create_directories(path);
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

OmegaProfile parse_profile(const std::string& spec) {
  OmegaProfile p;
  if (spec.empty()) return p;
  std::istringstream ps(spec);
  std::string item;
  while (std::getline(ps, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("profile entry '" + item + "': expected t:w");
    p.t.push_back(std::stod(item.substr(0, colon)));
    p.w.push_back(std::stod(item.substr(colon + 1)));
  }
  return p;
}

ModelConfig model_config_from(const KeyValues& kv) {
  ModelConfig cfg;
  cfg.hidden = kv.get_int("hidden", cfg.hidden);
  cfg.hidden_layers = kv.get_int("hidden_layers", cfg.hidden_layers);
  cfg.steps = kv.get_int("steps", cfg.steps);
  cfg.alpha_dim = kv.get_int("alpha_dim", cfg.alpha_dim);
  cfg.external = kv.get_flag("external", cfg.external);
  const std::string lambda = kv.get("lambda", "learned");
  if (lambda != "learned") cfg.lambda_override = std::stod(lambda);
  const std::string dt_mode = kv.get("dt_mode", "split");
  if (dt_mode == "split") cfg.dt_mode = ModelConfig::DtMode::kSplit;
  else if (dt_mode == "full") cfg.dt_mode = ModelConfig::DtMode::kFull;
  else throw ConfigError("dt_mode must be split or full");
  cfg.activation = kv.get("activation", cfg.activation);
  cfg.frame_eps = kv.get_real("frame_eps", cfg.frame_eps);
  return cfg;
}

const std::vector<std::string> kModelKeys = {
    "hidden", "hidden_layers", "steps",      "alpha_dim", "external",
    "lambda", "dt_mode",       "activation", "frame_eps"};

std::vector<std::string> with_model_keys(std::vector<std::string> keys) {
  keys.insert(keys.end(), kModelKeys.begin(), kModelKeys.end());
  return keys;
}

}  // namespace

int cmd_gen(const ArgMap& args, std::ostream& out) {
  const KeyValues kv = to_kv(args);
  kv.allow_only({"scene", "seed", "out", "count", "frames", "dt", "radius",
                 "mass", "speed_min", "speed_max", "impact_min", "impact_max",
                 "n", "box_half", "v0", "gravity_z", "cyl_radius",
                 "cyl_height", "profile"});
  const std::string scene = kv.get("scene", "");
  const std::string dir = kv.get("out", "");
  ensure_dir(dir);
  const std::uint64_t seed = kv.get_u64("seed", 0);
  const int count = kv.get_int("count", 1);
  if (count < 1) throw ConfigError("count must be >= 1");

  for (int k = 0; k < count; ++k) {
    Trajectory t;
    const std::uint64_t s = seed + static_cast<std::uint64_t>(k);
    if (scene == "oblique") {
      ObliqueConfig cfg;
      cfg.frames = kv.get_int("frames", cfg.frames);
      cfg.dt = kv.get_real("dt", cfg.dt);
      cfg.radius = kv.get_real("radius", cfg.radius);
      cfg.mass = kv.get_real("mass", cfg.mass);
      cfg.speed_min = kv.get_real("speed_min", cfg.speed_min);
      cfg.speed_max = kv.get_real("speed_max", cfg.speed_max);
      cfg.impact_min = kv.get_real("impact_min", cfg.impact_min);
      cfg.impact_max = kv.get_real("impact_max", cfg.impact_max);
      t = gen_two_sphere_oblique(s, cfg);
    } else if (scene == "confined") {
      ConfinedConfig cfg;
      cfg.n = kv.get_int("n", cfg.n);
      cfg.frames = kv.get_int("frames", cfg.frames);
      cfg.dt = kv.get_real("dt", cfg.dt);
      cfg.radius = kv.get_real("radius", cfg.radius);
      cfg.mass = kv.get_real("mass", cfg.mass);
      const double half = kv.get_real("box_half", 0.25);
      cfg.box_lo = Vec3(-half, -half, -half);
      cfg.box_hi = Vec3(half, half, half);
      cfg.v0 = kv.get_real("v0", cfg.v0);
      cfg.gravity = Vec3(0, 0, kv.get_real("gravity_z", 0.0));
      t = gen_confined(s, cfg);
    } else if (scene == "cylinder") {
      CylinderConfig cfg;
      cfg.n = kv.get_int("n", cfg.n);
      cfg.frames = kv.get_int("frames", cfg.frames);
      cfg.dt = kv.get_real("dt", cfg.dt);
      cfg.radius = kv.get_real("radius", cfg.radius);
      cfg.mass = kv.get_real("mass", cfg.mass);
      cfg.cyl_radius = kv.get_real("cyl_radius", cfg.cyl_radius);
      cfg.cyl_height = kv.get_real("cyl_height", cfg.cyl_height);
      cfg.gravity = Vec3(0, 0, kv.get_real("gravity_z", -9.81));
      cfg.profile = parse_profile(kv.get("profile", ""));
      t = gen_cylinder_mix(s, cfg);
    } else {
      throw ConfigError("unknown scene '" + scene +
                        "' (expected oblique|confined|cylinder)");
    }
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%03d.traj", k);
    save_trajectory(join(dir, name), t);
    out << "wrote " << join(dir, name) << " (" << t.frames.size()
        << " frames, " << t.n << " bodies)\n";
  }
  write_manifest(join(dir, "manifest.json"), "gen", args);
  return kExitOk;
}

int cmd_train(const ArgMap& args, std::ostream& out) {
  const KeyValues kv = to_kv(args);
  kv.allow_only(with_model_keys(
      {"data", "out", "seed", "epochs", "batch", "lr", "w_v", "w_w", "w_x",
       "val_split", "clip", "samples_per_epoch", "noise", "d_c_factor"}));
  const std::string data_dir = kv.get("data", "");
  const std::string dir = kv.get("out", "");
  if (data_dir.empty()) throw ConfigError("missing data directory");
  ensure_dir(dir);

  std::vector<std::string> files;
  if (!fs::is_directory(data_dir))
    throw ConfigError("data directory not found: " + data_dir);
  for (const auto& entry : fs::directory_iterator(data_dir))
    if (entry.path().extension() == ".traj") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw ConfigError("no .traj files under " + data_dir);

  std::vector<Trajectory> trajs;
  for (const std::string& f : files) trajs.push_back(load_trajectory(f));
  const double d_c =
      kv.get_real("d_c_factor", 1.25) * 2.0 * trajs.front().radius;
  Dataset data = make_dataset(trajs, d_c, kv.get_real("val_split", 0.2));

  Model model = make_model(model_config_from(kv), kv.get_u64("seed", 0));
  TrainConfig cfg;
  cfg.epochs = kv.get_int("epochs", cfg.epochs);
  cfg.batch = kv.get_int("batch", cfg.batch);
  cfg.lr = kv.get_real("lr", cfg.lr);
  cfg.seed = kv.get_u64("seed", 0);
  cfg.weights.v = kv.get_real("w_v", 1.0);
  cfg.weights.w = kv.get_real("w_w", 1.0);
  cfg.weights.x = kv.get_real("w_x", 1.0);
  cfg.clip = kv.get_real("clip", 1.0);
  cfg.samples_per_epoch = kv.get_int("samples_per_epoch", 0);
  cfg.noise = kv.get_real("noise", 0.0);

  const TrainResult result = train(model, data, cfg, &out);
  save_model(join(dir, "checkpoint.txt"), model, data.norm);
  std::ofstream hist(join(dir, "history.csv"));
  write_history_csv(hist, result);
  write_manifest(join(dir, "manifest.json"), "train", args);
  out << "best epoch " << result.best_epoch << " val " << result.best_val
      << "\n";
  out << "wrote " << join(dir, "checkpoint.txt") << "\n";
  return kExitOk;
}

int cmd_verify(const ArgMap& args, std::ostream& out) {
  const KeyValues kv = to_kv(args);
  kv.allow_only(with_model_keys(
      {"checkpoint", "random_params", "seed", "graphs", "transforms",
       "corrupt_angular", "out"}));
  VerifyOptions opt;
  opt.graphs = kv.get_int("graphs", 100);
  opt.transforms = kv.get_int("transforms", 25);
  opt.seed = kv.get_u64("seed", 0);
  opt.corrupt_angular = kv.get_flag("corrupt_angular", false);

  Model loaded;
  Normalizer norm;
  const std::string ckpt = kv.get("checkpoint", "");
  if (!ckpt.empty()) {
    loaded = load_model(ckpt, norm);
    opt.fixed_model = &loaded;
  } else if (!kv.get_flag("random_params", true)) {
    throw ConfigError("either a checkpoint or random_params=1 is required");
  }
  opt.config = model_config_from(kv);

  const InvariantReport report = run_invariant_suite(opt);
  for (const auto& e : report.entries)
    out << (e.pass ? "PASS" : "FAIL") << ' ' << e.name
        << " worst " << e.worst << " tolerance " << e.tolerance << '\n';

  const std::string dir = kv.get("out", "");
  if (!dir.empty()) {
    ensure_dir(dir);
    std::ofstream rep(join(dir, "invariants.txt"));
    for (const auto& e : report.entries)
      rep << (e.pass ? "PASS" : "FAIL") << ' ' << e.name << " worst "
          << format_real(e.worst) << " tolerance " << format_real(e.tolerance)
          << '\n';
    write_manifest(join(dir, "manifest.json"), "verify", args);
  }
  return report.all_pass() ? kExitOk : kExitInvariant;
}

int cmd_rollout(const ArgMap& args, std::ostream& out) {
  const KeyValues kv = to_kv(args);
  kv.allow_only({"checkpoint", "scene", "horizon", "out", "truth", "lambda",
                 "external", "d_c_factor", "ref_x", "ref_y", "ref_z", "slope",
                 "diagnostics"});
  const std::string ckpt = kv.get("checkpoint", "");
  const std::string scene_path = kv.get("scene", "");
  const std::string dir = kv.get("out", "");
  if (ckpt.empty() || scene_path.empty())
    throw ConfigError("rollout needs checkpoint and scene");
  ensure_dir(dir);

  Normalizer norm;
  Model model = load_model(ckpt, norm);
  const Trajectory scene = load_trajectory(scene_path);

  RolloutOptions opt;
  opt.horizon = kv.get_int("horizon", 100);
  opt.d_c = kv.get_real("d_c_factor", 1.25) * 2.0 * scene.radius;
  const std::string lambda = kv.get("lambda", "");
  if (!lambda.empty() && lambda != "learned")
    opt.lambda_override = std::stod(lambda);
  if (kv.has("external")) opt.external = kv.get_flag("external", false);
  opt.want_residuals = true;
  opt.want_pair_diagnostics = kv.get_flag("diagnostics", true);

  const RolloutResult result = rollout(model, norm, scene, opt);
  save_trajectory(join(dir, "pred.traj"), result.pred);

  const Vec3 ref(kv.get_real("ref_x", 0.0), kv.get_real("ref_y", 0.0),
                 kv.get_real("ref_z", 0.0));
  const bool slope = kv.get_flag("slope", false);
  const MetricSeries pred_metrics = compute_metrics(result.pred, ref, slope);
  {
    std::ofstream mcsv(join(dir, "metrics.csv"));
    write_metrics_csv(mcsv, pred_metrics);
  }
  {
    std::ofstream rcsv(join(dir, "residuals.csv"));
    rcsv << "frame,linear,angular\n";
    for (size_t f = 0; f < result.lin_residual.size(); ++f)
      rcsv << f << ',' << format_real(result.lin_residual[f]) << ','
           << format_real(result.ang_residual[f]) << '\n';
  }
  if (opt.want_pair_diagnostics) {
    std::ofstream diag(join(dir, "diagnostics.txt"));
    write_pair_diagnostics(diag, result.frame_pairs);
  }

  const std::string truth_path = kv.get("truth", "");
  if (!truth_path.empty()) {
    const Trajectory truth = load_trajectory(truth_path);
    if (static_cast<int>(truth.frames.size()) < result.frames_completed + 2)
      throw ConfigError("truth trajectory shorter than the rollout horizon");
    Trajectory aligned = truth;
    aligned.frames.assign(
        truth.frames.begin() + 2,
        truth.frames.begin() + 2 + result.frames_completed);
    const MetricSeries truth_metrics = compute_metrics(aligned, ref, slope);
    const CompareReport report =
        compare_series(pred_metrics, truth_metrics);
    std::ofstream ccsv(join(dir, "compare.csv"));
    write_compare_csv(ccsv, report);
    out << "compare: ke rmse " << report.ke.rmse << ", p rmse "
        << report.p.rmse << ", l rmse " << report.l.rmse << "\n";
  }

  write_manifest(join(dir, "manifest.json"), "rollout", args);
  out << "rollout " << result.frames_completed << "/" << opt.horizon
      << " frames" << (result.early_stopped ? " (early stop)" : "") << "\n";
  return result.early_stopped ? kExitBlowup : kExitOk;
}

int cmd_metrics(const ArgMap& args, std::ostream& out) {
  const KeyValues kv = to_kv(args);
  kv.allow_only({"traj", "out", "ref_x", "ref_y", "ref_z", "slope"});
  const std::string traj_path = kv.get("traj", "");
  const std::string dir = kv.get("out", "");
  if (traj_path.empty()) throw ConfigError("metrics needs a trajectory");
  ensure_dir(dir);
  const Trajectory traj = load_trajectory(traj_path);
  const Vec3 ref(kv.get_real("ref_x", 0.0), kv.get_real("ref_y", 0.0),
                 kv.get_real("ref_z", 0.0));
  const MetricSeries m =
      compute_metrics(traj, ref, kv.get_flag("slope", false));
  std::ofstream mcsv(join(dir, "metrics.csv"));
  write_metrics_csv(mcsv, m);
  write_manifest(join(dir, "manifest.json"), "metrics", args);
  out << "wrote " << join(dir, "metrics.csv") << "\n";
  return kExitOk;
}

int run_command(const std::string& name, const ArgMap& args,
                std::ostream& out) {
  if (name == "gen") return cmd_gen(args, out);
  if (name == "train") return cmd_train(args, out);
  if (name == "verify") return cmd_verify(args, out);
  if (name == "rollout") return cmd_rollout(args, out);
  if (name == "metrics") return cmd_metrics(args, out);
  throw ConfigError("unknown command '" + name + "'");
}

int cmd_rerun(const std::string& manifest_path, const std::string& out_dir,
              std::ostream& out) {
  auto [command, args] = read_manifest(manifest_path);
  if (!out_dir.empty()) args["out"] = out_dir;
  return run_command(command, args, out);
}

}  // namespace momnet::cli
