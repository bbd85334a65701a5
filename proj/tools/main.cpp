// momnet command line: data generation, training, invariant verification,
// rollout, and metrics, all reproducible from the manifest each command
// writes next to its outputs.
#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"
#include "momnet/config.hpp"
#include "momnet/dem.hpp"
#include "momnet/train.hpp"

using momnet::cli::ArgMap;

namespace {

// Flags override config-file values; the merged map is what the manifest
// records.
ArgMap merge(const std::string& config_path, const ArgMap& flags) {
  ArgMap args;
  if (!config_path.empty()) {
    const momnet::KeyValues kv = momnet::KeyValues::parse_file(config_path);
    for (const auto& [k, v] : kv.items()) args[k] = v;
  }
  for (const auto& [k, v] : flags) args[k] = v;
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"momnet: momentum-conserving graph-network dynamics engine"};
  app.require_subcommand(1);

  std::string config_path, out_dir, manifest_path;
  std::uint64_t seed = 0;
  bool seed_set = false;

  ArgMap flags;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "random seed")->each([&](std::string) {
      seed_set = true;
    });
  };
  auto opt = [&](CLI::App* cmd, const std::string& key,
                 const std::string& help) {
    cmd->add_option_function<std::string>(
        "--" + key, [&flags, key](const std::string& v) { flags[key] = v; },
        help);
  };

  CLI::App* gen = app.add_subcommand("gen", "generate oracle trajectories");
  add_common(gen);
  for (const char* key :
       {"scene", "count", "frames", "n", "box_half", "v0", "gravity_z",
        "cyl_radius", "cyl_height", "profile", "radius", "mass", "dt"})
    opt(gen, key, "");

  CLI::App* train = app.add_subcommand("train", "fit a model checkpoint");
  add_common(train);
  for (const char* key :
       {"data", "epochs", "batch", "lr", "val_split", "samples_per_epoch",
        "noise", "clip", "hidden", "hidden_layers", "steps", "external",
        "lambda", "dt_mode", "d_c_factor", "w_v", "w_w", "w_x"})
    opt(train, key, "");

  CLI::App* verify = app.add_subcommand("verify", "run the invariant suite");
  add_common(verify);
  for (const char* key : {"checkpoint", "random_params", "graphs",
                          "transforms", "corrupt_angular", "hidden",
                          "hidden_layers", "steps"})
    opt(verify, key, "");

  CLI::App* rollout = app.add_subcommand("rollout", "autoregressive rollout");
  add_common(rollout);
  for (const char* key : {"checkpoint", "scene", "horizon", "truth", "lambda",
                          "external", "d_c_factor", "ref_x", "ref_y", "ref_z",
                          "slope", "diagnostics"})
    opt(rollout, key, "");

  CLI::App* metrics = app.add_subcommand("metrics", "system-level metrics");
  add_common(metrics);
  for (const char* key : {"traj", "ref_x", "ref_y", "ref_z", "slope"})
    opt(metrics, key, "");

  CLI::App* rerun = app.add_subcommand("rerun", "replay a manifest");
  rerun->add_option("--manifest", manifest_path, "manifest.json path")
      ->required();
  rerun->add_option("--out", out_dir, "override output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "rerun")
      return momnet::cli::cmd_rerun(manifest_path, out_dir, std::cout);
    ArgMap args = merge(config_path, flags);
    if (!out_dir.empty()) args["out"] = out_dir;
    if (seed_set) args["seed"] = std::to_string(seed);
    return momnet::cli::run_command(name, args, std::cout);
  } catch (const momnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return momnet::cli::kExitUsage;
  } catch (const momnet::SimulationBlowupError& e) {
    std::cerr << "simulation blowup: " << e.what() << "\n";
    return momnet::cli::kExitBlowup;
  } catch (const momnet::TrainingDivergedError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return momnet::cli::kExitBlowup;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return momnet::cli::kExitUsage;
  }
}
