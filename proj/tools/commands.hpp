// Command implementations behind the CLI. Every command consumes a flat
// map of resolved arguments (what the manifest stores) so a run can be
// replayed byte for byte from its manifest alone.
#pragma once

#include <iosfwd>
#include <map>
#include <string>

namespace momnet::cli {

using ArgMap = std::map<std::string, std::string>;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInvariant = 2;
inline constexpr int kExitBlowup = 3;

int cmd_gen(const ArgMap& args, std::ostream& out);
int cmd_train(const ArgMap& args, std::ostream& out);
int cmd_verify(const ArgMap& args, std::ostream& out);
int cmd_rollout(const ArgMap& args, std::ostream& out);
int cmd_metrics(const ArgMap& args, std::ostream& out);

// Dispatches by name; unknown commands exit with a usage error.
int run_command(const std::string& name, const ArgMap& args,
                std::ostream& out);

// Replays a stored manifest, optionally into a different output directory.
int cmd_rerun(const std::string& manifest_path, const std::string& out_dir,
              std::ostream& out);

}  // namespace momnet::cli
