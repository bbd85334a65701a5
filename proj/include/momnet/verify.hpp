// Randomized invariant suite: antisymmetry, momentum conservation, symmetry
// equivariances, and gradient correctness, reported with worst-case
// residuals. These hold for any parameter values, trained or not.
#pragma once

#include "momnet/model.hpp"

namespace momnet {

struct VerifyOptions {
  int graphs = 100;      // random graphs for the algebraic invariants
  int transforms = 25;   // random rotations/translations/permutations
  std::uint64_t seed = 0;
  bool corrupt_angular = false;   // negative-control hook
  const Model* fixed_model = nullptr;  // default: fresh random params per graph
  ModelConfig config;    // used when fixed_model is null
};

struct InvariantReport {
  struct Entry {
    std::string name;
    double worst = 0.0;
    double tolerance = 0.0;
    bool pass = false;
  };
  std::vector<Entry> entries;
  bool all_pass() const;
};

// Graphs are drawn with 3-8 nodes, random states, and occasional
// deliberately degenerate edges (stationary pairs, velocities aligned with
// the edge) so the masked-axis paths are exercised too.
InvariantReport run_invariant_suite(const VerifyOptions& opt);

}  // namespace momnet
