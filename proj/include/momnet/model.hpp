// The conservation-structured message-passing layer and its L-step stack.
//
// Per undirected pair, node vector features are projected onto the edge's
// antisymmetric local frame to form invariant embeddings (scalarization);
// the embeddings decode into an antisymmetric internal force, an
// antisymmetric angular-momentum exchange, a shared point of action, and a
// lever-arm gate (vectorization). Summed over a pair, forces cancel exactly
// and spin torques cancel the orbital transfer, which is what makes the
// global momentum invariants hold for any parameter values.
#pragma once

#include <limits>
#include <optional>
#include <string>

#include "momnet/frames.hpp"
#include "momnet/graph.hpp"
#include "momnet/nn.hpp"

namespace momnet {

struct ModelConfig {
  int hidden = 64;
  int hidden_layers = 2;
  int steps = 4;  // message-passing iterations per frame
  int alpha_dim = 1;
  bool external = false;  // node-wise external-force decoder
  // NaN = learned lambda; a finite value pins it (conservation tests use 1).
  double lambda_override = std::numeric_limits<double>::quiet_NaN();
  enum class DtMode { kSplit, kFull } dt_mode = DtMode::kSplit;
  std::string activation = "silu";
  double frame_eps = kNormEps;

  bool lambda_fixed() const { return lambda_override == lambda_override; }
  double substep_dt(double dt) const {
    return dt_mode == DtMode::kSplit ? dt / steps : dt;
  }
};

struct Model {
  ModelConfig cfg;
  ParamStore params;
  Mlp phi_e1;   // 12 projections -> H
  Mlp phi_e2;   // |dx| -> H
  Mlp phi_n;    // alpha -> H
  Mlp theta_e;  // H -> H
  int ln_gain = -1, ln_bias = -1;
  Mlp psi_ef;  // H -> 3 force coefficients
  Mlp psi_ea;  // H -> 3 angular coefficients
  Mlp psi_el;  // H -> 1 lever gate
  Mlp psi_n1;  // H -> 1 point-of-action weight (positive)
  Mlp psi_n2;  // H -> 1 inverse mass (positive)
  Mlp psi_n3;  // H -> 1 inverse inertia (positive)
  Mlp psi_n4;  // H -> 3 external delta-v
};

Model make_model(const ModelConfig& cfg, std::uint64_t seed);

struct PairDiag {
  int i = -1, j = -1;  // i < j; force/torque signs are for receiver j
  Vec3 force = Vec3::Zero();
  Vec3 angular = Vec3::Zero();
  Vec3 tau_ij = Vec3::Zero();  // spin torque on j
  Vec3 tau_ji = Vec3::Zero();  // spin torque on i
  Vec3 r0 = Vec3::Zero();
  double lambda = 0.0;
  // Independently evaluated j->i decode, filled in per-direction mode.
  Vec3 force_rev = Vec3::Zero();
  Vec3 angular_rev = Vec3::Zero();
  Vec3 r0_rev = Vec3::Zero();
  double lambda_rev = 0.0;
};

struct StepDiag {
  std::vector<PairDiag> pairs;
  std::vector<Vec3> dv, dw;  // per-node substep deltas (normalized units)
  std::vector<Vec3> r;       // positions at the start of the substep
};

struct ForwardOptions {
  double dt = 1e-3;
  bool want_diagnostics = false;
  // Evaluate every directed edge independently instead of mirroring each
  // pair; exercises the antisymmetry algebra end to end.
  bool per_direction = false;
  // Test hook: drops the sign flip on the reverse-direction angular decode,
  // which silently breaks angular-momentum conservation.
  bool corrupt_angular_sign = false;
  std::optional<double> lambda_override;  // wins over the model config
  std::optional<bool> external;           // wins over the model config
};

struct ForwardResult {
  // Accumulated over all substeps; ghosts carry zeros.
  std::vector<Vec3> dv_hat, dw_hat;  // normalized units
  std::vector<Vec3> dx;              // raw length units
  std::vector<double> mass_inv, inertia_inv;  // per node, positive
  std::vector<StepDiag> steps;  // filled when want_diagnostics

  // Tape slots for the physical nodes (loss attachment); dx slots are in
  // normalized units (raw / dx_scale).
  std::vector<Slot> dv_slots, dw_slots, dx_slots;
};

// Records the whole pass on the tape; g must be normalized. Edge topology is
// frozen across substeps and per-pair edge memory is zero-initialized.
ForwardResult model_forward(const Model& m, const GraphState& g, Tape& tape,
                            const ForwardOptions& opt);

// Checkpoint container: config + normalizer + named parameters.
void save_model(const std::string& path, const Model& m, const Normalizer& n);
Model load_model(const std::string& path, Normalizer& n);
void write_model(std::ostream& out, const Model& m, const Normalizer& n);
Model read_model(std::istream& in, Normalizer& n);

}  // namespace momnet
