// MLP containers on top of the tape, an Adam optimizer, and the textual
// parameter container used by checkpoints.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "momnet/rng.hpp"
#include "momnet/tape.hpp"

namespace momnet {

enum class Activation { kSilu };

struct Mlp {
  std::vector<int> widths;  // input, hidden..., output
  std::vector<int> weight_ids;
  std::vector<int> bias_ids;
  Activation act = Activation::kSilu;
};

// Registers weights (Xavier-normal) and zero biases under "<name>.w<k>" /
// "<name>.b<k>".
Mlp make_mlp(ParamStore& store, const std::string& name,
             const std::vector<int>& widths, Rng& rng);

// Hidden layers use the activation, the last layer is linear. Throws on an
// input-width mismatch.
Slot mlp_forward(const Mlp& m, Slot x, Tape& tape);

struct OptimState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<MatrixXd> m;
  std::vector<MatrixXd> v;
};

OptimState make_optim(const ParamStore& store, double lr);

// Bias-corrected adaptive-moment update from the gradients currently held
// in the store. Throws when the state does not match the store's shapes.
void adam_step(ParamStore& store, OptimState& s);

// Textual parameter block: one "param <name> <rows> <cols>" line per tensor
// followed by its row-major values at 17 significant digits.
void write_params(std::ostream& out, const ParamStore& store);
// Reads values into an existing store; names and shapes must match.
void read_params(std::istream& in, ParamStore& store);

// 17-significant-digit decimal formatting (round-trips doubles exactly).
std::string format_real(double x);

}  // namespace momnet
