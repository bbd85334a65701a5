// Single-step supervision: (graph at t, state delta t -> t+1) pairs from
// trajectories, MSE loss in normalized units, Adam with global-norm
// gradient clipping.
#pragma once

#include <iosfwd>

#include "momnet/dem.hpp"
#include "momnet/model.hpp"

namespace momnet {

struct Sample {
  GraphState graph;  // normalized
  std::vector<Vec3> dv, dw, dx;  // normalized targets, physical nodes only
  int traj = 0;
  int frame = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  Normalizer norm;  // measured on the training split only
  std::vector<int> train_idx, val_idx;
  double dt = 0.0;
};

struct LossWeights {
  double v = 1.0, w = 1.0, x = 1.0;
};

// Frames 1..T-2 of each trajectory become samples (frame 0 supplies the
// previous-step velocities, the last frame only the final targets). The
// validation split is taken by whole trajectories; single-trajectory
// datasets fall back to a tail-of-frames split.
Dataset make_dataset(const std::vector<Trajectory>& trajs, double d_c,
                     double val_split);

// w_v MSE(dv) + w_w MSE(dw) + w_x MSE(dx), averaged over physical nodes and
// components.
Slot attach_loss(Tape& tape, const ForwardResult& fwd, const Sample& sample,
                 const LossWeights& weights);

struct TrainConfig {
  int epochs = 100;
  int batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  LossWeights weights;
  double clip = 1.0;          // global gradient norm
  int samples_per_epoch = 0;  // 0 = full pass
  double noise = 0.0;         // input jitter (normalized units), off by default
  int log_every = 10;
};

struct TrainResult {
  std::vector<double> train_loss, val_loss;
  int best_epoch = -1;
  double best_val = 0.0;
  double worst_lin_residual = 0.0;
  double worst_ang_residual = 0.0;
};

struct TrainingDivergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic given the seed. The model is left holding the
// best-validation parameters. The architectural conservation identities are
// spot-checked on one sample per epoch and throw if violated.
TrainResult train(Model& m, const Dataset& data, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

double eval_loss(Model& m, const Dataset& data, const std::vector<int>& idx,
                 const LossWeights& weights);

void write_history_csv(std::ostream& out, const TrainResult& r);

}  // namespace momnet
