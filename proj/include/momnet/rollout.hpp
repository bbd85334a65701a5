// Autoregressive rollout with per-frame graph and ghost reconstruction,
// plus the system-level metric series and comparison report.
#pragma once

#include <iosfwd>
#include <optional>

#include "momnet/dem.hpp"
#include "momnet/model.hpp"

namespace momnet {

struct RolloutOptions {
  int horizon = 100;
  double d_c = 0.0;  // 0 = 1.25 x body diameter
  std::optional<double> lambda_override;
  std::optional<bool> external;
  bool want_residuals = false;
  bool want_pair_diagnostics = false;
  double blowup_factor = 1e3;  // times the training velocity scale
};

struct RolloutResult {
  // Predicted trajectory; frame k is the state after k+1 prediction steps
  // starting from the scene's second frame. Shares the scene's metadata.
  Trajectory pred;
  bool early_stopped = false;
  int frames_completed = 0;
  // Per-frame conservation residuals in the model's learned units (the
  // angular one vanishes only when lambda is pinned to 1).
  std::vector<double> lin_residual, ang_residual;
  std::vector<std::vector<PairDiag>> frame_pairs;  // last substep per frame
};

// The scene supplies two consecutive initial frames plus boundaries and
// metadata. Deterministic for a fixed checkpoint and scene.
RolloutResult rollout(Model& m, const Normalizer& norm,
                      const Trajectory& scene, const RolloutOptions& opt);

struct MetricSeries {
  std::vector<double> ke;        // per unit mass, spin + translation
  std::vector<double> ke_trans;  // per unit mass, translation only
  std::vector<Vec3> p;           // per unit mass
  std::vector<Vec3> l;           // true masses/inertias, about a fixed point
  std::vector<int> retained;
  std::vector<double> slope;  // x-z surface slope (rad); empty unless asked
};

// "Retained" means the center lies inside the boundary volume inflated by
// one body radius.
bool is_retained(const Vec3& r, double radius,
                 const std::vector<BoundarySpec>& boundaries);

MetricSeries compute_metrics(const Trajectory& traj, const Vec3& ref,
                             bool want_slope = false);

// Least-squares line through per-bin topmost sphere centers in the x-z
// plane; returns atan(dz/dx).
double surface_slope(const std::vector<Vec3>& positions, int bins = 8);

void write_metrics_csv(std::ostream& out, const MetricSeries& s);

struct MetricCompare {
  double rmse = 0.0;
  double max_dev = 0.0;
};

struct CompareReport {
  MetricCompare ke, p, l, retained;
  std::optional<MetricCompare> slope;
};

// Throws on length mismatch.
CompareReport compare_series(const MetricSeries& pred,
                             const MetricSeries& truth);
void write_compare_csv(std::ostream& out, const CompareReport& r);

void write_pair_diagnostics(std::ostream& out,
                            const std::vector<std::vector<PairDiag>>& frames);

}  // namespace momnet
