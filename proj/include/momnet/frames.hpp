// Edge-local reference frames: an orthogonal triad per directed edge that is
// rotation equivariant, translation invariant, and exactly antisymmetric
// under interchange of the two nodes. Projections of node vector features
// onto the triad give the invariant scalars fed to the model.
#pragma once

#include <array>
#include <stdexcept>

#include "momnet/geom.hpp"

namespace momnet {

struct EdgeFrame {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  Vec3 c = Vec3::Zero();
  // Degenerate axes are zeroed and flagged; projections along them (and any
  // vector later decoded along them) are exactly zero. A symmetric fallback
  // axis would break the interchange antisymmetry that conservation rests on.
  std::array<bool, 3> masked{false, false, false};
};

struct FrameInputs {
  Vec3 r_i = Vec3::Zero(), r_j = Vec3::Zero();  // positions, unscaled
  Vec3 v_i = Vec3::Zero(), v_j = Vec3::Zero();
  Vec3 w_i = Vec3::Zero(), w_j = Vec3::Zero();
};

struct DegenerateEdgeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sum of four safe-normalized terms: the velocity sum, the spin sum, and the
// cross products of the velocity/spin differences with the edge vector.
// Symmetric under node interchange; terms shorter than eps contribute zero.
Vec3 intermediate_vector(const FrameInputs& fi, double eps = kNormEps);

// a along the edge, b from the perpendicular part of the intermediate
// vector crossed with a, c from the parallel part crossed with b. Throws
// DegenerateEdgeError when the endpoints coincide (|r_j - r_i| < eps).
EdgeFrame build_frame(const FrameInputs& fi, double eps = kNormEps);

// Dots each of the four features against (a, b, c); flip negates all three
// axes (the receiver-side projection). Masked axes contribute zero.
std::array<double, 12> project_features(const std::array<Vec3, 4>& feats,
                                        const EdgeFrame& f, bool flip);

}  // namespace momnet
