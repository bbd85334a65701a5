// Per-step graph construction: node features, distance-threshold edges,
// ghost-node reflections across planar and cylindrical boundaries, and
// feature normalization.
//
// Ghost nodes mirror a physical body across a wall and carry the wall's
// prescribed state; they connect only to the body they mirror, so every
// wall edge lies along the wall normal.
#pragma once

#include <iosfwd>
#include <stdexcept>
#include <utility>
#include <vector>

#include "momnet/geom.hpp"
#include "momnet/tape.hpp"

namespace momnet {

struct NodeState {
  Vec3 r = Vec3::Zero();
  Vec3 v_t = Vec3::Zero(), w_t = Vec3::Zero();
  Vec3 v_tm1 = Vec3::Zero(), w_tm1 = Vec3::Zero();
  VectorXd alpha;     // scalar labels (component 0: 0 physical, 1 ghost)
  bool ghost = false;
  int host = -1;      // physical node this ghost mirrors
  int boundary = -1;  // boundary that produced this ghost
};

struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();  // outward
};

struct Cylinder {
  Vec3 center = Vec3::Zero();  // midpoint on the axis
  Vec3 axis = Vec3::UnitZ();   // unit
  double radius = 1.0;
  double height = 1.0;  // cap separation along the axis
  bool capped = true;
};

struct WallMotion {
  Vec3 linear = Vec3::Zero();
  Vec3 omega = Vec3::Zero();
};

// Piecewise-linear angular speed about the boundary axis; empty means the
// constant WallMotion applies.
struct OmegaProfile {
  std::vector<double> t;
  std::vector<double> w;
  bool empty() const { return t.empty(); }
  double at(double time) const;
};

struct BoundarySpec {
  enum class Kind { kPlane, kCylinder };
  Kind kind = Kind::kPlane;
  Plane plane;
  Cylinder cyl;
  WallMotion motion;
  OmegaProfile profile;

  Vec3 rotation_center() const;
  // Instantaneous angular velocity vector (profile-aware for cylinders).
  Vec3 omega_at(double time) const;
  bool moving() const;
};

struct DegenerateReflectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Normalizer {
  double v_scale = 1.0;
  double w_scale = 1.0;
  double dx_scale = 1.0;
};

struct GraphMeta {
  double dt = 0.0;
  double body_radius = 0.0;
  // Feature scales, recorded when the graph is normalized. Positions stay
  // raw, so turning normalized velocities into displacements needs v_scale.
  double v_scale = 1.0;
  double w_scale = 1.0;
  double dx_scale = 1.0;
};

struct GraphState {
  std::vector<NodeState> nodes;  // physical first, then ghosts
  std::vector<std::pair<int, int>> edges;  // directed (sender, receiver)
  double d_c = 0.0;
  GraphMeta meta;
  int n_physical = 0;
  bool normalized = false;
};

// Bidirectional edges between distinct physical nodes within d_c; ghosts
// connect only to their host, gated by the same threshold. Lexicographically
// sorted output.
std::vector<std::pair<int, int>> build_edges(const std::vector<NodeState>& nodes,
                                             double d_c);

Vec3 reflect_plane(const Vec3& r, const Plane& p);

// Reflections of a point strictly inside the cylinder: across the tangent
// plane at the nearest point of the curved wall, plus one per cap when
// capped. A point on the axis has no radial reflection; if the cylinder is
// also uncapped that leaves nothing and raises DegenerateReflectionError.
std::vector<Vec3> reflect_cylinder(const Vec3& r, const Cylinder& c);

// Wall-prescribed (v, omega) for a ghost at r_ghost. Stationary walls give
// zeros; moving walls give the linear velocity plus the rotation-induced
// velocity of the point r_ghost rigidly attached to the wall.
std::pair<Vec3, Vec3> ghost_velocity(const Vec3& r_ghost,
                                     const BoundarySpec& b, double time = 0.0);

// Appends one ghost per (physical node, reflection) pair. Ghosts farther
// than d_c from their host are pruned when prune is set.
std::vector<NodeState> build_ghosts(const std::vector<NodeState>& nodes,
                                    const std::vector<BoundarySpec>& boundaries,
                                    double d_c, double time = 0.0,
                                    bool prune = true);

// Scales velocity and spin features by the normalizer's maxima (positions
// stay raw; frames want unscaled positions). A graph can be normalized once.
void normalize(GraphState& g, const Normalizer& n);

// Convenience: the full per-step pipeline ghosts -> edges.
GraphState assemble_graph(std::vector<NodeState> physical,
                          const std::vector<BoundarySpec>& boundaries,
                          double d_c, const GraphMeta& meta, double time = 0.0);

// Axis-aligned box as six outward-normal planes (order: -x +x -y +y -z +z).
std::vector<BoundarySpec> make_box(const Vec3& lo, const Vec3& hi);

void write_boundaries(std::ostream& out,
                      const std::vector<BoundarySpec>& boundaries);
std::vector<BoundarySpec> read_boundaries(std::istream& in);

}  // namespace momnet
