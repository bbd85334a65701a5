// Soft-sphere discrete-element ground truth: linear spring-dashpot normal
// contacts with restitution-calibrated damping, tangential history springs
// clamped by Coulomb friction, gravity, and planar/cylindrical walls.
//
// The normal dashpot coefficient comes from the log-restitution relation
// for a linear oscillator half-period,
//   gamma_n = -2 ln(e) sqrt(m_eff k_n / (pi^2 + ln^2 e)),
// so a head-on contact separates at e times the approach speed.
#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <vector>

#include "momnet/graph.hpp"
#include "momnet/rng.hpp"

namespace momnet {

struct ContactParams {
  double k_n = 1e4;                 // N/m
  double k_t = 2.0 / 7.0 * 1e4;     // N/m
  double e = 0.7;                   // restitution
  double mu = 0.3;                  // friction coefficient
};

struct Material {
  ContactParams base;
  // Overrides keyed by an unordered pair of material classes.
  std::vector<std::pair<std::pair<int, int>, ContactParams>> overrides;
  const ContactParams& lookup(int ca, int cb) const;
};

struct Body {
  Vec3 r = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();
  double radius = 0.05;  // m
  double m = 0.1;        // kg
  int cls = 0;           // material class
  double inertia() const { return 0.4 * m * radius * radius; }  // solid sphere
};

struct SimulationBlowupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PlacementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Frame {
  std::vector<Vec3> r, v, w;
};

struct Trajectory {
  int n = 0;
  double dt = 1e-3;
  double radius = 0.05;
  std::vector<double> masses;
  std::vector<double> inertias;
  std::vector<int> classes;
  Material material;
  std::vector<BoundarySpec> boundaries;
  Vec3 gravity = Vec3::Zero();
  std::vector<Frame> frames;
};

void write_trajectory(std::ostream& out, const Trajectory& t);
Trajectory read_trajectory(std::istream& in);
void save_trajectory(const std::string& path, const Trajectory& t);
Trajectory load_trajectory(const std::string& path);

// One simulation with persistent tangential contact history. step() is a
// single semi-implicit Euler substep; generators run dt/50 substeps per
// recorded frame.
class DemSim {
 public:
  DemSim(std::vector<Body> bodies, std::vector<BoundarySpec> boundaries,
         Material mat, const Vec3& gravity);

  // Throws SimulationBlowupError when any overlap exceeds a body radius.
  void step(double h);
  void step_frames(int substeps, double h);  // substeps consecutive steps

  const std::vector<Body>& bodies() const { return bodies_; }
  std::vector<Body>& bodies() { return bodies_; }
  double time() const { return time_; }

  // Kinetic + elastic + gravitational energy. Meaningful as a dissipation
  // audit only while walls are stationary (moving walls do work).
  double total_energy() const;

  Vec3 total_momentum() const;
  Vec3 total_angular_momentum(const Vec3& ref) const;

 private:
  struct SpringKey {
    int a, b;  // body index pair, or (body, ~surface) for wall contacts
    bool operator<(const SpringKey& o) const {
      return a != o.a ? a < o.a : b < o.b;
    }
  };
  void accumulate_forces(std::vector<Vec3>& force, std::vector<Vec3>& torque,
                         double h);

  std::vector<Body> bodies_;
  std::vector<BoundarySpec> boundaries_;
  Material mat_;
  Vec3 gravity_;
  double time_ = 0.0;
  std::map<SpringKey, Vec3> springs_;
  mutable double elastic_energy_ = 0.0;  // refreshed by accumulate/energy
};

inline constexpr int kSubstepsPerFrame = 50;

struct ObliqueConfig {
  int frames = 300;
  double dt = 1e-3;
  double radius = 0.05;
  double mass = 0.1;
  double speed_min = 0.5, speed_max = 1.5;      // m/s per sphere
  double impact_min = 0.2, impact_max = 0.8;    // in units of the diameter
};

struct ConfinedConfig {
  int n = 10;
  int frames = 300;
  double dt = 1e-3;
  double radius = 0.05;
  double mass = 0.1;
  Vec3 box_lo = Vec3(-0.25, -0.25, -0.25);
  Vec3 box_hi = Vec3(0.25, 0.25, 0.25);
  double v0 = 1.0;  // initial speed scale
  Vec3 gravity = Vec3::Zero();
};

struct CylinderConfig {
  int n = 40;
  int frames = 500;
  double dt = 1e-3;
  double radius = 0.04;  // smaller bodies so the drum holds a real pile
  double mass = 0.1;
  double cyl_radius = 0.3;
  double cyl_height = 0.35;
  OmegaProfile profile;  // about the +y axis; empty = stationary
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
};

// Two spheres, zero gravity, zero spin, offset velocities producing an
// angled impact; closed system.
Trajectory gen_two_sphere_oblique(std::uint64_t seed,
                                  const ObliqueConfig& cfg = {});

// N spheres in a stationary box, random initial velocities.
Trajectory gen_confined(std::uint64_t seed, const ConfinedConfig& cfg = {});

// Spheres inside a capped cylinder about +y whose walls spin per the
// profile; gravity along -z.
Trajectory gen_cylinder_mix(std::uint64_t seed, const CylinderConfig& cfg = {});

}  // namespace momnet
