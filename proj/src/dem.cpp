#include "momnet/dem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "momnet/nn.hpp"

namespace momnet {

namespace {

double normal_damping(double e, double k_n, double m_eff) {
  if (e >= 1.0) return 0.0;
  const double le = std::log(e);
  return -2.0 * le * std::sqrt(m_eff * k_n / (M_PI * M_PI + le * le));
}

}  // namespace

const ContactParams& Material::lookup(int ca, int cb) const {
  const int lo = std::min(ca, cb), hi = std::max(ca, cb);
  for (const auto& [key, params] : overrides)
    if (key.first == lo && key.second == hi) return params;
  return base;
}

DemSim::DemSim(std::vector<Body> bodies, std::vector<BoundarySpec> boundaries,
               Material mat, const Vec3& gravity)
    : bodies_(std::move(bodies)),
      boundaries_(std::move(boundaries)),
      mat_(std::move(mat)),
      gravity_(gravity) {}

void DemSim::accumulate_forces(std::vector<Vec3>& force,
                               std::vector<Vec3>& torque, double h) {
  const int n = static_cast<int>(bodies_.size());
  elastic_energy_ = 0.0;
  std::map<SpringKey, Vec3> live;

  auto contact = [&](int bi, const SpringKey& key, const Vec3& n_c, double delta,
                     const Vec3& c, const Vec3& v_other, double m_eff,
                     const ContactParams& p, int other_body) {
    Body& body = bodies_[static_cast<size_t>(bi)];
    if (delta > body.radius)
      throw SimulationBlowupError("contact overlap exceeds body radius");
    // n_c points from the other surface into this body.
    const Vec3 v_surf = body.v + body.w.cross(c - body.r);
    const Vec3 v_rel = v_surf - v_other;
    const Vec3 v_n = v_rel.dot(n_c) * n_c;
    const Vec3 v_t = v_rel - v_n;

    const double gamma = normal_damping(p.e, p.k_n, m_eff);
    const Vec3 f_n = p.k_n * delta * n_c - gamma * v_n;

    Vec3 xi = Vec3::Zero();
    if (auto it = springs_.find(key); it != springs_.end()) xi = it->second;
    xi -= xi.dot(n_c) * n_c;  // keep the history in the tangent plane
    xi += v_t * h;
    Vec3 f_t = -p.k_t * xi;
    const double f_t_max = p.mu * f_n.norm();
    if (f_t.norm() > f_t_max) {
      f_t = f_t_max > 0.0 ? Vec3(f_t_max * f_t.normalized()) : Vec3::Zero();
      xi = -f_t / p.k_t;  // slip: rescale history onto the Coulomb cone
    }
    live[key] = xi;

    const Vec3 f = f_n + f_t;
    force[static_cast<size_t>(bi)] += f;
    torque[static_cast<size_t>(bi)] += (c - body.r).cross(f);
    if (other_body >= 0) {
      force[static_cast<size_t>(other_body)] -= f;
      torque[static_cast<size_t>(other_body)] +=
          (c - bodies_[static_cast<size_t>(other_body)].r).cross(-f);
    }
    elastic_energy_ +=
        0.5 * p.k_n * delta * delta + 0.5 * p.k_t * xi.squaredNorm();
  };

  for (int i = 0; i < n; ++i) {
    const Body& a = bodies_[static_cast<size_t>(i)];
    for (int j = i + 1; j < n; ++j) {
      const Body& b = bodies_[static_cast<size_t>(j)];
      const Vec3 d = b.r - a.r;
      const double dist = d.norm();
      const double delta = a.radius + b.radius - dist;
      if (delta <= 0.0) continue;
      const Vec3 n_ij = d / dist;  // a -> b
      const Vec3 c = a.r + (a.radius - 0.5 * delta) * n_ij;
      const double m_eff = a.m * b.m / (a.m + b.m);
      const Vec3 v_other = a.v + a.w.cross(c - a.r);
      contact(j, SpringKey{i, j}, n_ij, delta, c, v_other, m_eff,
              mat_.lookup(a.cls, b.cls), i);
    }
  }

  // Wall contacts. Surfaces are enumerated per boundary: planes have one,
  // cylinders three (curved, bottom cap, top cap). Wall class label is -1.
  for (int bi = 0; bi < n; ++bi) {
    const Body& body = bodies_[static_cast<size_t>(bi)];
    const ContactParams& p = mat_.lookup(body.cls, -1);
    for (int wi = 0; wi < static_cast<int>(boundaries_.size()); ++wi) {
      const BoundarySpec& wall = boundaries_[static_cast<size_t>(wi)];
      auto wall_velocity = [&](const Vec3& c) {
        return wall.motion.linear +
               wall.omega_at(time_).cross(c - wall.rotation_center());
      };
      auto plane_contact = [&](const Plane& pl, int surface) {
        const double s = (body.r - pl.point).dot(pl.normal);
        const double delta = body.radius + s;  // interior has s < 0
        if (delta <= 0.0 || s > 0.0) return;
        const Vec3 n_c = -pl.normal;
        const Vec3 c = body.r - s * pl.normal;
        contact(bi, SpringKey{bi, ~(4 * wi + surface)}, n_c, delta, c,
                wall_velocity(c), body.m, p, -1);
      };
      if (wall.kind == BoundarySpec::Kind::kPlane) {
        plane_contact(wall.plane, 0);
      } else {
        const Cylinder& cy = wall.cyl;
        const Vec3 rel = body.r - cy.center;
        const Vec3 radial = rel - rel.dot(cy.axis) * cy.axis;
        const double rho = radial.norm();
        const double delta = body.radius - (cy.radius - rho);
        if (delta > 0.0 && rho > 0.0) {
          const Vec3 rhat = radial / rho;
          const Vec3 c = body.r + (cy.radius - rho) * rhat;
          contact(bi, SpringKey{bi, ~(4 * wi + 0)}, Vec3(-rhat), delta, c,
                  wall_velocity(c), body.m, p, -1);
        }
        if (cy.capped) {
          const Vec3 bottom = cy.center - 0.5 * cy.height * cy.axis;
          const Vec3 top = cy.center + 0.5 * cy.height * cy.axis;
          plane_contact(Plane{bottom, -cy.axis}, 1);
          plane_contact(Plane{top, cy.axis}, 2);
        }
      }
    }
  }

  springs_.swap(live);  // contacts that broke lose their history

  for (int i = 0; i < n; ++i)
    force[static_cast<size_t>(i)] += bodies_[static_cast<size_t>(i)].m * gravity_;
}

void DemSim::step(double h) {
  const int n = static_cast<int>(bodies_.size());
  std::vector<Vec3> force(static_cast<size_t>(n), Vec3::Zero());
  std::vector<Vec3> torque(static_cast<size_t>(n), Vec3::Zero());
  accumulate_forces(force, torque, h);
  for (int i = 0; i < n; ++i) {
    Body& b = bodies_[static_cast<size_t>(i)];
    b.v += h * force[static_cast<size_t>(i)] / b.m;
    b.w += h * torque[static_cast<size_t>(i)] / b.inertia();
    b.r += h * b.v;
  }
  time_ += h;
}

void DemSim::step_frames(int substeps, double h) {
  for (int k = 0; k < substeps; ++k) step(h);
}

double DemSim::total_energy() const {
  double ke = 0.0, pe = 0.0;
  for (const Body& b : bodies_) {
    ke += 0.5 * b.m * b.v.squaredNorm() + 0.5 * b.inertia() * b.w.squaredNorm();
    pe -= b.m * gravity_.dot(b.r);
  }
  return ke + pe + elastic_energy_;
}

Vec3 DemSim::total_momentum() const {
  Vec3 p = Vec3::Zero();
  for (const Body& b : bodies_) p += b.m * b.v;
  return p;
}

Vec3 DemSim::total_angular_momentum(const Vec3& ref) const {
  Vec3 l = Vec3::Zero();
  for (const Body& b : bodies_)
    l += b.inertia() * b.w + (b.r - ref).cross(b.m * b.v);
  return l;
}

namespace {

Trajectory run_recorded(DemSim& sim, int frames, double dt, double radius) {
  Trajectory t;
  t.n = static_cast<int>(sim.bodies().size());
  t.dt = dt;
  t.radius = radius;
  for (const Body& b : sim.bodies()) {
    t.masses.push_back(b.m);
    t.inertias.push_back(b.inertia());
    t.classes.push_back(b.cls);
  }
  const double h = dt / kSubstepsPerFrame;
  for (int f = 0; f < frames; ++f) {
    Frame fr;
    for (const Body& b : sim.bodies()) {
      fr.r.push_back(b.r);
      fr.v.push_back(b.v);
      fr.w.push_back(b.w);
    }
    t.frames.push_back(std::move(fr));
    if (f + 1 < frames) sim.step_frames(kSubstepsPerFrame, h);
  }
  return t;
}

}  // namespace

Trajectory gen_two_sphere_oblique(std::uint64_t seed,
                                  const ObliqueConfig& cfg) {
  Rng rng(seed);
  const double u = uniform(rng, cfg.speed_min, cfg.speed_max);
  const double impact =
      uniform(rng, cfg.impact_min, cfg.impact_max) * 2.0 * cfg.radius;
  const double tilt = uniform(rng, 0.0, 0.5) * impact;  // out-of-plane offset

  Body a, b;
  a.radius = b.radius = cfg.radius;
  a.m = b.m = cfg.mass;
  a.r = Vec3(-0.12, -0.5 * impact, -0.5 * tilt);
  b.r = Vec3(0.12, 0.5 * impact, 0.5 * tilt);
  a.v = Vec3(u, 0.0, 0.0);
  b.v = Vec3(-u, 0.0, 0.0);

  DemSim sim({a, b}, {}, Material{}, Vec3::Zero());
  Trajectory t = run_recorded(sim, cfg.frames, cfg.dt, cfg.radius);
  t.material = Material{};
  return t;
}

Trajectory gen_confined(std::uint64_t seed, const ConfinedConfig& cfg) {
  Rng rng(seed);
  std::vector<Body> bodies;
  const Vec3 span = cfg.box_hi - cfg.box_lo;
  const double margin = 1.05 * cfg.radius;
  for (int i = 0; i < cfg.n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      Vec3 r;
      for (int k = 0; k < 3; ++k)
        r[k] = cfg.box_lo[k] + margin +
               uniform01(rng) * (span[k] - 2.0 * margin);
      placed = true;
      for (const Body& other : bodies)
        if ((other.r - r).norm() < 2.2 * cfg.radius) {
          placed = false;
          break;
        }
      if (placed) {
        Body b;
        b.radius = cfg.radius;
        b.m = cfg.mass;
        b.r = r;
        for (int k = 0; k < 3; ++k) b.v[k] = cfg.v0 * (2.0 * uniform01(rng) - 1.0);
        bodies.push_back(b);
      }
    }
    if (!placed)
      throw PlacementError("gen_confined: could not place sphere " +
                           std::to_string(i));
  }

  DemSim sim(std::move(bodies), make_box(cfg.box_lo, cfg.box_hi), Material{},
             cfg.gravity);
  Trajectory t = run_recorded(sim, cfg.frames, cfg.dt, cfg.radius);
  t.material = Material{};
  t.boundaries = make_box(cfg.box_lo, cfg.box_hi);
  t.gravity = cfg.gravity;
  return t;
}

Trajectory gen_cylinder_mix(std::uint64_t seed, const CylinderConfig& cfg) {
  Rng rng(seed);
  BoundarySpec drum;
  drum.kind = BoundarySpec::Kind::kCylinder;
  drum.cyl.center = Vec3::Zero();
  drum.cyl.axis = Vec3::UnitY();
  drum.cyl.radius = cfg.cyl_radius;
  drum.cyl.height = cfg.cyl_height;
  drum.cyl.capped = true;
  drum.profile = cfg.profile;

  // Fill the drum bottom-up on a jittered lattice; gravity settles the pile
  // during the opening frames.
  const double spacing = 2.2 * cfg.radius;
  const double jitter = 0.05 * cfg.radius;
  const double margin = 1.1 * cfg.radius + jitter;
  std::vector<Vec3> sites;
  for (double z = -cfg.cyl_radius + margin; z <= cfg.cyl_radius - margin;
       z += spacing)
    for (double y = -0.5 * cfg.cyl_height + margin;
         y <= 0.5 * cfg.cyl_height - margin; y += spacing)
      for (double x = -cfg.cyl_radius + margin; x <= cfg.cyl_radius - margin;
           x += spacing)
        if (std::hypot(x, z) <= cfg.cyl_radius - margin)
          sites.emplace_back(x, y, z);
  std::sort(sites.begin(), sites.end(), [](const Vec3& a, const Vec3& b) {
    if (a.z() != b.z()) return a.z() < b.z();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.x() < b.x();
  });
  if (static_cast<int>(sites.size()) < cfg.n)
    throw PlacementError("gen_cylinder_mix: drum too small for sphere count");
  std::vector<Body> bodies;
  for (int i = 0; i < cfg.n; ++i) {
    Body b;
    b.radius = cfg.radius;
    b.m = cfg.mass;
    b.r = sites[static_cast<size_t>(i)] +
          Vec3(uniform(rng, -jitter, jitter), uniform(rng, -jitter, jitter),
               uniform(rng, -jitter, jitter));
    bodies.push_back(b);
  }

  DemSim sim(std::move(bodies), {drum}, Material{}, cfg.gravity);
  Trajectory t = run_recorded(sim, cfg.frames, cfg.dt, cfg.radius);
  t.material = Material{};
  t.boundaries = {drum};
  t.gravity = cfg.gravity;
  return t;
}

void write_trajectory(std::ostream& out, const Trajectory& t) {
  out << "momnet-traj v1\n";
  out << "n " << t.n << " dt " << format_real(t.dt) << " radius "
      << format_real(t.radius) << '\n';
  out << "gravity " << format_real(t.gravity.x()) << ' '
      << format_real(t.gravity.y()) << ' ' << format_real(t.gravity.z())
      << '\n';
  auto row = [&](const char* tag, const std::vector<double>& xs) {
    out << tag;
    for (double x : xs) out << ' ' << format_real(x);
    out << '\n';
  };
  row("mass", t.masses);
  row("inertia", t.inertias);
  out << "cls";
  for (int c : t.classes) out << ' ' << c;
  out << '\n';
  out << "material kn " << format_real(t.material.base.k_n) << " kt "
      << format_real(t.material.base.k_t) << " e "
      << format_real(t.material.base.e) << " mu "
      << format_real(t.material.base.mu) << '\n';
  for (const auto& [key, p] : t.material.overrides)
    out << "material_override " << key.first << ' ' << key.second << " kn "
        << format_real(p.k_n) << " kt " << format_real(p.k_t) << " e "
        << format_real(p.e) << " mu " << format_real(p.mu) << '\n';
  out << "boundaries " << t.boundaries.size() << '\n';
  write_boundaries(out, t.boundaries);
  out << "frames " << t.frames.size() << '\n';
  for (const Frame& f : t.frames) {
    bool first = true;
    auto emit = [&](const std::vector<Vec3>& xs) {
      for (const Vec3& x : xs)
        for (int k = 0; k < 3; ++k) {
          if (!first) out << ' ';
          first = false;
          out << format_real(x[k]);
        }
    };
    emit(f.r);
    emit(f.v);
    emit(f.w);
    out << '\n';
  }
}

Trajectory read_trajectory(std::istream& in) {
  Trajectory t;
  std::string line, tag;
  if (!std::getline(in, line) || line != "momnet-traj v1")
    throw std::runtime_error("trajectory: bad magic line");
  std::string key;
  in >> key >> t.n >> tag >> t.dt >> tag >> t.radius;
  if (key != "n") throw std::runtime_error("trajectory: expected n");
  in >> tag >> t.gravity.x() >> t.gravity.y() >> t.gravity.z();
  auto read_row = [&](const char* want, std::vector<double>& xs) {
    in >> tag;
    if (tag != want) throw std::runtime_error("trajectory: expected " +
                                              std::string(want));
    xs.resize(static_cast<size_t>(t.n));
    for (double& x : xs) in >> x;
  };
  read_row("mass", t.masses);
  read_row("inertia", t.inertias);
  in >> tag;
  if (tag != "cls") throw std::runtime_error("trajectory: expected cls");
  t.classes.resize(static_cast<size_t>(t.n));
  for (int& c : t.classes) in >> c;

  in >> tag;
  if (tag != "material") throw std::runtime_error("trajectory: expected material");
  in >> tag >> t.material.base.k_n >> tag >> t.material.base.k_t >> tag >>
      t.material.base.e >> tag >> t.material.base.mu;
  while (in >> tag && tag == "material_override") {
    std::pair<int, int> key_pair;
    ContactParams p;
    in >> key_pair.first >> key_pair.second >> tag >> p.k_n >> tag >> p.k_t >>
        tag >> p.e >> tag >> p.mu;
    t.material.overrides.emplace_back(key_pair, p);
  }
  if (tag != "boundaries") throw std::runtime_error("trajectory: expected boundaries");
  size_t nb = 0;
  in >> nb;
  std::getline(in, line);
  std::string btext;
  for (size_t k = 0; k < nb; ++k) {
    std::getline(in, line);
    btext += line + '\n';
  }
  std::istringstream bs(btext);
  t.boundaries = read_boundaries(bs);

  in >> tag;
  if (tag != "frames") throw std::runtime_error("trajectory: expected frames");
  size_t nf = 0;
  in >> nf;
  for (size_t f = 0; f < nf; ++f) {
    Frame fr;
    fr.r.resize(static_cast<size_t>(t.n));
    fr.v.resize(static_cast<size_t>(t.n));
    fr.w.resize(static_cast<size_t>(t.n));
    auto slurp = [&](std::vector<Vec3>& xs) {
      for (Vec3& x : xs)
        if (!(in >> x.x() >> x.y() >> x.z()))
          throw std::runtime_error("trajectory: short frame record");
    };
    slurp(fr.r);
    slurp(fr.v);
    slurp(fr.w);
    t.frames.push_back(std::move(fr));
  }
  return t;
}

void save_trajectory(const std::string& path, const Trajectory& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_trajectory(out, t);
}

Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_trajectory(in);
}

}  // namespace momnet
