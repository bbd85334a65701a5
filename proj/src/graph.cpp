#include "momnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "momnet/nn.hpp"

namespace momnet {

double OmegaProfile::at(double time) const {
  if (t.empty()) throw std::logic_error("empty omega profile");
  if (time <= t.front()) return w.front();
  if (time >= t.back()) return w.back();
  for (size_t k = 1; k < t.size(); ++k) {
    if (time <= t[k]) {
      const double f = (time - t[k - 1]) / (t[k] - t[k - 1]);
      return w[k - 1] + f * (w[k] - w[k - 1]);
    }
  }
  return w.back();
}

Vec3 BoundarySpec::rotation_center() const {
  return kind == Kind::kPlane ? plane.point : cyl.center;
}

Vec3 BoundarySpec::omega_at(double time) const {
  if (kind == Kind::kCylinder && !profile.empty())
    return profile.at(time) * cyl.axis;
  return motion.omega;
}

bool BoundarySpec::moving() const {
  if (motion.linear.norm() > 0.0 || motion.omega.norm() > 0.0) return true;
  return kind == Kind::kCylinder && !profile.empty();
}

std::vector<std::pair<int, int>> build_edges(
    const std::vector<NodeState>& nodes, double d_c) {
  if (d_c <= 0.0) throw std::invalid_argument("build_edges: d_c must be > 0");
  std::vector<std::pair<int, int>> edges;
  const int n = static_cast<int>(nodes.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const NodeState& a = nodes[static_cast<size_t>(i)];
      const NodeState& b = nodes[static_cast<size_t>(j)];
      bool eligible = false;
      if (!a.ghost && !b.ghost) {
        eligible = true;
      } else if (a.ghost != b.ghost) {
        // ghost-host pairs only; ghosts see no other node
        const int host = a.ghost ? a.host : b.host;
        const int phys = a.ghost ? j : i;
        eligible = (host == phys);
      }
      if (!eligible) continue;
      if ((a.r - b.r).norm() <= d_c) {
        edges.emplace_back(i, j);
        edges.emplace_back(j, i);
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

Vec3 reflect_plane(const Vec3& r, const Plane& p) {
  return r - 2.0 * ((r - p.point).dot(p.normal)) * p.normal;
}

std::vector<Vec3> reflect_cylinder(const Vec3& r, const Cylinder& c) {
  const Vec3 rel = r - c.center;
  const double axial = rel.dot(c.axis);
  const Vec3 radial = rel - axial * c.axis;
  const double rho = radial.norm();
  if (rho >= c.radius)
    throw std::invalid_argument("reflect_cylinder: point not inside radius");

  std::vector<Vec3> out;
  if (rho >= kNormEps) {
    // Mirror across the tangent plane at the nearest wall point.
    out.push_back(r + (2.0 * (c.radius - rho) / rho) * radial);
  }
  if (c.capped) {
    const Vec3 bottom = c.center - 0.5 * c.height * c.axis;
    const Vec3 top = c.center + 0.5 * c.height * c.axis;
    out.push_back(reflect_plane(r, Plane{bottom, -c.axis}));
    out.push_back(reflect_plane(r, Plane{top, c.axis}));
  }
  if (out.empty())
    throw DegenerateReflectionError(
        "reflect_cylinder: point on the axis of an uncapped cylinder");
  return out;
}

std::pair<Vec3, Vec3> ghost_velocity(const Vec3& r_ghost, const BoundarySpec& b,
                                     double time) {
  if (!b.moving()) return {Vec3::Zero(), Vec3::Zero()};
  const Vec3 omega = b.omega_at(time);
  const Vec3 d = r_ghost - b.rotation_center();
  return {Vec3(b.motion.linear + omega.cross(d)), omega};
}

std::vector<NodeState> build_ghosts(const std::vector<NodeState>& nodes,
                                    const std::vector<BoundarySpec>& boundaries,
                                    double d_c, double time, bool prune) {
  std::vector<NodeState> out = nodes;
  for (int bi = 0; bi < static_cast<int>(boundaries.size()); ++bi) {
    const BoundarySpec& b = boundaries[static_cast<size_t>(bi)];
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
      const NodeState& host = nodes[static_cast<size_t>(i)];
      if (host.ghost) continue;
      std::vector<Vec3> mirrors;
      if (b.kind == BoundarySpec::Kind::kPlane) {
        mirrors.push_back(reflect_plane(host.r, b.plane));
      } else {
        mirrors = reflect_cylinder(host.r, b.cyl);
      }
      for (const Vec3& m : mirrors) {
        if (prune && (m - host.r).norm() > d_c) continue;
        NodeState g;
        g.r = m;
        auto [v, w] = ghost_velocity(m, b, time);
        g.v_t = g.v_tm1 = v;
        g.w_t = g.w_tm1 = w;
        g.alpha = VectorXd::Zero(host.alpha.size());
        g.alpha[0] = 1.0;
        g.ghost = true;
        g.host = i;
        g.boundary = bi;
        out.push_back(std::move(g));
      }
    }
  }
  return out;
}

void normalize(GraphState& g, const Normalizer& n) {
  if (g.normalized) throw std::logic_error("graph already normalized");
  if (n.v_scale <= 0.0 || n.w_scale <= 0.0 || n.dx_scale <= 0.0)
    throw std::invalid_argument("normalizer scales must be > 0");
  for (NodeState& node : g.nodes) {
    node.v_t /= n.v_scale;
    node.v_tm1 /= n.v_scale;
    node.w_t /= n.w_scale;
    node.w_tm1 /= n.w_scale;
  }
  g.meta.v_scale = n.v_scale;
  g.meta.w_scale = n.w_scale;
  g.meta.dx_scale = n.dx_scale;
  g.normalized = true;
}

GraphState assemble_graph(std::vector<NodeState> physical,
                          const std::vector<BoundarySpec>& boundaries,
                          double d_c, const GraphMeta& meta, double time) {
  GraphState g;
  g.n_physical = static_cast<int>(physical.size());
  g.nodes = build_ghosts(physical, boundaries, d_c, time, true);
  g.edges = build_edges(g.nodes, d_c);
  g.d_c = d_c;
  g.meta = meta;
  return g;
}

std::vector<BoundarySpec> make_box(const Vec3& lo, const Vec3& hi) {
  std::vector<BoundarySpec> walls;
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      BoundarySpec b;
      b.kind = BoundarySpec::Kind::kPlane;
      Vec3 n = Vec3::Zero();
      n[axis] = side == 0 ? -1.0 : 1.0;
      b.plane.normal = n;
      b.plane.point = side == 0 ? lo : hi;
      walls.push_back(b);
    }
  }
  return walls;
}

namespace {

void write_vec(std::ostream& out, const Vec3& v) {
  out << format_real(v.x()) << ' ' << format_real(v.y()) << ' '
      << format_real(v.z());
}

Vec3 read_vec(std::istream& in) {
  Vec3 v;
  if (!(in >> v.x() >> v.y() >> v.z()))
    throw std::runtime_error("boundary parse: expected 3 reals");
  return v;
}

}  // namespace

void write_boundaries(std::ostream& out,
                      const std::vector<BoundarySpec>& boundaries) {
  for (const BoundarySpec& b : boundaries) {
    if (b.kind == BoundarySpec::Kind::kPlane) {
      out << "plane point ";
      write_vec(out, b.plane.point);
      out << " normal ";
      write_vec(out, b.plane.normal);
    } else {
      out << "cylinder center ";
      write_vec(out, b.cyl.center);
      out << " axis ";
      write_vec(out, b.cyl.axis);
      out << " radius " << format_real(b.cyl.radius) << " height "
          << format_real(b.cyl.height) << " capped " << (b.cyl.capped ? 1 : 0);
    }
    out << " vlin ";
    write_vec(out, b.motion.linear);
    out << " omega ";
    write_vec(out, b.motion.omega);
    if (!b.profile.empty()) {
      out << " profile ";
      for (size_t k = 0; k < b.profile.t.size(); ++k) {
        if (k) out << ',';
        out << format_real(b.profile.t[k]) << ':'
            << format_real(b.profile.w[k]);
      }
    }
    out << '\n';
  }
}

std::vector<BoundarySpec> read_boundaries(std::istream& in) {
  std::vector<BoundarySpec> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    BoundarySpec b;
    if (kind == "plane") {
      b.kind = BoundarySpec::Kind::kPlane;
    } else if (kind == "cylinder") {
      b.kind = BoundarySpec::Kind::kCylinder;
    } else {
      throw std::runtime_error("boundary parse: unknown kind '" + kind + "'");
    }
    std::string key;
    while (ls >> key) {
      if (key == "point") b.plane.point = read_vec(ls);
      else if (key == "normal") b.plane.normal = read_vec(ls);
      else if (key == "center") b.cyl.center = read_vec(ls);
      else if (key == "axis") b.cyl.axis = read_vec(ls);
      else if (key == "radius") ls >> b.cyl.radius;
      else if (key == "height") ls >> b.cyl.height;
      else if (key == "capped") { int c = 0; ls >> c; b.cyl.capped = c != 0; }
      else if (key == "vlin") b.motion.linear = read_vec(ls);
      else if (key == "omega") b.motion.omega = read_vec(ls);
      else if (key == "profile") {
        std::string spec;
        ls >> spec;
        std::istringstream ps(spec);
        std::string item;
        while (std::getline(ps, item, ',')) {
          const auto colon = item.find(':');
          if (colon == std::string::npos)
            throw std::runtime_error("boundary parse: bad profile entry");
          b.profile.t.push_back(std::stod(item.substr(0, colon)));
          b.profile.w.push_back(std::stod(item.substr(colon + 1)));
        }
      } else {
        throw std::runtime_error("boundary parse: unknown key '" + key + "'");
      }
    }
    const double nlen = b.kind == BoundarySpec::Kind::kPlane
                            ? b.plane.normal.norm()
                            : b.cyl.axis.norm();
    if (std::abs(nlen - 1.0) > 1e-12)
      throw std::runtime_error("boundary parse: direction must be unit length");
    if (b.kind == BoundarySpec::Kind::kCylinder && b.cyl.radius <= 0.0)
      throw std::runtime_error("boundary parse: radius must be > 0");
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace momnet
