#include "momnet/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "momnet/nn.hpp"

namespace momnet {

RolloutResult rollout(Model& m, const Normalizer& norm,
                      const Trajectory& scene, const RolloutOptions& opt) {
  if (scene.frames.size() < 2)
    throw std::invalid_argument("rollout: need two consecutive initial frames");
  const int n = scene.n;
  const double dt = scene.dt;
  const double d_c = opt.d_c > 0.0 ? opt.d_c : 1.25 * 2.0 * scene.radius;

  std::vector<Vec3> r = scene.frames[1].r, v = scene.frames[1].v,
                    w = scene.frames[1].w;
  std::vector<Vec3> v_prev = scene.frames[0].v, w_prev = scene.frames[0].w;
  double time = dt;

  RolloutResult out;
  out.pred = scene;
  out.pred.frames.clear();

  for (int step = 0; step < opt.horizon; ++step) {
    std::vector<NodeState> nodes(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      NodeState& node = nodes[static_cast<size_t>(i)];
      node.r = r[static_cast<size_t>(i)];
      node.v_t = v[static_cast<size_t>(i)];
      node.w_t = w[static_cast<size_t>(i)];
      node.v_tm1 = v_prev[static_cast<size_t>(i)];
      node.w_tm1 = w_prev[static_cast<size_t>(i)];
      node.alpha = VectorXd::Zero(1);
    }
    GraphMeta meta;
    meta.dt = dt;
    meta.body_radius = scene.radius;
    GraphState g =
        assemble_graph(std::move(nodes), scene.boundaries, d_c, meta, time);
    normalize(g, norm);

    Tape tape(&m.params);
    ForwardOptions fopt;
    fopt.dt = dt;
    fopt.lambda_override = opt.lambda_override;
    fopt.external = opt.external;
    fopt.want_diagnostics = opt.want_residuals || opt.want_pair_diagnostics;
    const ForwardResult fwd = model_forward(m, g, tape, fopt);

    if (opt.want_residuals) {
      Vec3 lin = Vec3::Zero();
      double ang = 0.0;
      for (int i = 0; i < n; ++i)
        lin += fwd.dv_hat[static_cast<size_t>(i)] /
               fwd.mass_inv[static_cast<size_t>(i)];
      for (const StepDiag& sd : fwd.steps) {
        Vec3 a = Vec3::Zero();
        double scale = 0.0;
        for (int i = 0; i < n; ++i) {
          a += sd.dw[static_cast<size_t>(i)] /
                   fwd.inertia_inv[static_cast<size_t>(i)] +
               sd.r[static_cast<size_t>(i)].cross(
                   sd.dv[static_cast<size_t>(i)] /
                   fwd.mass_inv[static_cast<size_t>(i)]);
        }
        for (const PairDiag& p : sd.pairs)
          scale = std::max({scale, p.angular.norm(), p.tau_ij.norm(),
                            (p.r0 - sd.r[static_cast<size_t>(p.j)])
                                    .cross(p.force)
                                    .norm()});
        ang = std::max(ang, a.norm() / std::max(scale, 1e-300));
      }
      out.lin_residual.push_back(lin.norm());
      out.ang_residual.push_back(ang);
    }
    if (opt.want_pair_diagnostics && !fwd.steps.empty())
      out.frame_pairs.push_back(fwd.steps.back().pairs);

    for (int i = 0; i < n; ++i) {
      v_prev[static_cast<size_t>(i)] = v[static_cast<size_t>(i)];
      w_prev[static_cast<size_t>(i)] = w[static_cast<size_t>(i)];
      v[static_cast<size_t>(i)] +=
          norm.v_scale * fwd.dv_hat[static_cast<size_t>(i)];
      w[static_cast<size_t>(i)] +=
          norm.w_scale * fwd.dw_hat[static_cast<size_t>(i)];
      r[static_cast<size_t>(i)] += fwd.dx[static_cast<size_t>(i)];
    }
    time += dt;

    Frame f;
    f.r = r;
    f.v = v;
    f.w = w;
    out.pred.frames.push_back(std::move(f));
    ++out.frames_completed;

    double vmax = 0.0;
    for (int i = 0; i < n; ++i)
      vmax = std::max(vmax, v[static_cast<size_t>(i)].norm());
    if (vmax > opt.blowup_factor * norm.v_scale) {
      out.early_stopped = true;
      break;
    }
  }
  return out;
}

bool is_retained(const Vec3& r, double radius,
                 const std::vector<BoundarySpec>& boundaries) {
  for (const BoundarySpec& b : boundaries) {
    if (b.kind == BoundarySpec::Kind::kPlane) {
      if ((r - b.plane.point).dot(b.plane.normal) > radius) return false;
    } else {
      const Vec3 rel = r - b.cyl.center;
      const double axial = rel.dot(b.cyl.axis);
      const double rho = (rel - axial * b.cyl.axis).norm();
      if (rho > b.cyl.radius + radius) return false;
      if (b.cyl.capped && std::abs(axial) > 0.5 * b.cyl.height + radius)
        return false;
    }
  }
  return true;
}

double surface_slope(const std::vector<Vec3>& positions, int bins) {
  if (positions.empty()) return 0.0;
  double xmin = positions.front().x(), xmax = xmin;
  for (const Vec3& p : positions) {
    xmin = std::min(xmin, p.x());
    xmax = std::max(xmax, p.x());
  }
  if (xmax - xmin < 1e-12) return 0.0;
  std::vector<double> top(static_cast<size_t>(bins),
                          -std::numeric_limits<double>::infinity());
  for (const Vec3& p : positions) {
    int k = static_cast<int>(static_cast<double>(bins) * (p.x() - xmin) /
                             (xmax - xmin));
    k = std::clamp(k, 0, bins - 1);
    top[static_cast<size_t>(k)] = std::max(top[static_cast<size_t>(k)], p.z());
  }
  // Least squares z = s x + b over nonempty bin centers.
  double sx = 0, sz = 0, sxx = 0, sxz = 0;
  int m = 0;
  for (int k = 0; k < bins; ++k) {
    if (!std::isfinite(top[static_cast<size_t>(k)])) continue;
    const double x =
        xmin + (static_cast<double>(k) + 0.5) * (xmax - xmin) /
                   static_cast<double>(bins);
    sx += x;
    sz += top[static_cast<size_t>(k)];
    sxx += x * x;
    sxz += x * top[static_cast<size_t>(k)];
    ++m;
  }
  if (m < 2) return 0.0;
  const double denom = static_cast<double>(m) * sxx - sx * sx;
  if (std::abs(denom) < 1e-12) return 0.0;
  return std::atan((static_cast<double>(m) * sxz - sx * sz) / denom);
}

MetricSeries compute_metrics(const Trajectory& traj, const Vec3& ref,
                             bool want_slope) {
  MetricSeries s;
  double mass_total = 0.0;
  for (double mval : traj.masses) mass_total += mval;
  for (const Frame& f : traj.frames) {
    double ke = 0.0, ke_t = 0.0;
    Vec3 p = Vec3::Zero(), l = Vec3::Zero();
    int kept = 0;
    std::vector<Vec3> kept_pos;
    for (int i = 0; i < traj.n; ++i) {
      const double mi = traj.masses[static_cast<size_t>(i)];
      const double ii = traj.inertias[static_cast<size_t>(i)];
      const Vec3& r = f.r[static_cast<size_t>(i)];
      const Vec3& v = f.v[static_cast<size_t>(i)];
      const Vec3& w = f.w[static_cast<size_t>(i)];
      ke_t += 0.5 * mi * v.squaredNorm();
      ke += 0.5 * mi * v.squaredNorm() + 0.5 * ii * w.squaredNorm();
      p += mi * v;
      l += ii * w + (r - ref).cross(mi * v);
      if (is_retained(r, traj.radius, traj.boundaries)) {
        ++kept;
        kept_pos.push_back(r);
      }
    }
    s.ke.push_back(ke / mass_total);
    s.ke_trans.push_back(ke_t / mass_total);
    s.p.push_back(p / mass_total);
    s.l.push_back(l);
    s.retained.push_back(kept);
    if (want_slope) s.slope.push_back(surface_slope(kept_pos));
  }
  return s;
}

void write_metrics_csv(std::ostream& out, const MetricSeries& s) {
  out << "frame,ke,px,py,pz,lx,ly,lz,retained,slope,ke_trans\n";
  for (size_t f = 0; f < s.ke.size(); ++f) {
    out << f << ',' << format_real(s.ke[f]) << ',' << format_real(s.p[f].x())
        << ',' << format_real(s.p[f].y()) << ',' << format_real(s.p[f].z())
        << ',' << format_real(s.l[f].x()) << ',' << format_real(s.l[f].y())
        << ',' << format_real(s.l[f].z()) << ',' << s.retained[f] << ',';
    out << (f < s.slope.size() ? format_real(s.slope[f]) : "");
    out << ',' << format_real(s.ke_trans[f]) << '\n';
  }
}

namespace {

template <typename Get>
MetricCompare compare_scalar(size_t n, Get&& get) {
  MetricCompare c;
  double sum = 0.0;
  for (size_t f = 0; f < n; ++f) {
    const double d = get(f);
    sum += d * d;
    c.max_dev = std::max(c.max_dev, std::abs(d));
  }
  c.rmse = n > 0 ? std::sqrt(sum / static_cast<double>(n)) : 0.0;
  return c;
}

}  // namespace

CompareReport compare_series(const MetricSeries& pred,
                             const MetricSeries& truth) {
  if (pred.ke.size() != truth.ke.size())
    throw std::invalid_argument("compare_series: length mismatch");
  const size_t n = pred.ke.size();
  CompareReport r;
  r.ke = compare_scalar(n, [&](size_t f) { return pred.ke[f] - truth.ke[f]; });
  r.p = compare_scalar(n,
                       [&](size_t f) { return (pred.p[f] - truth.p[f]).norm(); });
  r.l = compare_scalar(n,
                       [&](size_t f) { return (pred.l[f] - truth.l[f]).norm(); });
  r.retained = compare_scalar(n, [&](size_t f) {
    return static_cast<double>(pred.retained[f] - truth.retained[f]);
  });
  if (!pred.slope.empty() && pred.slope.size() == truth.slope.size())
    r.slope = compare_scalar(
        n, [&](size_t f) { return pred.slope[f] - truth.slope[f]; });
  return r;
}

void write_compare_csv(std::ostream& out, const CompareReport& r) {
  out << "metric,rmse,max_dev\n";
  auto row = [&](const char* name, const MetricCompare& c) {
    out << name << ',' << format_real(c.rmse) << ',' << format_real(c.max_dev)
        << '\n';
  };
  row("ke", r.ke);
  row("p", r.p);
  row("l", r.l);
  row("retained", r.retained);
  if (r.slope) row("slope", *r.slope);
}

void write_pair_diagnostics(std::ostream& out,
                            const std::vector<std::vector<PairDiag>>& frames) {
  out << "frame i j fx fy fz ax ay az tx ty tz r0x r0y r0z lambda\n";
  for (size_t f = 0; f < frames.size(); ++f)
    for (const PairDiag& p : frames[f]) {
      out << f << ' ' << p.i << ' ' << p.j;
      for (const Vec3* v : {&p.force, &p.angular, &p.tau_ij, &p.r0})
        out << ' ' << format_real(v->x()) << ' ' << format_real(v->y()) << ' '
            << format_real(v->z());
      out << ' ' << format_real(p.lambda) << '\n';
    }
}

}  // namespace momnet
