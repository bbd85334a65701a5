#include "momnet/model.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace momnet {

namespace {

std::vector<int> mlp_widths(int in, int hidden, int layers, int out) {
  std::vector<int> w{in};
  for (int k = 0; k < layers; ++k) w.push_back(hidden);
  w.push_back(out);
  return w;
}

// Tape-side edge frame. Mirrors frames.cpp operation for operation so the
// differentiable path and the plain geometry agree bit for bit.
struct TapeFrame {
  Slot a, b, c;
};

TapeFrame build_frame_tape(Tape& t, Slot r_i, Slot r_j, Slot v_i, Slot v_j,
                           Slot w_i, Slot w_j, double eps) {
  const Slot d = t.sub(r_j, r_i);
  const Slot a = t.normalize_safe(d, eps);
  const Slot bp = t.add_n({t.normalize_safe(t.add(v_j, v_i), eps),
                           t.normalize_safe(t.add(w_j, w_i), eps),
                           t.normalize_safe(t.cross(t.sub(v_j, v_i), d), eps),
                           t.normalize_safe(t.cross(t.sub(w_j, w_i), d), eps)});
  const Slot s = t.dot(a, bp);
  const Slot b_par = t.mul_scalar(s, a);
  const Slot b_perp = t.sub(bp, b_par);
  const Slot b = t.normalize_safe(t.cross(b_perp, a), eps);
  const Slot c = t.normalize_safe(t.cross(b_par, b), eps);
  return {a, b, c};
}

// 12 projections of [v, w, v_prev, w_prev] onto the triad; flip projects
// onto the negated triad (receiver side).
Slot project_tape(Tape& t, const TapeFrame& f, Slot v, Slot w, Slot vp,
                  Slot wp, bool flip) {
  Slot a = f.a, b = f.b, c = f.c;
  if (flip) {
    a = t.neg(a);
    b = t.neg(b);
    c = t.neg(c);
  }
  std::vector<Slot> parts;
  parts.reserve(12);
  for (Slot feat : {v, w, vp, wp}) {
    parts.push_back(t.dot(feat, a));
    parts.push_back(t.dot(feat, b));
    parts.push_back(t.dot(feat, c));
  }
  return t.concat(parts);
}

Slot decode_axes(Tape& t, const Mlp& head, Slot eps_edge, const TapeFrame& f) {
  const Slot coef = mlp_forward(head, eps_edge, t);
  return t.add_n({t.mul_scalar(t.slice(coef, 0, 1), f.a),
                  t.mul_scalar(t.slice(coef, 1, 1), f.b),
                  t.mul_scalar(t.slice(coef, 2, 1), f.c)});
}

struct NodeSlots {
  Slot r, v, w, vp, wp;
  Slot h;                  // scalar embedding phi_n(alpha)
  Slot poa_weight;         // softplus(psi_n1)
  Slot mass_inv, inertia_inv;
  Slot external;           // psi_n4(h), when enabled
};

}  // namespace

Model make_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.activation != "silu")
    throw std::invalid_argument("unknown activation '" + cfg.activation + "'");
  if (cfg.steps < 1) throw std::invalid_argument("steps must be >= 1");
  Model m;
  m.cfg = cfg;
  Rng rng(seed);
  const int H = cfg.hidden, L = cfg.hidden_layers;
  m.phi_e1 = make_mlp(m.params, "phi_e1", mlp_widths(12, H, L, H), rng);
  m.phi_e2 = make_mlp(m.params, "phi_e2", mlp_widths(1, H, L, H), rng);
  m.phi_n = make_mlp(m.params, "phi_n", mlp_widths(cfg.alpha_dim, H, L, H), rng);
  m.theta_e = make_mlp(m.params, "theta_e", mlp_widths(H, H, L, H), rng);
  m.ln_gain = m.params.add("theta_ln.gain", MatrixXd::Ones(H, 1));
  m.ln_bias = m.params.add("theta_ln.bias", MatrixXd::Zero(H, 1));
  m.psi_ef = make_mlp(m.params, "psi_ef", mlp_widths(H, H, L, 3), rng);
  m.psi_ea = make_mlp(m.params, "psi_ea", mlp_widths(H, H, L, 3), rng);
  m.psi_el = make_mlp(m.params, "psi_el", mlp_widths(H, H, L, 1), rng);
  m.psi_n1 = make_mlp(m.params, "psi_n1", mlp_widths(H, H, L, 1), rng);
  m.psi_n2 = make_mlp(m.params, "psi_n2", mlp_widths(H, H, L, 1), rng);
  m.psi_n3 = make_mlp(m.params, "psi_n3", mlp_widths(H, H, L, 1), rng);
  m.psi_n4 = make_mlp(m.params, "psi_n4", mlp_widths(H, H, L, 3), rng);
  return m;
}

ForwardResult model_forward(const Model& m, const GraphState& g, Tape& tape,
                            const ForwardOptions& opt) {
  if (!g.normalized)
    throw std::invalid_argument("model_forward: graph must be normalized");
  const int n = static_cast<int>(g.nodes.size());
  const bool external =
      opt.external.has_value() ? *opt.external : m.cfg.external;
  const bool lambda_fixed =
      opt.lambda_override.has_value() || m.cfg.lambda_fixed();
  const double lambda_value = opt.lambda_override.has_value()
                                  ? *opt.lambda_override
                                  : m.cfg.lambda_override;
  const double dt_sub = m.cfg.substep_dt(opt.dt);
  const double eps = m.cfg.frame_eps;

  std::vector<NodeSlots> nodes(static_cast<size_t>(n));
  std::vector<Slot> v0(static_cast<size_t>(n)), r0(static_cast<size_t>(n)),
      w0(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const NodeState& s = g.nodes[static_cast<size_t>(i)];
    NodeSlots& ns = nodes[static_cast<size_t>(i)];
    ns.r = tape.input3(s.r);
    ns.v = tape.input3(s.v_t);
    ns.w = tape.input3(s.w_t);
    ns.vp = tape.input3(s.v_tm1);
    ns.wp = tape.input3(s.w_tm1);
    r0[static_cast<size_t>(i)] = ns.r;
    v0[static_cast<size_t>(i)] = ns.v;
    w0[static_cast<size_t>(i)] = ns.w;
    ns.h = mlp_forward(m.phi_n, tape.input(s.alpha), tape);
    ns.poa_weight = tape.softplus_pos(mlp_forward(m.psi_n1, ns.h, tape));
    ns.mass_inv = tape.softplus_pos(mlp_forward(m.psi_n2, ns.h, tape));
    ns.inertia_inv = tape.softplus_pos(mlp_forward(m.psi_n3, ns.h, tape));
    if (external) ns.external = mlp_forward(m.psi_n4, ns.h, tape);
  }

  // Undirected pairs in sorted order; directed work lists index into these.
  struct Pair {
    int i, j;  // i < j
  };
  std::vector<Pair> pairs;
  for (const auto& [s, r] : g.edges)
    if (s < r) pairs.push_back({s, r});

  // Directed edges as (sender, receiver, pair index). In paired mode only
  // the i->j direction is evaluated and j->i is mirrored exactly.
  struct Directed {
    int s, r, pair;
  };
  std::vector<Directed> work;
  for (int p = 0; p < static_cast<int>(pairs.size()); ++p) {
    work.push_back({pairs[static_cast<size_t>(p)].i,
                    pairs[static_cast<size_t>(p)].j, p});
    if (opt.per_direction)
      work.push_back({pairs[static_cast<size_t>(p)].j,
                      pairs[static_cast<size_t>(p)].i, p});
  }

  // Edge memory per work item, zero-initialized.
  const Slot zero_mem = tape.input(VectorXd::Zero(m.cfg.hidden));
  std::vector<Slot> memory(work.size(), zero_mem);

  ForwardResult out;
  out.mass_inv.resize(static_cast<size_t>(n));
  out.inertia_inv.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.mass_inv[static_cast<size_t>(i)] =
        tape.val1(nodes[static_cast<size_t>(i)].mass_inv);
    out.inertia_inv[static_cast<size_t>(i)] =
        tape.val1(nodes[static_cast<size_t>(i)].inertia_inv);
  }

  const double dx_gain = 0.5 * g.meta.v_scale * dt_sub;

  for (int step = 0; step < m.cfg.steps; ++step) {
    std::vector<std::vector<Slot>> force_in(static_cast<size_t>(n));
    std::vector<std::vector<Slot>> torque_in(static_cast<size_t>(n));
    StepDiag diag;
    if (opt.want_diagnostics) {
      diag.r.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i)
        diag.r[static_cast<size_t>(i)] =
            tape.val3(nodes[static_cast<size_t>(i)].r);
    }

    for (size_t widx = 0; widx < work.size(); ++widx) {
      const Directed& e = work[widx];
      const NodeSlots& snd = nodes[static_cast<size_t>(e.s)];
      const NodeSlots& rcv = nodes[static_cast<size_t>(e.r)];

      const TapeFrame frame = build_frame_tape(tape, snd.r, rcv.r, snd.v,
                                               rcv.v, snd.w, rcv.w, eps);

      const Slot proj_snd =
          project_tape(tape, frame, snd.v, snd.w, snd.vp, snd.wp, false);
      const Slot proj_rcv =
          project_tape(tape, frame, rcv.v, rcv.w, rcv.vp, rcv.wp, true);
      const Slot emb_snd = mlp_forward(m.phi_e1, proj_snd, tape);
      const Slot emb_rcv = mlp_forward(m.phi_e1, proj_rcv, tape);

      const Slot dist = tape.norm(tape.sub(rcv.r, snd.r));
      const Slot edge_emb = mlp_forward(
          m.phi_e2, tape.scale(dist, 1.0 / g.meta.dx_scale), tape);

      // Summands ordered by node index, not by role, so both directions of
      // a pair reduce in the same order and agree bitwise.
      const bool s_first = e.s < e.r;
      const Slot emb_lo = s_first ? emb_snd : emb_rcv;
      const Slot emb_hi = s_first ? emb_rcv : emb_snd;
      const Slot h_lo = s_first ? snd.h : rcv.h;
      const Slot h_hi = s_first ? rcv.h : snd.h;
      const Slot pre =
          tape.add_n({edge_emb, emb_lo, emb_hi, h_lo, h_hi});
      const Slot eps_raw = mlp_forward(m.theta_e, pre, tape);
      const Slot eps_edge = tape.layer_norm(tape.add(eps_raw, memory[widx]),
                                            m.ln_gain, m.ln_bias);
      memory[widx] = eps_edge;

      const Slot force = decode_axes(tape, m.psi_ef, eps_edge, frame);
      const Slot angular = decode_axes(tape, m.psi_ea, eps_edge, frame);
      const Slot lambda = lambda_fixed
                              ? tape.input1(lambda_value)
                              : mlp_forward(m.psi_el, eps_edge, tape);

      const Slot wsum = tape.add(snd.poa_weight, rcv.poa_weight);
      const Slot poa = tape.mul_scalar(
          tape.inv_scalar(wsum),
          tape.add(tape.mul_scalar(snd.poa_weight, snd.r),
                   tape.mul_scalar(rcv.poa_weight, rcv.r)));

      // Spin torque on the receiver: A - lambda (r_r - r0) x F.
      auto spin_torque = [&](Slot a_vec, Slot f_vec, Slot r_node) {
        return tape.sub(
            a_vec, tape.mul_scalar(
                       lambda, tape.cross(tape.sub(r_node, poa), f_vec)));
      };

      const Slot tau_rcv = spin_torque(angular, force, rcv.r);
      force_in[static_cast<size_t>(e.r)].push_back(force);
      torque_in[static_cast<size_t>(e.r)].push_back(tau_rcv);

      Slot tau_snd{-1};
      if (!opt.per_direction) {
        // Mirror the decode for the reverse direction: exact negations.
        const Slot force_rev = tape.neg(force);
        const Slot angular_rev =
            opt.corrupt_angular_sign ? angular : tape.neg(angular);
        tau_snd = spin_torque(angular_rev, force_rev, snd.r);
        force_in[static_cast<size_t>(e.s)].push_back(force_rev);
        torque_in[static_cast<size_t>(e.s)].push_back(tau_snd);
      }

      if (opt.want_diagnostics) {
        const Pair& p = pairs[static_cast<size_t>(e.pair)];
        if (e.s == p.i) {  // record once per pair, receiver j = p.j
          PairDiag pd;
          pd.i = p.i;
          pd.j = p.j;
          pd.force = tape.val3(force);
          pd.angular = tape.val3(angular);
          pd.tau_ij = tape.val3(tau_rcv);
          if (tau_snd.id >= 0) pd.tau_ji = tape.val3(tau_snd);
          pd.r0 = tape.val3(poa);
          pd.lambda = tape.val1(lambda);
          diag.pairs.push_back(pd);
        } else if (opt.per_direction && !diag.pairs.empty()) {
          // The reverse direction of the pair recorded just before.
          PairDiag& pd = diag.pairs.back();
          pd.tau_ji = tape.val3(tau_rcv);
          pd.force_rev = tape.val3(force);
          pd.angular_rev = tape.val3(angular);
          pd.r0_rev = tape.val3(poa);
          pd.lambda_rev = tape.val1(lambda);
        }
      }
    }

    for (int i = 0; i < n; ++i) {
      NodeSlots& ns = nodes[static_cast<size_t>(i)];
      if (g.nodes[static_cast<size_t>(i)].ghost) {
        // Ghosts keep the wall-prescribed state at every substep.
        if (opt.want_diagnostics) {
          diag.dv.push_back(Vec3::Zero());
          diag.dw.push_back(Vec3::Zero());
        }
        continue;
      }
      auto& fin = force_in[static_cast<size_t>(i)];
      auto& tin = torque_in[static_cast<size_t>(i)];
      Slot dv = fin.empty()
                    ? tape.input3(Vec3::Zero())
                    : tape.mul_scalar(ns.mass_inv, tape.add_n(fin));
      if (external) dv = tape.add(dv, ns.external);
      const Slot dw = tin.empty()
                          ? tape.input3(Vec3::Zero())
                          : tape.mul_scalar(ns.inertia_inv, tape.add_n(tin));
      const Slot v_new = tape.add(ns.v, dv);
      const Slot w_new = tape.add(ns.w, dw);
      const Slot dx = tape.scale(tape.add(ns.v, v_new), dx_gain);
      if (opt.want_diagnostics) {
        diag.dv.push_back(tape.val3(dv));
        diag.dw.push_back(tape.val3(dw));
      }
      ns.vp = ns.v;
      ns.wp = ns.w;
      ns.v = v_new;
      ns.w = w_new;
      ns.r = tape.add(ns.r, dx);
    }
    if (opt.want_diagnostics) out.steps.push_back(std::move(diag));
  }

  out.dv_hat.resize(static_cast<size_t>(n), Vec3::Zero());
  out.dw_hat.resize(static_cast<size_t>(n), Vec3::Zero());
  out.dx.resize(static_cast<size_t>(n), Vec3::Zero());
  for (int i = 0; i < n; ++i) {
    if (g.nodes[static_cast<size_t>(i)].ghost) continue;
    NodeSlots& ns = nodes[static_cast<size_t>(i)];
    const Slot dv = tape.sub(ns.v, v0[static_cast<size_t>(i)]);
    const Slot dw = tape.sub(ns.w, w0[static_cast<size_t>(i)]);
    const Slot dxr = tape.sub(ns.r, r0[static_cast<size_t>(i)]);
    out.dv_hat[static_cast<size_t>(i)] = tape.val3(dv);
    out.dw_hat[static_cast<size_t>(i)] = tape.val3(dw);
    out.dx[static_cast<size_t>(i)] = tape.val3(dxr);
    if (i < g.n_physical) {
      out.dv_slots.push_back(dv);
      out.dw_slots.push_back(dw);
      out.dx_slots.push_back(tape.scale(dxr, 1.0 / g.meta.dx_scale));
    }
  }
  return out;
}

namespace {

std::string dt_mode_name(ModelConfig::DtMode m) {
  return m == ModelConfig::DtMode::kSplit ? "split" : "full";
}

}  // namespace

void write_model(std::ostream& out, const Model& m, const Normalizer& n) {
  out << "momnet-checkpoint v1\n";
  out << "config hidden " << m.cfg.hidden << " hidden_layers "
      << m.cfg.hidden_layers << " steps " << m.cfg.steps << " alpha_dim "
      << m.cfg.alpha_dim << " external " << (m.cfg.external ? 1 : 0)
      << " lambda "
      << (m.cfg.lambda_fixed() ? format_real(m.cfg.lambda_override)
                               : std::string("learned"))
      << " dt_mode " << dt_mode_name(m.cfg.dt_mode) << " activation "
      << m.cfg.activation << " frame_eps " << format_real(m.cfg.frame_eps)
      << '\n';
  out << "normalizer v " << format_real(n.v_scale) << " w "
      << format_real(n.w_scale) << " dx " << format_real(n.dx_scale) << '\n';
  out << "tensors " << m.params.count() << '\n';
  write_params(out, m.params);
}

Model read_model(std::istream& in, Normalizer& n) {
  std::string line;
  if (!std::getline(in, line) || line != "momnet-checkpoint v1")
    throw std::runtime_error("checkpoint: bad magic line");
  ModelConfig cfg;
  std::string tag, lambda, dt_mode;
  int ext = 0;
  in >> tag >> tag >> cfg.hidden >> tag >> cfg.hidden_layers >> tag >>
      cfg.steps >> tag >> cfg.alpha_dim >> tag >> ext >> tag >> lambda >>
      tag >> dt_mode >> tag >> cfg.activation >> tag >> cfg.frame_eps;
  cfg.external = ext != 0;
  if (lambda != "learned") cfg.lambda_override = std::stod(lambda);
  cfg.dt_mode = dt_mode == "full" ? ModelConfig::DtMode::kFull
                                  : ModelConfig::DtMode::kSplit;
  in >> tag >> tag >> n.v_scale >> tag >> n.w_scale >> tag >> n.dx_scale;
  int tensors = 0;
  in >> tag >> tensors;
  Model m = make_model(cfg, 0);
  if (tensors != m.params.count())
    throw std::runtime_error("checkpoint: tensor count mismatch");
  read_params(in, m.params);
  return m;
}

void save_model(const std::string& path, const Model& m, const Normalizer& n) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_model(out, m, n);
}

Model load_model(const std::string& path, Normalizer& n) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_model(in, n);
}

}  // namespace momnet
