#include "momnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace momnet {

namespace {

std::vector<NodeState> frame_nodes(const Trajectory& t, int frame) {
  std::vector<NodeState> nodes(static_cast<size_t>(t.n));
  const Frame& cur = t.frames[static_cast<size_t>(frame)];
  const Frame& prev = t.frames[static_cast<size_t>(frame - 1)];
  for (int i = 0; i < t.n; ++i) {
    NodeState& n = nodes[static_cast<size_t>(i)];
    n.r = cur.r[static_cast<size_t>(i)];
    n.v_t = cur.v[static_cast<size_t>(i)];
    n.w_t = cur.w[static_cast<size_t>(i)];
    n.v_tm1 = prev.v[static_cast<size_t>(i)];
    n.w_tm1 = prev.w[static_cast<size_t>(i)];
    n.alpha = VectorXd::Zero(1);
  }
  return nodes;
}

void fisher_yates(std::vector<int>& xs, Rng& rng) {
  for (size_t i = xs.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(xs[i - 1], xs[j]);
  }
}

}  // namespace

Dataset make_dataset(const std::vector<Trajectory>& trajs, double d_c,
                     double val_split) {
  Dataset out;
  if (trajs.empty()) throw std::invalid_argument("make_dataset: no trajectories");
  out.dt = trajs.front().dt;

  for (int ti = 0; ti < static_cast<int>(trajs.size()); ++ti) {
    const Trajectory& t = trajs[static_cast<size_t>(ti)];
    if (t.frames.size() < 3)
      throw std::invalid_argument("make_dataset: trajectory " +
                                  std::to_string(ti) + " has < 3 frames");
    const int last = static_cast<int>(t.frames.size()) - 2;
    for (int f = 1; f <= last; ++f) {
      Sample s;
      GraphMeta meta;
      meta.dt = t.dt;
      meta.body_radius = t.radius;
      s.graph = assemble_graph(frame_nodes(t, f), t.boundaries, d_c, meta,
                               t.dt * static_cast<double>(f));
      const Frame& cur = t.frames[static_cast<size_t>(f)];
      const Frame& nxt = t.frames[static_cast<size_t>(f + 1)];
      for (int i = 0; i < t.n; ++i) {
        s.dv.push_back(nxt.v[static_cast<size_t>(i)] - cur.v[static_cast<size_t>(i)]);
        s.dw.push_back(nxt.w[static_cast<size_t>(i)] - cur.w[static_cast<size_t>(i)]);
        s.dx.push_back(nxt.r[static_cast<size_t>(i)] - cur.r[static_cast<size_t>(i)]);
      }
      s.traj = ti;
      s.frame = f;
      out.samples.push_back(std::move(s));
    }
  }

  // Split by whole trajectories so validation never shares a trajectory
  // with training; one trajectory falls back to a tail split.
  const int ntraj = static_cast<int>(trajs.size());
  std::vector<char> is_val_traj(static_cast<size_t>(ntraj), 0);
  if (val_split > 0.0 && ntraj > 1) {
    const int nval = std::max(
        1, static_cast<int>(std::lround(val_split * static_cast<double>(ntraj))));
    for (int k = ntraj - nval; k < ntraj; ++k)
      is_val_traj[static_cast<size_t>(k)] = 1;
  }
  for (int k = 0; k < static_cast<int>(out.samples.size()); ++k) {
    const Sample& s = out.samples[static_cast<size_t>(k)];
    bool val = is_val_traj[static_cast<size_t>(s.traj)] != 0;
    if (val_split > 0.0 && ntraj == 1) {
      const int cut = static_cast<int>(
          (1.0 - val_split) * static_cast<double>(out.samples.size()));
      val = k >= cut;
    }
    (val ? out.val_idx : out.train_idx).push_back(k);
  }
  if (out.train_idx.empty())
    throw std::invalid_argument("make_dataset: empty training split");

  // Feature maxima over the training split.
  double vmax = 0.0, wmax = 0.0, dxmax = 0.0;
  for (int k : out.train_idx) {
    const Sample& s = out.samples[static_cast<size_t>(k)];
    for (const NodeState& n : s.graph.nodes) {
      vmax = std::max({vmax, n.v_t.norm(), n.v_tm1.norm()});
      wmax = std::max({wmax, n.w_t.norm(), n.w_tm1.norm()});
    }
    for (const auto& [a, b] : s.graph.edges)
      dxmax = std::max(dxmax, (s.graph.nodes[static_cast<size_t>(a)].r -
                               s.graph.nodes[static_cast<size_t>(b)].r)
                                  .norm());
  }
  out.norm.v_scale = vmax > 0.0 ? vmax : 1.0;
  out.norm.w_scale = wmax > 0.0 ? wmax : 1.0;
  out.norm.dx_scale = dxmax > 0.0 ? dxmax : 1.0;

  for (Sample& s : out.samples) {
    normalize(s.graph, out.norm);
    for (Vec3& v : s.dv) v /= out.norm.v_scale;
    for (Vec3& w : s.dw) w /= out.norm.w_scale;
    for (Vec3& x : s.dx) x /= out.norm.dx_scale;
  }
  return out;
}

Slot attach_loss(Tape& tape, const ForwardResult& fwd, const Sample& sample,
                 const LossWeights& weights) {
  const size_t n = fwd.dv_slots.size();
  if (n != sample.dv.size())
    throw std::invalid_argument("attach_loss: node count mismatch");
  if (n == 0) throw std::invalid_argument("attach_loss: no physical nodes");
  auto family = [&](const std::vector<Slot>& slots,
                    const std::vector<Vec3>& targets, double w) {
    std::vector<Slot> sq;
    sq.reserve(n);
    for (size_t k = 0; k < n; ++k) {
      const Slot d = tape.sub(slots[k], tape.input3(targets[k]));
      sq.push_back(tape.dot(d, d));
    }
    return tape.scale(tape.add_n(sq), w / (3.0 * static_cast<double>(n)));
  };
  return tape.add_n({family(fwd.dv_slots, sample.dv, weights.v),
                     family(fwd.dw_slots, sample.dw, weights.w),
                     family(fwd.dx_slots, sample.dx, weights.x)});
}

double eval_loss(Model& m, const Dataset& data, const std::vector<int>& idx,
                 const LossWeights& weights) {
  if (idx.empty()) return 0.0;
  double total = 0.0;
  for (int k : idx) {
    const Sample& s = data.samples[static_cast<size_t>(k)];
    Tape tape(&m.params);
    ForwardOptions opt;
    opt.dt = data.dt;
    const ForwardResult fwd = model_forward(m, s.graph, tape, opt);
    total += tape.val1(attach_loss(tape, fwd, s, weights));
  }
  return total / static_cast<double>(idx.size());
}

namespace {

// Architectural conservation identities on one sample; these hold for any
// parameter values, so a violation is a wiring bug and aborts training.
void conservation_spot_check(Model& m, const Dataset& data, const Sample& s,
                             TrainResult& result) {
  Tape tape(&m.params);
  ForwardOptions opt;
  opt.dt = data.dt;
  opt.want_diagnostics = true;
  opt.lambda_override = 1.0;
  opt.external = false;
  const ForwardResult fwd = model_forward(m, s.graph, tape, opt);

  for (const StepDiag& step : fwd.steps) {
    Vec3 lin = Vec3::Zero();
    Vec3 ang = Vec3::Zero();
    double scale = 0.0;
    for (size_t i = 0; i < step.dv.size(); ++i) {
      if (s.graph.nodes[i].ghost) continue;
      lin += step.dv[i] / fwd.mass_inv[i];
      ang += step.dw[i] / fwd.inertia_inv[i] +
             step.r[i].cross(step.dv[i] / fwd.mass_inv[i]);
    }
    for (const PairDiag& p : step.pairs) {
      scale = std::max(scale, p.angular.norm());
      scale = std::max(scale, p.tau_ij.norm());
      scale = std::max(scale, p.force.norm());
    }
    // Ghost edges leak momentum into walls by design; only check closed
    // graphs (no ghosts with edges).
    bool has_ghost_edges = false;
    for (const PairDiag& p : step.pairs)
      if (s.graph.nodes[static_cast<size_t>(p.i)].ghost ||
          s.graph.nodes[static_cast<size_t>(p.j)].ghost)
        has_ghost_edges = true;
    if (has_ghost_edges) return;
    const double ref = std::max(scale, 1e-300);
    result.worst_lin_residual =
        std::max(result.worst_lin_residual, lin.norm() / ref);
    result.worst_ang_residual =
        std::max(result.worst_ang_residual, ang.norm() / ref);
    if (lin.norm() / ref > 1e-8 || ang.norm() / ref > 1e-7)
      throw std::logic_error("conservation identity violated during training");
  }
}

}  // namespace

TrainResult train(Model& m, const Dataset& data, const TrainConfig& cfg,
                  std::ostream* log) {
  if (data.train_idx.empty())
    throw std::invalid_argument("train: empty dataset");
  TrainResult result;
  OptimState optim = make_optim(m.params, cfg.lr);
  Rng rng(cfg.seed);

  std::vector<MatrixXd> best;
  result.best_val = std::numeric_limits<double>::infinity();

  std::vector<int> order = data.train_idx;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    fisher_yates(order, rng);
    const int take = cfg.samples_per_epoch > 0
                         ? std::min<int>(cfg.samples_per_epoch,
                                         static_cast<int>(order.size()))
                         : static_cast<int>(order.size());
    double epoch_loss = 0.0;
    int seen = 0;
    for (int at = 0; at < take; at += cfg.batch) {
      const int bsz = std::min(cfg.batch, take - at);
      m.params.zero_grad();
      double batch_loss = 0.0;
      for (int b = 0; b < bsz; ++b) {
        const Sample& s = data.samples[static_cast<size_t>(
            order[static_cast<size_t>(at + b)])];
        const Sample* use = &s;
        Sample jittered;
        if (cfg.noise > 0.0) {
          jittered = s;
          for (NodeState& node : jittered.graph.nodes) {
            if (node.ghost) continue;
            for (int k = 0; k < 3; ++k) {
              node.v_t[k] += cfg.noise * normal01(rng);
              node.w_t[k] += cfg.noise * normal01(rng);
            }
          }
          use = &jittered;
        }
        Tape tape(&m.params);
        ForwardOptions opt;
        opt.dt = data.dt;
        const ForwardResult fwd = model_forward(m, use->graph, tape, opt);
        const Slot loss = attach_loss(tape, fwd, *use, cfg.weights);
        batch_loss += tape.val1(loss);
        tape.backward(loss);
      }
      if (!std::isfinite(batch_loss))
        throw TrainingDivergedError("loss is not finite at epoch " +
                                    std::to_string(epoch));
      m.params.scale_grad(1.0 / static_cast<double>(bsz));
      const double gn = m.params.grad_norm();
      if (cfg.clip > 0.0 && gn > cfg.clip) m.params.scale_grad(cfg.clip / gn);
      adam_step(m.params, optim);
      epoch_loss += batch_loss;
      seen += bsz;
    }
    epoch_loss /= static_cast<double>(std::max(seen, 1));
    result.train_loss.push_back(epoch_loss);

    conservation_spot_check(
        m, data, data.samples[static_cast<size_t>(order.front())], result);

    const double val = data.val_idx.empty()
                           ? epoch_loss
                           : eval_loss(m, data, data.val_idx, cfg.weights);
    result.val_loss.push_back(val);
    if (val < result.best_val) {
      result.best_val = val;
      result.best_epoch = epoch;
      best.clear();
      for (int i = 0; i < m.params.count(); ++i)
        best.push_back(m.params.at(i).value);
    }
    if (log && (epoch % std::max(1, cfg.log_every) == 0 ||
                epoch + 1 == cfg.epochs))
      (*log) << "epoch " << epoch << " train " << epoch_loss << " val " << val
             << '\n';
  }

  if (!best.empty())
    for (int i = 0; i < m.params.count(); ++i)
      m.params.at(i).value = best[static_cast<size_t>(i)];
  return result;
}

void write_history_csv(std::ostream& out, const TrainResult& r) {
  out << "epoch,train_loss,val_loss\n";
  for (size_t e = 0; e < r.train_loss.size(); ++e)
    out << e << ',' << format_real(r.train_loss[e]) << ','
        << format_real(r.val_loss[e]) << '\n';
}

}  // namespace momnet
