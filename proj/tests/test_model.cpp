#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "momnet/model.hpp"
#include "momnet/rng.hpp"

using namespace momnet;

namespace {

Vec3 rv(Rng& rng, double s = 1.0) {
  return Vec3(normal01(rng), normal01(rng), normal01(rng)) * s;
}

// Random closed graph (no ghosts) with identity normalization, ready for
// the model. Positions keep a minimum separation; velocities and spins are
// order one.
GraphState random_graph(Rng& rng, int n, double d_c = 1.0) {
  GraphState g;
  for (int i = 0; i < n; ++i) {
    NodeState node;
    bool ok = false;
    while (!ok) {
      node.r = rv(rng, 0.7);
      ok = true;
      for (const NodeState& other : g.nodes)
        if ((other.r - node.r).norm() < 0.2) ok = false;
    }
    node.v_t = rv(rng);
    node.w_t = rv(rng);
    node.v_tm1 = rv(rng);
    node.w_tm1 = rv(rng);
    node.alpha = VectorXd::Zero(1);
    g.nodes.push_back(node);
  }
  g.n_physical = n;
  g.edges = build_edges(g.nodes, d_c);
  g.d_c = d_c;
  g.meta.dt = 1e-3;
  normalize(g, Normalizer{1.0, 1.0, 1.0});
  return g;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.hidden = 16;
  cfg.hidden_layers = 1;
  cfg.steps = 2;
  return cfg;
}

int count_pairs(const GraphState& g) {
  int c = 0;
  for (const auto& [s, r] : g.edges)
    if (s < r) ++c;
  return c;
}

}  // namespace

TEST_CASE("per-direction decode is exactly antisymmetric") {
  Rng rng(1);
  double worst_f = 0.0, worst_a = 0.0, worst_r0 = 0.0, worst_l = 0.0;
  for (int rep = 0; rep < 30; ++rep) {
    Model m = make_model(small_config(), 100 + static_cast<std::uint64_t>(rep));
    GraphState g = random_graph(rng, 4 + static_cast<int>(rng() % 3));
    if (count_pairs(g) == 0) continue;
    Tape tape(&m.params);
    ForwardOptions opt;
    opt.per_direction = true;
    opt.want_diagnostics = true;
    const ForwardResult out = model_forward(m, g, tape, opt);
    for (const StepDiag& sd : out.steps)
      for (const PairDiag& p : sd.pairs) {
        worst_f = std::max(worst_f, (p.force + p.force_rev).norm());
        worst_a = std::max(worst_a, (p.angular + p.angular_rev).norm());
        worst_r0 = std::max(worst_r0, (p.r0 - p.r0_rev).norm());
        worst_l = std::max(worst_l, std::abs(p.lambda - p.lambda_rev));
      }
  }
  CHECK(worst_f == 0.0);  // canonical summand order makes this bitwise
  CHECK(worst_a == 0.0);
  CHECK(worst_r0 == 0.0);
  CHECK(worst_l == 0.0);
}

TEST_CASE("paired pass equals the per-direction pass on physical outputs") {
  Rng rng(2);
  Model m = make_model(small_config(), 5);
  GraphState g = random_graph(rng, 5);
  Tape t1(&m.params), t2(&m.params);
  ForwardOptions a, b;
  b.per_direction = true;
  const ForwardResult ra = model_forward(m, g, t1, a);
  const ForwardResult rb = model_forward(m, g, t2, b);
  for (size_t i = 0; i < ra.dv_hat.size(); ++i) {
    CHECK((ra.dv_hat[i] - rb.dv_hat[i]).norm() < 1e-13);
    CHECK((ra.dw_hat[i] - rb.dw_hat[i]).norm() < 1e-13);
  }
}

TEST_CASE("linear momentum conservation per step") {
  Rng rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    Model m = make_model(small_config(), 200 + static_cast<std::uint64_t>(rep));
    GraphState g = random_graph(rng, 5);
    Tape tape(&m.params);
    ForwardOptions opt;
    opt.want_diagnostics = true;
    const ForwardResult out = model_forward(m, g, tape, opt);
    for (const StepDiag& sd : out.steps) {
      Vec3 sum = Vec3::Zero();
      double scale = 0.0;
      for (size_t i = 0; i < sd.dv.size(); ++i) {
        sum += sd.dv[i] / out.mass_inv[i];
        scale = std::max(scale, (sd.dv[i] / out.mass_inv[i]).norm());
      }
      CHECK(sum.norm() < 1e-10 * std::max(1.0, scale));
    }
  }
}

TEST_CASE("angular momentum conservation with lambda pinned to 1") {
  Rng rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    Model m = make_model(small_config(), 300 + static_cast<std::uint64_t>(rep));
    GraphState g = random_graph(rng, 5);
    Tape tape(&m.params);
    ForwardOptions opt;
    opt.want_diagnostics = true;
    opt.lambda_override = 1.0;
    const ForwardResult out = model_forward(m, g, tape, opt);
    for (const StepDiag& sd : out.steps) {
      double scale = 0.0;
      for (const PairDiag& p : sd.pairs)
        scale = std::max({scale, p.angular.norm(), p.tau_ij.norm(),
                          p.force.norm()});
      for (int ref = 0; ref < 5; ++ref) {
        const Vec3 r_ref = rv(rng, 2.0);
        Vec3 sum = Vec3::Zero();
        for (size_t i = 0; i < sd.dv.size(); ++i)
          sum += sd.dw[i] / out.inertia_inv[i] +
                 (sd.r[i] - r_ref).cross(sd.dv[i] / out.mass_inv[i]);
        CHECK(sum.norm() < 1e-9 * std::max(scale, 1e-12));
      }
    }
  }
}

TEST_CASE("pair torques compensate the orbital transfer when lambda is 1") {
  Rng rng(5);
  Model m = make_model(small_config(), 7);
  GraphState g = random_graph(rng, 4);
  Tape tape(&m.params);
  ForwardOptions opt;
  opt.want_diagnostics = true;
  opt.lambda_override = 1.0;
  const ForwardResult out = model_forward(m, g, tape, opt);
  bool saw_pair = false;
  for (const StepDiag& sd : out.steps)
    for (const PairDiag& p : sd.pairs) {
      saw_pair = true;
      const Vec3 lhs = p.tau_ij + p.tau_ji;
      const Vec3 rhs = -(sd.r[static_cast<size_t>(p.j)] -
                         sd.r[static_cast<size_t>(p.i)])
                            .cross(p.force);
      CHECK((lhs - rhs).norm() < 1e-12 * std::max(1.0, rhs.norm()));
    }
  CHECK(saw_pair);
}

TEST_CASE("corrupted angular sign breaks conservation (negative control)") {
  Rng rng(6);
  Model m = make_model(small_config(), 8);
  GraphState g = random_graph(rng, 5);
  Tape tape(&m.params);
  ForwardOptions opt;
  opt.want_diagnostics = true;
  opt.lambda_override = 1.0;
  opt.corrupt_angular_sign = true;
  const ForwardResult out = model_forward(m, g, tape, opt);
  double worst = 0.0;
  for (const StepDiag& sd : out.steps) {
    Vec3 sum = Vec3::Zero();
    double scale = 0.0;
    for (const PairDiag& p : sd.pairs) scale = std::max(scale, p.angular.norm());
    for (size_t i = 0; i < sd.dv.size(); ++i)
      sum += sd.dw[i] / out.inertia_inv[i] +
             sd.r[i].cross(sd.dv[i] / out.mass_inv[i]);
    if (scale > 0.0) worst = std::max(worst, sum.norm() / scale);
  }
  CHECK(worst > 1e-3);
}

TEST_CASE("SO(3) equivariance and T(3) invariance") {
  Rng rng(7);
  Model m = make_model(small_config(), 9);
  for (int rep = 0; rep < 20; ++rep) {
    GraphState g = random_graph(rng, 5);
    Tape t0(&m.params);
    const ForwardResult base = model_forward(m, g, t0, {});

    const Rotation rot = random_rotation(900 + static_cast<std::uint64_t>(rep));
    GraphState gr = g;
    for (NodeState& node : gr.nodes) {
      node.r = rot * node.r;
      node.v_t = rot * node.v_t;
      node.w_t = rot * node.w_t;
      node.v_tm1 = rot * node.v_tm1;
      node.w_tm1 = rot * node.w_tm1;
    }
    Tape t1(&m.params);
    const ForwardResult out_r = model_forward(m, gr, t1, {});
    for (size_t i = 0; i < base.dv_hat.size(); ++i) {
      const double s = std::max(1.0, base.dv_hat[i].norm());
      CHECK((out_r.dv_hat[i] - rot * base.dv_hat[i]).norm() < 1e-9 * s);
      CHECK((out_r.dw_hat[i] - rot * base.dw_hat[i]).norm() <
            1e-9 * std::max(1.0, base.dw_hat[i].norm()));
      CHECK((out_r.dx[i] - rot * base.dx[i]).norm() <
            1e-9 * std::max(1.0, base.dx[i].norm()));
    }

    GraphState gt = g;
    const Vec3 shift = rv(rng, 5.0);
    for (NodeState& node : gt.nodes) node.r += shift;
    Tape t2(&m.params);
    const ForwardResult out_t = model_forward(m, gt, t2, {});
    for (size_t i = 0; i < base.dv_hat.size(); ++i) {
      CHECK((out_t.dv_hat[i] - base.dv_hat[i]).norm() < 1e-9);
      CHECK((out_t.dw_hat[i] - base.dw_hat[i]).norm() < 1e-9);
      CHECK((out_t.dx[i] - base.dx[i]).norm() < 1e-9);
    }
  }
}

TEST_CASE("node permutation equivariance") {
  Rng rng(8);
  Model m = make_model(small_config(), 10);
  GraphState g = random_graph(rng, 6);
  Tape t0(&m.params);
  const ForwardResult base = model_forward(m, g, t0, {});

  // reversal permutation
  const int n = static_cast<int>(g.nodes.size());
  std::vector<int> perm(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = n - 1 - i;

  GraphState gp;
  gp.nodes.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    gp.nodes[static_cast<size_t>(perm[static_cast<size_t>(i)])] =
        g.nodes[static_cast<size_t>(i)];
  gp.n_physical = n;
  gp.edges = build_edges(gp.nodes, g.d_c);
  gp.d_c = g.d_c;
  gp.meta = g.meta;
  gp.normalized = true;

  Tape t1(&m.params);
  const ForwardResult out = model_forward(m, gp, t1, {});
  for (int i = 0; i < n; ++i) {
    const size_t pi = static_cast<size_t>(perm[static_cast<size_t>(i)]);
    CHECK((out.dv_hat[pi] - base.dv_hat[static_cast<size_t>(i)]).norm() <
          1e-9);
    CHECK((out.dw_hat[pi] - base.dw_hat[static_cast<size_t>(i)]).norm() <
          1e-9);
  }
}

TEST_CASE("isolated node drifts exactly") {
  Rng rng(9);
  Model m = make_model(small_config(), 11);
  GraphState g;
  NodeState node;
  node.r = Vec3(0.1, 0.2, 0.3);
  node.v_t = Vec3(0.5, -0.25, 0.125);
  node.v_tm1 = node.v_t;
  node.alpha = VectorXd::Zero(1);
  g.nodes.push_back(node);
  g.n_physical = 1;
  g.d_c = 1.0;
  g.meta.dt = 1e-3;
  normalize(g, Normalizer{1.0, 1.0, 1.0});

  Tape tape(&m.params);
  ForwardOptions opt;
  opt.dt = 1e-3;
  const ForwardResult out = model_forward(m, g, tape, opt);
  CHECK(out.dv_hat[0].norm() == 0.0);
  CHECK(out.dw_hat[0].norm() == 0.0);
  CHECK((out.dx[0] - node.v_t * 1e-3).norm() < 1e-15);
}

TEST_CASE("single pair: receiver delta is mass_inv times the pair force") {
  Rng rng(10);
  ModelConfig cfg = small_config();
  cfg.steps = 1;
  Model m = make_model(cfg, 12);
  GraphState g = random_graph(rng, 2, 10.0);  // guaranteed edge
  REQUIRE(count_pairs(g) == 1);
  Tape tape(&m.params);
  ForwardOptions opt;
  opt.want_diagnostics = true;
  const ForwardResult out = model_forward(m, g, tape, opt);
  const PairDiag& p = out.steps[0].pairs[0];
  CHECK((out.dv_hat[1] - out.mass_inv[1] * p.force).norm() < 1e-15);
  CHECK((out.dv_hat[0] + out.mass_inv[0] * p.force).norm() < 1e-15);
}

TEST_CASE("point of action: equal labels give the midpoint, always on segment") {
  Rng rng(11);
  Model m = make_model(small_config(), 13);
  GraphState g = random_graph(rng, 2, 10.0);
  Tape tape(&m.params);
  ForwardOptions opt;
  opt.want_diagnostics = true;
  const ForwardResult out = model_forward(m, g, tape, opt);
  const PairDiag& p = out.steps[0].pairs[0];
  const Vec3 mid = 0.5 * (out.steps[0].r[0] + out.steps[0].r[1]);
  CHECK((p.r0 - mid).norm() < 1e-12);

  // convexity: r0 - r_i and r0 - r_j point opposite ways along the segment
  const Vec3 d = out.steps[0].r[1] - out.steps[0].r[0];
  const double t = (p.r0 - out.steps[0].r[0]).dot(d) / d.squaredNorm();
  CHECK(t >= 0.0);
  CHECK(t <= 1.0);
}

TEST_CASE("zeroed parameters give zero interactions and pure drift") {
  Rng rng(12);
  Model m = make_model(small_config(), 14);
  for (int i = 0; i < m.params.count(); ++i) m.params.at(i).value.setZero();
  // layer-norm gain back to one so the op stays well-defined
  m.params.at(m.ln_gain).value.setOnes();
  GraphState g = random_graph(rng, 3, 10.0);
  Tape tape(&m.params);
  ForwardOptions opt;
  opt.want_diagnostics = true;
  opt.dt = 1e-3;
  const ForwardResult out = model_forward(m, g, tape, opt);
  for (const StepDiag& sd : out.steps)
    for (const PairDiag& p : sd.pairs) {
      CHECK(p.force.norm() == 0.0);
      CHECK(p.angular.norm() == 0.0);
    }
  for (size_t i = 0; i < out.dv_hat.size(); ++i) {
    CHECK(out.dv_hat[i].norm() == 0.0);
    CHECK((out.dx[i] - g.nodes[i].v_t * 1e-3).norm() < 1e-15);
  }
}

TEST_CASE("edge memory influences later steps") {
  Rng rng(13);
  ModelConfig one = small_config();
  one.steps = 1;
  ModelConfig four = small_config();
  four.steps = 4;
  Model m1 = make_model(one, 15);
  Model m4 = make_model(four, 15);  // identical parameters by seed
  GraphState g = random_graph(rng, 3, 10.0);
  Tape t1(&m1.params), t4(&m4.params);
  const ForwardResult r1 = model_forward(m1, g, t1, {});
  const ForwardResult r4 = model_forward(m4, g, t4, {});
  // L=4 is not just 4x the L=1 delta: state and memory evolve
  double diff = 0.0;
  for (size_t i = 0; i < r1.dv_hat.size(); ++i)
    diff = std::max(diff, (4.0 * r1.dv_hat[i] - r4.dv_hat[i]).norm());
  CHECK(diff > 1e-8);
}

TEST_CASE("external decoder shifts all same-label nodes equally") {
  Rng rng(14);
  ModelConfig cfg = small_config();
  cfg.external = true;
  cfg.steps = 1;
  Model m = make_model(cfg, 16);
  // zero-label nodes reach psi_n4 through zero activations at init, so give
  // its output bias a kick to get a visible external delta
  m.params.at(m.psi_n4.bias_ids.back()).value << 0.1, -0.2, 0.3;
  GraphState g = random_graph(rng, 2, 0.001);  // no edges
  REQUIRE(count_pairs(g) == 0);
  Tape tape(&m.params);
  ForwardOptions opt;
  opt.want_diagnostics = true;
  const ForwardResult out = model_forward(m, g, tape, opt);
  CHECK(out.dv_hat[0].norm() > 0.0);
  // the decoded external delta is a function of the label alone
  CHECK((out.steps[0].dv[0] - out.steps[0].dv[1]).norm() == 0.0);
  CHECK(out.dw_hat[0].norm() == 0.0);
}

TEST_CASE("lambda override pins the gate") {
  Rng rng(15);
  Model m = make_model(small_config(), 17);
  GraphState g = random_graph(rng, 2, 10.0);
  Tape tape(&m.params);
  ForwardOptions opt;
  opt.want_diagnostics = true;
  opt.lambda_override = 1.0;
  const ForwardResult out = model_forward(m, g, tape, opt);
  CHECK(out.steps[0].pairs[0].lambda == 1.0);
}

TEST_CASE("forward pass is deterministic") {
  Rng rng(16);
  Model m = make_model(small_config(), 18);
  GraphState g = random_graph(rng, 5);
  Tape t1(&m.params), t2(&m.params);
  const ForwardResult a = model_forward(m, g, t1, {});
  const ForwardResult b = model_forward(m, g, t2, {});
  for (size_t i = 0; i < a.dv_hat.size(); ++i) {
    CHECK((a.dv_hat[i] - b.dv_hat[i]).norm() == 0.0);
    CHECK((a.dx[i] - b.dx[i]).norm() == 0.0);
  }
}

TEST_CASE("checkpoint round-trip preserves the forward pass bitwise") {
  Rng rng(17);
  Model m = make_model(small_config(), 19);
  Normalizer norm{2.5, 3.5, 0.5};
  std::ostringstream os;
  write_model(os, m, norm);

  std::istringstream is(os.str());
  Normalizer norm2;
  Model m2 = read_model(is, norm2);
  CHECK(norm2.v_scale == 2.5);
  CHECK(norm2.dx_scale == 0.5);

  GraphState g = random_graph(rng, 4);
  Tape t1(&m.params), t2(&m2.params);
  const ForwardResult a = model_forward(m, g, t1, {});
  const ForwardResult b = model_forward(m2, g, t2, {});
  for (size_t i = 0; i < a.dv_hat.size(); ++i)
    CHECK((a.dv_hat[i] - b.dv_hat[i]).norm() == 0.0);

  std::ostringstream os2;
  write_model(os2, m2, norm2);
  CHECK(os.str() == os2.str());
}

TEST_CASE("ghost nodes never update and absorb momentum") {
  Rng rng(18);
  Model m = make_model(small_config(), 20);
  // one physical node next to a floor, its ghost in range
  std::vector<NodeState> phys(1);
  phys[0].r = Vec3(0, 0, 0.06);
  phys[0].v_t = Vec3(0.2, 0, -1.0);
  phys[0].v_tm1 = phys[0].v_t;
  phys[0].alpha = VectorXd::Zero(1);
  auto box = make_box(Vec3(-1, -1, 0), Vec3(1, 1, 2));
  std::vector<BoundarySpec> floor{box[4]};
  GraphMeta meta;
  meta.dt = 1e-3;
  meta.body_radius = 0.05;
  GraphState g = assemble_graph(phys, floor, 0.125, meta);
  REQUIRE(g.nodes.size() == 2);
  REQUIRE(count_pairs(g) == 1);
  normalize(g, Normalizer{1.0, 1.0, 1.0});

  Tape tape(&m.params);
  ForwardOptions opt;
  opt.want_diagnostics = true;
  const ForwardResult out = model_forward(m, g, tape, opt);
  CHECK(out.dv_hat[1].norm() == 0.0);  // ghost pinned to wall state
  CHECK(out.dv_hat[0].norm() > 0.0);   // physical node reacts
}
