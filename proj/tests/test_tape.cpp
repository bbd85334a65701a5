#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "momnet/nn.hpp"
#include "momnet/tape.hpp"

using namespace momnet;

namespace {

VectorXd random_vec(Rng& rng, int n) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = normal01(rng);
  return v;
}

// Straight-line reimplementation of the MLP forward pass: nested loops,
// no shared code with the tape path.
VectorXd mlp_by_hand(const Mlp& m, const ParamStore& store,
                     const VectorXd& x) {
  VectorXd h = x;
  for (size_t l = 0; l < m.weight_ids.size(); ++l) {
    const MatrixXd& w = store.at(m.weight_ids[l]).value;
    const MatrixXd& b = store.at(m.bias_ids[l]).value;
    VectorXd y(w.rows());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double acc = b(r, 0);
      for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * h[c];
      y[r] = acc;
    }
    if (l + 1 < m.weight_ids.size())
      for (Eigen::Index r = 0; r < y.size(); ++r)
        y[r] = y[r] / (1.0 + std::exp(-y[r]));
    h = y;
  }
  return h;
}

}  // namespace

TEST_CASE("mlp_forward: zero weights give the last bias") {
  ParamStore store;
  Rng rng(1);
  Mlp m = make_mlp(store, "f", {3, 4, 2}, rng);
  for (int id : m.weight_ids) store.at(id).value.setZero();
  store.at(m.bias_ids.back()).value << 0.5, -0.25;
  Tape tape(&store);
  const Slot y = mlp_forward(m, tape.input(random_vec(rng, 3)), tape);
  CHECK(tape.val(y)[0] == 0.5);
  CHECK(tape.val(y)[1] == -0.25);
}

TEST_CASE("mlp_forward: identity single layer") {
  ParamStore store;
  Rng rng(2);
  Mlp m = make_mlp(store, "f", {3, 3}, rng);
  store.at(m.weight_ids[0]).value = MatrixXd::Identity(3, 3);
  store.at(m.bias_ids[0]).value.setZero();
  Tape tape(&store);
  const VectorXd x = random_vec(rng, 3);
  const Slot y = mlp_forward(m, tape.input(x), tape);
  CHECK((tape.val(y) - x).norm() == 0.0);
}

TEST_CASE("mlp_forward matches an independent reimplementation") {
  ParamStore store;
  Rng rng(3);
  Mlp m = make_mlp(store, "f", {5, 8, 8, 4}, rng);
  for (int k = 0; k < 20; ++k) {
    const VectorXd x = random_vec(rng, 5);
    Tape tape(&store);
    const Slot y = mlp_forward(m, tape.input(x), tape);
    CHECK((tape.val(y) - mlp_by_hand(m, store, x)).norm() < 1e-12);
  }
}

TEST_CASE("mlp_forward rejects width mismatch") {
  ParamStore store;
  Rng rng(4);
  Mlp m = make_mlp(store, "f", {3, 2}, rng);
  Tape tape(&store);
  CHECK_THROWS_AS(mlp_forward(m, tape.input(random_vec(rng, 4)), tape),
                  std::invalid_argument);
}

TEST_CASE("layer_norm hand values") {
  ParamStore store;
  const int gain = store.add("g", MatrixXd::Ones(2, 1));
  const int bias = store.add("b", MatrixXd::Zero(2, 1));

  Tape tape(&store);
  VectorXd constant(2);
  constant << 3.0, 3.0;
  const Slot y0 = tape.layer_norm(tape.input(constant), gain, bias);
  CHECK(tape.val(y0).norm() == 0.0);  // zero-variance path

  VectorXd pm(2);
  pm << 1.0, -1.0;
  const Slot y1 = tape.layer_norm(tape.input(pm), gain, bias);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(tape.val(y1)[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(tape.val(y1)[1] == doctest::Approx(-expect).epsilon(1e-12));
}

TEST_CASE("layer_norm output mean is zero for unit gain") {
  ParamStore store;
  const int gain = store.add("g", MatrixXd::Ones(8, 1));
  const int bias = store.add("b", MatrixXd::Zero(8, 1));
  Rng rng(6);
  for (int k = 0; k < 20; ++k) {
    Tape tape(&store);
    const Slot y = tape.layer_norm(tape.input(random_vec(rng, 8)), gain, bias);
    CHECK(std::abs(tape.val(y).mean()) < 1e-12);
  }
}

TEST_CASE("backward: linear loss gradient is the input") {
  ParamStore store;
  const int w = store.add("w", MatrixXd::Zero(1, 4));
  const int b = store.add("b", MatrixXd::Zero(1, 1));
  Rng rng(7);
  const VectorXd x = random_vec(rng, 4);
  Tape tape(&store);
  const Slot loss = tape.affine(w, b, tape.input(x));
  tape.backward(loss);
  CHECK((store.at(w).grad.transpose() - x).norm() == 0.0);
  CHECK(store.at(b).grad(0, 0) == 1.0);
}

TEST_CASE("backward: disconnected parameter has zero gradient") {
  ParamStore store;
  const int w = store.add("w", MatrixXd::Ones(1, 2));
  const int b = store.add("b", MatrixXd::Zero(1, 1));
  const int unused = store.add("unused", MatrixXd::Ones(3, 3));
  Rng rng(8);
  Tape tape(&store);
  const Slot loss = tape.affine(w, b, tape.input(random_vec(rng, 2)));
  tape.backward(loss);
  CHECK(store.at(unused).grad.norm() == 0.0);
}

TEST_CASE("per-op adjoints match central finite differences") {
  // One composite function exercising every differentiable op; gradients
  // with respect to all leaves and parameters are checked against central
  // differences.
  ParamStore store;
  Rng rng(9);
  const int w = store.add("w", MatrixXd::Random(3, 3) * 0.5);
  const int b = store.add("b", MatrixXd::Random(3, 1) * 0.1);
  const int gain = store.add("gain", MatrixXd::Ones(3, 1) * 1.2);
  const int bias = store.add("bias", MatrixXd::Random(3, 1) * 0.1);

  auto eval = [&](const VectorXd& u, const VectorXd& v) -> double {
    Tape t(&store);
    const Slot su = t.input(u);
    const Slot sv = t.input(v);
    const Slot c = t.cross(su, sv);
    const Slot nz = t.normalize_safe(t.add(c, sv));
    const Slot af = t.affine(w, b, t.silu(nz));
    const Slot ln = t.layer_norm(af, gain, bias);
    const Slot sp = t.softplus_pos(ln);
    const Slot d = t.dot(sp, t.neg(t.sub(su, t.scale(sv, 0.3))));
    const Slot nm = t.norm(t.mul_scalar(t.inv_scalar(t.add(d, t.input1(4.0))),
                                        t.concat({t.slice(sp, 0, 2), d})));
    const Slot total = t.add_n({nm, d, t.dot(nz, nz)});
    return t.val1(total);
  };

  for (int rep = 0; rep < 5; ++rep) {
    const VectorXd u = random_vec(rng, 3);
    const VectorXd v = random_vec(rng, 3);

    Tape tape(&store);
    store.zero_grad();
    const Slot su = tape.input(u);
    const Slot sv = tape.input(v);
    {
      const Slot c = tape.cross(su, sv);
      const Slot nz = tape.normalize_safe(tape.add(c, sv));
      const Slot af = tape.affine(w, b, tape.silu(nz));
      const Slot ln = tape.layer_norm(af, gain, bias);
      const Slot sp = tape.softplus_pos(ln);
      const Slot d =
          tape.dot(sp, tape.neg(tape.sub(su, tape.scale(sv, 0.3))));
      const Slot nm = tape.norm(
          tape.mul_scalar(tape.inv_scalar(tape.add(d, tape.input1(4.0))),
                          tape.concat({tape.slice(sp, 0, 2), d})));
      const Slot total = tape.add_n({nm, d, tape.dot(nz, nz)});
      tape.backward(total);
    }

    const double h = 1e-5;
    // input adjoints
    for (int which = 0; which < 2; ++which) {
      for (int k = 0; k < 3; ++k) {
        VectorXd ua = u, ub = u, va = v, vb = v;
        (which == 0 ? ua[k] : va[k]) -= h;
        (which == 0 ? ub[k] : vb[k]) += h;
        const double fd = (eval(ub, vb) - eval(ua, va)) /
                          (2.0 * h);
        const double an =
            which == 0 ? tape.adjoint(su)[k] : tape.adjoint(sv)[k];
        CHECK(std::abs(fd - an) <
              1e-4 * std::max({1.0, std::abs(fd), std::abs(an)}));
      }
    }
    // parameter adjoints
    for (int pid : {w, b, gain, bias}) {
      MatrixXd& val = store.at(pid).value;
      const MatrixXd grad = store.at(pid).grad;
      for (Eigen::Index r = 0; r < val.rows(); ++r)
        for (Eigen::Index c = 0; c < val.cols(); ++c) {
          const double keep = val(r, c);
          val(r, c) = keep - h;
          const double fa = eval(u, v);
          val(r, c) = keep + h;
          const double fb = eval(u, v);
          val(r, c) = keep;
          const double fd = (fb - fa) / (2.0 * h);
          CHECK(std::abs(fd - grad(r, c)) <
                1e-4 * std::max({1.0, std::abs(fd), std::abs(grad(r, c))}));
        }
    }
  }
}

TEST_CASE("normalize_safe gradient cutoff near degeneracy") {
  ParamStore store;
  Tape tape(&store);
  const Slot x = tape.input3(Vec3(5e-9, 0, 0));  // inside the 10x eps band
  const Slot y = tape.normalize_safe(x);
  const Slot loss = tape.dot(y, y);
  tape.backward(loss);
  CHECK(tape.adjoint(x).norm() == 0.0);
  CHECK_FALSE(tape.degenerate(y));

  Tape t2(&store);
  const Slot z = t2.normalize_safe(t2.input3(Vec3::Zero()));
  CHECK(t2.degenerate(z));
  CHECK(t2.val(z).norm() == 0.0);
}

TEST_CASE("replay reproduces forward values bit-exactly") {
  ParamStore store;
  Rng rng(10);
  Mlp m = make_mlp(store, "f", {4, 6, 2}, rng);
  Tape tape(&store);
  const Slot y = mlp_forward(m, tape.input(random_vec(rng, 4)), tape);
  const VectorXd before = tape.val(y);
  tape.replay();
  CHECK((tape.val(y) - before).norm() == 0.0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStore store;
  store.add("w", MatrixXd::Ones(2, 2));
  OptimState opt = make_optim(store, 1e-3);
  const MatrixXd before = store.at(0).value;
  store.zero_grad();
  adam_step(store, opt);
  CHECK((store.at(0).value - before).norm() == 0.0);
}

TEST_CASE("adam: first step magnitude is about the learning rate") {
  ParamStore store;
  store.add("w", MatrixXd::Zero(3, 1));
  OptimState opt = make_optim(store, 1e-2);
  store.at(0).grad << 0.5, -2.0, 10.0;
  adam_step(store, opt);
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(std::abs(store.at(0).value(k, 0)) - 1e-2) < 1e-5);
}

TEST_CASE("adam: identical runs are bitwise identical") {
  auto run = [] {
    ParamStore store;
    Rng rng(11);
    Mlp m = make_mlp(store, "f", {3, 5, 1}, rng);
    OptimState opt = make_optim(store, 1e-3);
    for (int it = 0; it < 20; ++it) {
      Tape tape(&store);
      store.zero_grad();
      const Slot y = mlp_forward(m, tape.input(random_vec(rng, 3)), tape);
      tape.backward(y);
      adam_step(store, opt);
    }
    std::ostringstream os;
    write_params(os, store);
    return os.str();
  };
  CHECK(run() == run());
}

TEST_CASE("parameter container round-trips exactly") {
  ParamStore a;
  Rng rng(12);
  make_mlp(a, "f", {3, 4, 2}, rng);
  std::ostringstream os;
  write_params(os, a);

  ParamStore b;
  Rng rng2(99);
  make_mlp(b, "f", {3, 4, 2}, rng2);
  std::istringstream is(os.str());
  read_params(is, b);
  for (int i = 0; i < a.count(); ++i)
    CHECK((a.at(i).value - b.at(i).value).norm() == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  ParamStore store;
  Tape tape(&store);
  const Slot v = tape.input3(Vec3(1, 2, 3));
  CHECK_THROWS_AS(tape.backward(v), std::invalid_argument);
}
