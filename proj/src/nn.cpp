#include "momnet/nn.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

namespace momnet {

Mlp make_mlp(ParamStore& store, const std::string& name,
             const std::vector<int>& widths, Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("mlp needs >= 2 widths");
  Mlp m;
  m.widths = widths;
  for (size_t l = 0; l + 1 < widths.size(); ++l) {
    const int fan_in = widths[l], fan_out = widths[l + 1];
    MatrixXd w(fan_out, fan_in);
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = sd * normal01(rng);
    m.weight_ids.push_back(
        store.add(name + ".w" + std::to_string(l), std::move(w)));
    m.bias_ids.push_back(
        store.add(name + ".b" + std::to_string(l), MatrixXd::Zero(fan_out, 1)));
  }
  return m;
}

Slot mlp_forward(const Mlp& m, Slot x, Tape& tape) {
  if (tape.val(x).size() != m.widths.front())
    throw std::invalid_argument("mlp_forward: input width mismatch");
  Slot h = x;
  for (size_t l = 0; l < m.weight_ids.size(); ++l) {
    h = tape.affine(m.weight_ids[l], m.bias_ids[l], h);
    if (l + 1 < m.weight_ids.size()) h = tape.silu(h);
  }
  return h;
}

OptimState make_optim(const ParamStore& store, double lr) {
  OptimState s;
  s.lr = lr;
  for (int i = 0; i < store.count(); ++i) {
    const MatrixXd& v = store.at(i).value;
    s.m.emplace_back(MatrixXd::Zero(v.rows(), v.cols()));
    s.v.emplace_back(MatrixXd::Zero(v.rows(), v.cols()));
  }
  return s;
}

void adam_step(ParamStore& store, OptimState& s) {
  if (static_cast<int>(s.m.size()) != store.count())
    throw std::invalid_argument("adam_step: state/store tensor count mismatch");
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (int i = 0; i < store.count(); ++i) {
    ParamTensor& t = store.at(i);
    MatrixXd& m = s.m[static_cast<size_t>(i)];
    MatrixXd& v = s.v[static_cast<size_t>(i)];
    if (m.rows() != t.value.rows() || m.cols() != t.value.cols())
      throw std::invalid_argument("adam_step: shape mismatch for " + t.name);
    m = s.beta1 * m + (1.0 - s.beta1) * t.grad;
    v = s.beta2 * v + (1.0 - s.beta2) * t.grad.cwiseProduct(t.grad);
    const MatrixXd mhat = m / bc1;
    const MatrixXd vhat = v / bc2;
    t.value -=
        s.lr * mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                                  MatrixXd::Constant(vhat.rows(), vhat.cols(),
                                                     s.eps));
  }
}

std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_params(std::ostream& out, const ParamStore& store) {
  for (int i = 0; i < store.count(); ++i) {
    const ParamTensor& t = store.at(i);
    out << "param " << t.name << ' ' << t.value.rows() << ' '
        << t.value.cols() << '\n';
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        if (c) out << ' ';
        out << format_real(t.value(r, c));
      }
      out << '\n';
    }
  }
}

void read_params(std::istream& in, ParamStore& store) {
  std::string tag;
  for (int i = 0; i < store.count(); ++i) {
    ParamTensor& t = store.at(i);
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> tag >> name >> rows >> cols) || tag != "param")
      throw std::runtime_error("parameter block: malformed header");
    if (name != t.name || rows != t.value.rows() || cols != t.value.cols())
      throw std::runtime_error("parameter block: expected " + t.name +
                               ", found " + name);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        if (!(in >> t.value(r, c)))
          throw std::runtime_error("parameter block: short read in " + name);
  }
}

}  // namespace momnet
