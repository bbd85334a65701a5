#include "momnet/tape.hpp"

#include <cmath>

namespace momnet {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kPositivityFloor = 1e-12;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace

int ParamStore::add(const std::string& name, MatrixXd value) {
  if (find(name) >= 0) throw std::invalid_argument("duplicate parameter: " + name);
  ParamTensor t;
  t.name = name;
  t.grad = MatrixXd::Zero(value.rows(), value.cols());
  t.value = std::move(value);
  tensors_.push_back(std::move(t));
  return static_cast<int>(tensors_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
  for (int i = 0; i < count(); ++i)
    if (tensors_[static_cast<size_t>(i)].name == name) return i;
  return -1;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& t : tensors_) t.grad.setZero();
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_) s += t.grad.squaredNorm();
  return std::sqrt(s);
}

void ParamStore::scale_grad(double s) {
  for (auto& t : tensors_) t.grad *= s;
}

int Tape::check(Slot s) const {
  if (s.id < 0 || s.id >= static_cast<int>(nodes_.size()))
    throw std::out_of_range("bad tape slot");
  return s.id;
}

ParamStore& Tape::params() {
  if (!params_) throw std::logic_error("tape has no parameter store");
  return *params_;
}

Slot Tape::push(Node n) {
  eval(n);
  nodes_.push_back(std::move(n));
  return Slot{static_cast<int>(nodes_.size()) - 1};
}

Slot Tape::input(VectorXd v) {
  Node n;
  n.op = Op::kInput;
  n.val = std::move(v);
  nodes_.push_back(std::move(n));
  return Slot{static_cast<int>(nodes_.size()) - 1};
}

Slot Tape::input3(const Vec3& v) { return input(VectorXd(v)); }

Slot Tape::input1(double v) {
  VectorXd x(1);
  x[0] = v;
  return input(std::move(x));
}

double Tape::val1(Slot s) const {
  const VectorXd& v = val(s);
  if (v.size() != 1) throw std::invalid_argument("slot is not a scalar");
  return v[0];
}

Vec3 Tape::val3(Slot s) const {
  const VectorXd& v = val(s);
  if (v.size() != 3) throw std::invalid_argument("slot is not a 3-vector");
  return Vec3(v[0], v[1], v[2]);
}

bool Tape::degenerate(Slot s) const {
  const Node& n = nodes_.at(static_cast<size_t>(check(s)));
  return (n.flag & 1u) != 0;
}

Slot Tape::add(Slot a, Slot b) {
  Node n;
  n.op = Op::kAdd;
  n.a = check(a);
  n.b = check(b);
  return push(std::move(n));
}

Slot Tape::add_n(const std::vector<Slot>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_n of nothing");
  Node n;
  n.op = Op::kAddN;
  n.pool = static_cast<int>(pool_.size());
  n.npool = static_cast<int>(xs.size());
  for (Slot s : xs) pool_.push_back(check(s));
  return push(std::move(n));
}

Slot Tape::sub(Slot a, Slot b) {
  Node n;
  n.op = Op::kSub;
  n.a = check(a);
  n.b = check(b);
  return push(std::move(n));
}

Slot Tape::neg(Slot a) {
  Node n;
  n.op = Op::kNeg;
  n.a = check(a);
  return push(std::move(n));
}

Slot Tape::scale(Slot a, double c) {
  Node n;
  n.op = Op::kScale;
  n.a = check(a);
  n.c = c;
  return push(std::move(n));
}

Slot Tape::mul_scalar(Slot s, Slot a) {
  Node n;
  n.op = Op::kMulScalar;
  n.a = check(s);
  n.b = check(a);
  if (nodes_[static_cast<size_t>(n.a)].val.size() != 1)
    throw std::invalid_argument("mul_scalar: first operand must be size 1");
  return push(std::move(n));
}

Slot Tape::inv_scalar(Slot s) {
  Node n;
  n.op = Op::kInvScalar;
  n.a = check(s);
  if (nodes_[static_cast<size_t>(n.a)].val.size() != 1)
    throw std::invalid_argument("inv_scalar: operand must be size 1");
  return push(std::move(n));
}

Slot Tape::dot(Slot a, Slot b) {
  Node n;
  n.op = Op::kDot;
  n.a = check(a);
  n.b = check(b);
  return push(std::move(n));
}

Slot Tape::norm(Slot a) {
  Node n;
  n.op = Op::kNorm;
  n.a = check(a);
  return push(std::move(n));
}

Slot Tape::cross(Slot a, Slot b) {
  Node n;
  n.op = Op::kCross;
  n.a = check(a);
  n.b = check(b);
  return push(std::move(n));
}

Slot Tape::normalize_safe(Slot a, double eps) {
  Node n;
  n.op = Op::kNormalizeSafe;
  n.a = check(a);
  n.c = eps;
  return push(std::move(n));
}

Slot Tape::affine(int weight_id, int bias_id, Slot x) {
  Node n;
  n.op = Op::kAffine;
  n.a = check(x);
  n.pa = weight_id;
  n.pb = bias_id;
  const MatrixXd& w = params().at(weight_id).value;
  if (w.cols() != nodes_[static_cast<size_t>(n.a)].val.size())
    throw std::invalid_argument("affine: weight columns do not match input");
  if (params().at(bias_id).value.rows() != w.rows())
    throw std::invalid_argument("affine: bias rows do not match weight rows");
  return push(std::move(n));
}

Slot Tape::silu(Slot a) {
  Node n;
  n.op = Op::kSilu;
  n.a = check(a);
  return push(std::move(n));
}

Slot Tape::softplus_pos(Slot a) {
  Node n;
  n.op = Op::kSoftplusPos;
  n.a = check(a);
  return push(std::move(n));
}

Slot Tape::layer_norm(Slot x, int gain_id, int bias_id) {
  Node n;
  n.op = Op::kLayerNorm;
  n.a = check(x);
  n.pa = gain_id;
  n.pb = bias_id;
  const auto len = nodes_[static_cast<size_t>(n.a)].val.size();
  if (len < 2) throw std::invalid_argument("layer_norm: need length >= 2");
  if (params().at(gain_id).value.rows() != len ||
      params().at(bias_id).value.rows() != len)
    throw std::invalid_argument("layer_norm: gain/bias length mismatch");
  return push(std::move(n));
}

Slot Tape::slice(Slot a, int offset, int len) {
  Node n;
  n.op = Op::kSlice;
  n.a = check(a);
  n.off = offset;
  n.len = len;
  if (offset < 0 || len <= 0 ||
      offset + len > nodes_[static_cast<size_t>(n.a)].val.size())
    throw std::invalid_argument("slice: range out of bounds");
  return push(std::move(n));
}

Slot Tape::concat(const std::vector<Slot>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat of nothing");
  Node n;
  n.op = Op::kConcat;
  n.pool = static_cast<int>(pool_.size());
  n.npool = static_cast<int>(xs.size());
  for (Slot s : xs) pool_.push_back(check(s));
  return push(std::move(n));
}

void Tape::eval(Node& n) {
  auto v = [&](int id) -> const VectorXd& {
    return nodes_[static_cast<size_t>(id)].val;
  };
  switch (n.op) {
    case Op::kInput:
      break;
    case Op::kAdd:
      if (v(n.a).size() != v(n.b).size())
        throw std::invalid_argument("add: size mismatch");
      n.val = v(n.a) + v(n.b);
      break;
    case Op::kAddN: {
      n.val = v(pool_[static_cast<size_t>(n.pool)]);
      for (int k = 1; k < n.npool; ++k) {
        const VectorXd& x = v(pool_[static_cast<size_t>(n.pool + k)]);
        if (x.size() != n.val.size())
          throw std::invalid_argument("add_n: size mismatch");
        n.val += x;
      }
      break;
    }
    case Op::kSub:
      if (v(n.a).size() != v(n.b).size())
        throw std::invalid_argument("sub: size mismatch");
      n.val = v(n.a) - v(n.b);
      break;
    case Op::kNeg:
      n.val = -v(n.a);
      break;
    case Op::kScale:
      n.val = n.c * v(n.a);
      break;
    case Op::kMulScalar:
      n.val = v(n.a)[0] * v(n.b);
      break;
    case Op::kInvScalar: {
      n.val.resize(1);
      n.val[0] = 1.0 / v(n.a)[0];
      break;
    }
    case Op::kDot: {
      if (v(n.a).size() != v(n.b).size())
        throw std::invalid_argument("dot: size mismatch");
      n.val.resize(1);
      n.val[0] = v(n.a).dot(v(n.b));
      break;
    }
    case Op::kNorm: {
      n.val.resize(1);
      n.val[0] = v(n.a).norm();
      break;
    }
    case Op::kCross: {
      if (v(n.a).size() != 3 || v(n.b).size() != 3)
        throw std::invalid_argument("cross: operands must be 3-vectors");
      Vec3 a(v(n.a)[0], v(n.a)[1], v(n.a)[2]);
      Vec3 b(v(n.b)[0], v(n.b)[1], v(n.b)[2]);
      n.val = VectorXd(a.cross(b));
      break;
    }
    case Op::kNormalizeSafe: {
      const double m = v(n.a).norm();
      n.flag = 0;
      if (m >= n.c) {
        n.val = v(n.a) / m;
        if (m < 10.0 * n.c) n.flag |= 2;  // gradient cutoff band
      } else {
        n.val = VectorXd::Zero(v(n.a).size());
        n.flag |= 1 | 2;
      }
      break;
    }
    case Op::kAffine: {
      const MatrixXd& w = params().at(n.pa).value;
      const MatrixXd& b = params().at(n.pb).value;
      n.val.noalias() = w * v(n.a);
      n.val += b.col(0);
      break;
    }
    case Op::kSilu: {
      const VectorXd& x = v(n.a);
      n.val.resize(x.size());
      for (Eigen::Index i = 0; i < x.size(); ++i)
        n.val[i] = x[i] * sigmoid(x[i]);
      break;
    }
    case Op::kSoftplusPos: {
      const VectorXd& x = v(n.a);
      n.val.resize(x.size());
      for (Eigen::Index i = 0; i < x.size(); ++i)
        n.val[i] = softplus(x[i]) + kPositivityFloor;
      break;
    }
    case Op::kLayerNorm: {
      const VectorXd& x = v(n.a);
      const double mu = x.mean();
      const double var = (x.array() - mu).square().mean();
      n.aux_s = std::sqrt(var + kLayerNormEps);
      n.aux = (x.array() - mu).matrix() / n.aux_s;
      const MatrixXd& gain = params().at(n.pa).value;
      const MatrixXd& bias = params().at(n.pb).value;
      n.val = (n.aux.array() * gain.col(0).array()).matrix() + bias.col(0);
      break;
    }
    case Op::kSlice:
      n.val = v(n.a).segment(n.off, n.len);
      break;
    case Op::kConcat: {
      Eigen::Index total = 0;
      for (int k = 0; k < n.npool; ++k)
        total += v(pool_[static_cast<size_t>(n.pool + k)]).size();
      n.val.resize(total);
      Eigen::Index at = 0;
      for (int k = 0; k < n.npool; ++k) {
        const VectorXd& x = v(pool_[static_cast<size_t>(n.pool + k)]);
        n.val.segment(at, x.size()) = x;
        at += x.size();
      }
      break;
    }
  }
}

void Tape::replay() {
  for (auto& n : nodes_) {
    if (n.op == Op::kInput) continue;
    eval(n);
  }
}

void Tape::backward(Slot loss) {
  const int root = check(loss);
  if (nodes_[static_cast<size_t>(root)].val.size() != 1)
    throw std::invalid_argument("backward: loss slot must be scalar");

  for (auto& n : nodes_) n.adj = VectorXd::Zero(n.val.size());
  nodes_[static_cast<size_t>(root)].adj[0] = 1.0;

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    const VectorXd& g = n.adj;
    auto v = [&](int id) -> const VectorXd& {
      return nodes_[static_cast<size_t>(id)].val;
    };
    auto a = [&](int id) -> VectorXd& {
      return nodes_[static_cast<size_t>(id)].adj;
    };
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kAdd:
        a(n.a) += g;
        a(n.b) += g;
        break;
      case Op::kAddN:
        for (int k = 0; k < n.npool; ++k)
          a(pool_[static_cast<size_t>(n.pool + k)]) += g;
        break;
      case Op::kSub:
        a(n.a) += g;
        a(n.b) -= g;
        break;
      case Op::kNeg:
        a(n.a) -= g;
        break;
      case Op::kScale:
        a(n.a) += n.c * g;
        break;
      case Op::kMulScalar:
        a(n.a)[0] += g.dot(v(n.b));
        a(n.b) += v(n.a)[0] * g;
        break;
      case Op::kInvScalar:
        a(n.a)[0] -= g[0] * n.val[0] * n.val[0];
        break;
      case Op::kDot:
        a(n.a) += g[0] * v(n.b);
        a(n.b) += g[0] * v(n.a);
        break;
      case Op::kNorm: {
        const double m = n.val[0];
        if (m >= kNormEps) a(n.a) += (g[0] / m) * v(n.a);
        break;
      }
      case Op::kCross: {
        Vec3 av(v(n.a)[0], v(n.a)[1], v(n.a)[2]);
        Vec3 bv(v(n.b)[0], v(n.b)[1], v(n.b)[2]);
        Vec3 gv(g[0], g[1], g[2]);
        a(n.a) += VectorXd(bv.cross(gv));
        a(n.b) += VectorXd(gv.cross(av));
        break;
      }
      case Op::kNormalizeSafe: {
        if (n.flag & 2) break;  // degenerate or inside the cutoff band
        const double m = v(n.a).norm();
        const double yg = n.val.dot(g);
        a(n.a) += (g - yg * n.val) / m;
        break;
      }
      case Op::kAffine: {
        ParamTensor& w = params().at(n.pa);
        ParamTensor& b = params().at(n.pb);
        w.grad.noalias() += g * v(n.a).transpose();
        b.grad.col(0) += g;
        a(n.a).noalias() += w.value.transpose() * g;
        break;
      }
      case Op::kSilu: {
        const VectorXd& x = v(n.a);
        VectorXd& ga = a(n.a);
        for (Eigen::Index k = 0; k < x.size(); ++k) {
          const double s = sigmoid(x[k]);
          ga[k] += g[k] * s * (1.0 + x[k] * (1.0 - s));
        }
        break;
      }
      case Op::kSoftplusPos: {
        const VectorXd& x = v(n.a);
        VectorXd& ga = a(n.a);
        for (Eigen::Index k = 0; k < x.size(); ++k)
          ga[k] += g[k] * sigmoid(x[k]);
        break;
      }
      case Op::kLayerNorm: {
        ParamTensor& gain = params().at(n.pa);
        ParamTensor& bias = params().at(n.pb);
        gain.grad.col(0) += (g.array() * n.aux.array()).matrix();
        bias.grad.col(0) += g;
        const VectorXd gx = (g.array() * gain.value.col(0).array()).matrix();
        const double mg = gx.mean();
        const double mgx = (gx.array() * n.aux.array()).mean();
        a(n.a) +=
            ((gx.array() - mg - n.aux.array() * mgx) / n.aux_s).matrix();
        break;
      }
      case Op::kSlice:
        a(n.a).segment(n.off, n.len) += g;
        break;
      case Op::kConcat: {
        Eigen::Index at = 0;
        for (int k = 0; k < n.npool; ++k) {
          const int id = pool_[static_cast<size_t>(n.pool + k)];
          a(id) += g.segment(at, v(id).size());
          at += v(id).size();
        }
        break;
      }
    }
  }
}

}  // namespace momnet
