// Reverse-mode autodiff over an append-only record of vector-valued
// operations. The op set is exactly what the model needs: dense affine
// layers, silu, a softplus positivity map, layer normalization, and the
// 3-vector algebra used by edge frames. Scalars are size-1 vectors.
//
// Parameters (weights, biases, layer-norm gain/bias) live in a ParamStore;
// the tape holds activations only. backward() accumulates parameter
// adjoints into the store.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "momnet/geom.hpp"

namespace momnet {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ParamTensor {
  std::string name;
  MatrixXd value;
  MatrixXd grad;
};

class ParamStore {
 public:
  int add(const std::string& name, MatrixXd value);
  int find(const std::string& name) const;  // -1 when absent
  ParamTensor& at(int id) { return tensors_.at(static_cast<size_t>(id)); }
  const ParamTensor& at(int id) const {
    return tensors_.at(static_cast<size_t>(id));
  }
  int count() const { return static_cast<int>(tensors_.size()); }
  std::size_t scalar_count() const;

  void zero_grad();
  double grad_norm() const;
  void scale_grad(double s);

 private:
  std::vector<ParamTensor> tensors_;
};

struct Slot {
  int id = -1;
};

class Tape {
 public:
  explicit Tape(ParamStore* params = nullptr) : params_(params) {}

  // Leaves. Inputs are constants; adjoints of leaves are still tracked so
  // input-sensitivities can be read back after backward().
  Slot input(VectorXd v);
  Slot input3(const Vec3& v);
  Slot input1(double v);

  Slot add(Slot a, Slot b);
  Slot add_n(const std::vector<Slot>& xs);
  Slot sub(Slot a, Slot b);
  Slot neg(Slot a);
  Slot scale(Slot a, double c);
  Slot mul_scalar(Slot s, Slot a);  // s is size-1
  Slot inv_scalar(Slot s);          // 1/s, s size-1 and nonzero
  Slot dot(Slot a, Slot b);
  Slot norm(Slot a);
  Slot cross(Slot a, Slot b);
  // u/|u| for |u| >= eps, zero vector otherwise. Gradients are cut off
  // (treated as constant) within 10*eps of the degenerate branch, where the
  // derivative of x/|x| is unbounded.
  Slot normalize_safe(Slot a, double eps = kNormEps);
  Slot affine(int weight_id, int bias_id, Slot x);
  Slot silu(Slot a);
  Slot softplus_pos(Slot a);  // softplus(x) + 1e-12, strictly positive
  Slot layer_norm(Slot x, int gain_id, int bias_id);
  Slot slice(Slot a, int offset, int len);
  Slot concat(const std::vector<Slot>& xs);

  const VectorXd& val(Slot s) const { return nodes_.at(check(s)).val; }
  double val1(Slot s) const;
  Vec3 val3(Slot s) const;
  bool degenerate(Slot s) const;  // normalize_safe results only

  // Seeds the adjoint of a scalar loss slot and sweeps the record in
  // reverse. Parameter gradients accumulate into the store.
  void backward(Slot loss);
  const VectorXd& adjoint(Slot s) const { return nodes_.at(check(s)).adj; }

  // Recomputes every non-leaf value from the recorded ops. Used by tests to
  // pin down replay determinism.
  void replay();

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kInput,
    kAdd,
    kAddN,
    kSub,
    kNeg,
    kScale,
    kMulScalar,
    kInvScalar,
    kDot,
    kNorm,
    kCross,
    kNormalizeSafe,
    kAffine,
    kSilu,
    kSoftplusPos,
    kLayerNorm,
    kSlice,
    kConcat,
  };

  struct Node {
    Op op;
    int a = -1, b = -1;      // input slots
    int pa = -1, pb = -1;    // parameter ids (affine / layer_norm)
    int pool = 0, npool = 0; // add_n / concat operand range
    int off = 0, len = 0;    // slice
    double c = 0.0;          // scale factor or eps
    std::uint8_t flag = 0;   // normalize_safe: 1 degenerate, 2 grad cutoff
    VectorXd val;
    VectorXd adj;
    VectorXd aux;            // layer_norm: normalized x
    double aux_s = 0.0;      // layer_norm: sqrt(var + eps)
  };

  int check(Slot s) const;
  Slot push(Node n);
  void eval(Node& n);
  ParamStore& params();

  ParamStore* params_;
  std::vector<Node> nodes_;
  std::vector<int> pool_;
};

}  // namespace momnet
