#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stpam/common.hpp"

// Reverse-mode autodiff over dense row-major double tensors. A Tape records
// the forward computation; backward() replays it once per requested root.
// A tape and its tensors belong to one thread; independent tapes may run in
// parallel threads.

namespace stpam::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Persistent trainable value, owned by the model and placed onto a tape at
// the start of each forward pass.
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;

  Param() = default;
  Param(std::string n, Shape s);
  std::size_t size() const { return value.size(); }
};

class Tape;

// Lightweight handle into a tape node.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::span<const double> values() const;
  double scalar() const;  // requires numel == 1
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Tensor(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Gradients produced by one backward() call, keyed by leaf.
class GradTable {
 public:
  // Gradient w.r.t. a requires-grad leaf tensor; zeros if the leaf does not
  // influence the root.
  const std::vector<double>& wrt(const Tensor& leaf) const;
  // Gradient w.r.t. a parameter placed on the tape; nullptr if the parameter
  // was never placed.
  const std::vector<double>* wrt(const Param& p) const;

 private:
  friend class Tape;
  std::unordered_map<int, std::vector<double>> by_node_;
  std::unordered_map<const Param*, int> param_node_;
  mutable std::unordered_map<int, std::vector<double>> zero_cache_;
  const Tape* tape_ = nullptr;
};

enum class Op : std::uint8_t {
  kLeaf, kConstant, kMatMul, kTranspose, kAdd, kSub, kMul, kDiv,
  kAddScalar, kMulScalar, kRelu, kClampMin, kLog, kExp, kMeanAxis,
  kSumAxis, kSumAll, kSoftmax, kPick, kConcat, kReshape, kMaskMul, kConv2d,
  kBroadcast,
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. Values must be finite.
  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad);
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar_constant(double v);
  // Places a parameter as a requires-grad leaf; repeated placement of the
  // same parameter returns the same node.
  Tensor param(const Param& p);

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar root. Fills gradients for every requires-grad
  // leaf reachable from the root. Independent calls do not interact.
  GradTable backward(const Tensor& root);

  // d(root)/d(intermediate) as detached values. The intermediate must be
  // grad-tracked and recorded no later than the root.
  std::vector<double> grad_of(const Tensor& root, const Tensor& intermediate);

  // Node storage; used by the operation builders, not by model code.
  struct Node {
    Op op;
    Shape shape;
    std::vector<double> val;
    std::vector<int> in;
    bool requires_grad = false;
    int i0 = 0;                // axis / pick index / conv padding
    double c0 = 0.0;           // scalar operand
    std::vector<double> aux;   // constant mask for kMaskMul
    const Param* bound = nullptr;
  };

  Tensor push(Node n);
  const Node& node(int id) const { return nodes_[id]; }

 private:
  friend class Tensor;
  void check_mine(const Tensor& t, const char* what) const;
  void sweep(int root_id, int stop_id, std::vector<std::vector<double>>& adj) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, int> param_nodes_;
};

// ---- operations ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor relu(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);

// Mean / sum over one axis, keeping the axis with extent 1.
Tensor mean_axis(const Tensor& a, int axis);
Tensor sum_axis(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);

// 1-D softmax with max-subtraction.
Tensor softmax(const Tensor& a);
// Scalar element of a 1-D tensor.
Tensor pick(const Tensor& a, int index);
// -log(p[label]) for a 1-D probability vector.
Tensor cross_entropy(const Tensor& p, int label);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor flatten(const Tensor& a);
// Elementwise product with a constant mask (same numel). Gradient does not
// flow into the mask.
Tensor mask_mul(const Tensor& a, const std::vector<double>& mask);

// 2-D convolution: x[Cin x H x W], w[Cout x Cin x kh x kw], bias[Cout],
// odd kernel, symmetric zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int pad);

// Fills a shape with the value of a scalar tensor.
Tensor broadcast_scalar(const Tensor& s, Shape shape);

// ---- dense kernels shared with non-tape code --------------------------------

// C += A(m x k) * B(k x n)
void gemm_nn(int m, int k, int n, const double* A, const double* B, double* C);
// C += A^T(m x k, stored k x m) * B(k x n)
void gemm_tn(int m, int k, int n, const double* A, const double* B, double* C);
// C += A(m x k) * B^T(k x n, stored n x k)
void gemm_nt(int m, int k, int n, const double* A, const double* B, double* C);

}  // namespace stpam::ad
