#include "stpam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace stpam::ad {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int e : s) n *= static_cast<std::size_t>(e);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& s, const char* what) {
  if (s.empty()) throw DimensionError(std::string(what) + ": empty shape");
  for (int e : s) {
    if (e <= 0) throw DimensionError(std::string(what) + ": non-positive extent in " + shape_str(s));
  }
}

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DomainError(std::string(what) + ": non-finite value");
  }
}

// Decompose a shape around one axis into [outer, extent, inner].
struct AxisView {
  std::size_t outer, ax, inner;
};
AxisView axis_view(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisView v{1, static_cast<std::size_t>(s[axis]), 1};
  for (int i = 0; i < axis; ++i) v.outer *= static_cast<std::size_t>(s[i]);
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= static_cast<std::size_t>(s[i]);
  return v;
}

}  // namespace

Param::Param(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)) {
  check_shape(shape, "Param");
  value.assign(numel(shape), 0.0);
}

// ---- Tensor accessors -------------------------------------------------------

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
std::span<const double> Tensor::values() const { return tape_->node(id_).val; }
bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

double Tensor::scalar() const {
  const auto& n = tape_->node(id_);
  if (n.val.size() != 1) throw UsageError("scalar() on tensor " + shape_str(n.shape));
  return n.val[0];
}

// ---- Tape -------------------------------------------------------------------

Tensor Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::check_mine(const Tensor& t, const char* what) const {
  if (!t.valid() || t.tape_ != this || t.id_ < 0 || t.id_ >= static_cast<int>(nodes_.size()))
    throw UsageError(std::string(what) + ": tensor is not on this tape");
}

Tensor Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape, "leaf");
  if (values.size() != numel(shape))
    throw DimensionError("leaf: " + std::to_string(values.size()) + " values for " + shape_str(shape));
  check_finite(values, "leaf");
  Node n;
  n.op = Op::kLeaf;
  n.shape = std::move(shape);
  n.val = std::move(values);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  Tensor t = leaf(std::move(shape), std::move(values), false);
  nodes_[t.id_].op = Op::kConstant;
  return t;
}

Tensor Tape::scalar_constant(double v) { return constant({1}, {v}); }

Tensor Tape::param(const Param& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Tensor(this, it->second);
  Tensor t = leaf(p.shape, p.value, true);
  nodes_[t.id_].bound = &p;
  param_nodes_.emplace(&p, t.id_);
  return t;
}

// ---- dense kernels ----------------------------------------------------------

void gemm_nn(int m, int k, int n, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double a = A[static_cast<std::size_t>(i) * k + p];
      const double* b = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

void gemm_nt(int m, int k, int n, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b = B + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] += s;
    }
  }
}

void gemm_tn(int m, int k, int n, const double* A, const double* B, double* C) {
  for (int p = 0; p < k; ++p) {
    const double* a = A + static_cast<std::size_t>(p) * m;
    const double* b = B + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double ai = a[i];
      double* c = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += ai * b[j];
    }
  }
}

// ---- operation builders ------------------------------------------------------

namespace {

Tape* tape_of(const Tensor& t, const char* what) {
  if (!t.valid()) throw UsageError(std::string(what) + ": empty tensor");
  return t.tape();
}

void same_tape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.tape() != b.tape()) throw UsageError(std::string(what) + ": tensors from different tapes");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape* t = tape_of(a, "matmul");
  same_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2)
    throw DimensionError("matmul: expects rank-2, got " + shape_str(sa) + " and " + shape_str(sb));
  if (sa[1] != sb[0])
    throw DimensionError("matmul: inner extents differ: " + shape_str(sa) + " vs " + shape_str(sb));
  const int m = sa[0], k = sa[1], n = sb[1];
  Tape::Node out;
  out.op = Op::kMatMul;
  out.shape = {m, n};
  out.val.assign(static_cast<std::size_t>(m) * n, 0.0);
  gemm_nn(m, k, n, a.values().data(), b.values().data(), out.val.data());
  out.in = {a.id(), b.id()};
  out.requires_grad = a.requires_grad() || b.requires_grad();
  return t->push(std::move(out));
}

Tensor transpose(const Tensor& a) {
  Tape* t = tape_of(a, "transpose");
  const Shape& s = a.shape();
  if (s.size() != 2) throw DimensionError("transpose: expects rank-2, got " + shape_str(s));
  const int m = s[0], n = s[1];
  Tape::Node out;
  out.op = Op::kTranspose;
  out.shape = {n, m};
  out.val.resize(a.values().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.val[static_cast<std::size_t>(j) * m + i] = a.values()[static_cast<std::size_t>(i) * n + j];
  out.in = {a.id()};
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

namespace {

Tensor binary_ew(Op op, const Tensor& a, const Tensor& b, const char* what) {
  Tape* t = tape_of(a, what);
  same_tape(a, b, what);
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tape::Node out;
  out.op = op;
  out.shape = a.shape();
  const auto va = a.values();
  const auto vb = b.values();
  out.val.resize(va.size());
  switch (op) {
    case Op::kAdd: for (std::size_t i = 0; i < va.size(); ++i) out.val[i] = va[i] + vb[i]; break;
    case Op::kSub: for (std::size_t i = 0; i < va.size(); ++i) out.val[i] = va[i] - vb[i]; break;
    case Op::kMul: for (std::size_t i = 0; i < va.size(); ++i) out.val[i] = va[i] * vb[i]; break;
    case Op::kDiv:
      for (std::size_t i = 0; i < va.size(); ++i) out.val[i] = va[i] / vb[i];
      check_finite(out.val, "div");
      break;
    default: throw UsageError("binary_ew: bad op");
  }
  out.in = {a.id(), b.id()};
  out.requires_grad = a.requires_grad() || b.requires_grad();
  return t->push(std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_ew(Op::kAdd, a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_ew(Op::kSub, a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_ew(Op::kMul, a, b, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_ew(Op::kDiv, a, b, "div"); }

Tensor add_scalar(const Tensor& a, double c) {
  Tape* t = tape_of(a, "add_scalar");
  if (!std::isfinite(c)) throw DomainError("add_scalar: non-finite constant");
  Tape::Node out;
  out.op = Op::kAddScalar;
  out.shape = a.shape();
  out.val.assign(a.values().begin(), a.values().end());
  for (double& x : out.val) x += c;
  out.in = {a.id()};
  out.c0 = c;
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

Tensor mul_scalar(const Tensor& a, double c) {
  Tape* t = tape_of(a, "mul_scalar");
  if (!std::isfinite(c)) throw DomainError("mul_scalar: non-finite constant");
  Tape::Node out;
  out.op = Op::kMulScalar;
  out.shape = a.shape();
  out.val.assign(a.values().begin(), a.values().end());
  for (double& x : out.val) x *= c;
  out.in = {a.id()};
  out.c0 = c;
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

Tensor relu(const Tensor& a) {
  Tape* t = tape_of(a, "relu");
  Tape::Node out;
  out.op = Op::kRelu;
  out.shape = a.shape();
  out.val.assign(a.values().begin(), a.values().end());
  for (double& x : out.val) x = x > 0.0 ? x : 0.0;
  out.in = {a.id()};
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

Tensor clamp_min(const Tensor& a, double floor) {
  Tape* t = tape_of(a, "clamp_min");
  Tape::Node out;
  out.op = Op::kClampMin;
  out.shape = a.shape();
  out.val.assign(a.values().begin(), a.values().end());
  for (double& x : out.val) x = x > floor ? x : floor;
  out.in = {a.id()};
  out.c0 = floor;
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

Tensor log(const Tensor& a) {
  Tape* t = tape_of(a, "log");
  for (double x : a.values()) {
    if (!(x > 0.0)) throw DomainError("log: non-positive input");
  }
  Tape::Node out;
  out.op = Op::kLog;
  out.shape = a.shape();
  out.val.assign(a.values().begin(), a.values().end());
  for (double& x : out.val) x = std::log(x);
  out.in = {a.id()};
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

Tensor exp(const Tensor& a) {
  Tape* t = tape_of(a, "exp");
  Tape::Node out;
  out.op = Op::kExp;
  out.shape = a.shape();
  out.val.assign(a.values().begin(), a.values().end());
  for (double& x : out.val) x = std::exp(x);
  check_finite(out.val, "exp");
  out.in = {a.id()};
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

namespace {

Tensor reduce_axis(Op op, const Tensor& a, int axis, const char* what) {
  Tape* t = tape_of(a, what);
  const AxisView v = axis_view(a.shape(), axis);
  Tape::Node out;
  out.op = op;
  out.shape = a.shape();
  out.shape[axis] = 1;
  out.val.assign(v.outer * v.inner, 0.0);
  const auto va = a.values();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t x = 0; x < v.ax; ++x) {
      const double* src = va.data() + (o * v.ax + x) * v.inner;
      double* dst = out.val.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  if (op == Op::kMeanAxis) {
    const double inv = 1.0 / static_cast<double>(v.ax);
    for (double& x : out.val) x *= inv;
  }
  out.in = {a.id()};
  out.i0 = axis;
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

}  // namespace

Tensor mean_axis(const Tensor& a, int axis) { return reduce_axis(Op::kMeanAxis, a, axis, "mean_axis"); }
Tensor sum_axis(const Tensor& a, int axis) { return reduce_axis(Op::kSumAxis, a, axis, "sum_axis"); }

Tensor sum_all(const Tensor& a) {
  Tape* t = tape_of(a, "sum_all");
  Tape::Node out;
  out.op = Op::kSumAll;
  out.shape = {1};
  double s = 0.0;
  for (double x : a.values()) s += x;
  out.val = {s};
  out.in = {a.id()};
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

Tensor softmax(const Tensor& a) {
  Tape* t = tape_of(a, "softmax");
  if (a.rank() != 1) throw DimensionError("softmax: expects rank-1, got " + shape_str(a.shape()));
  const auto v = a.values();
  Tape::Node out;
  out.op = Op::kSoftmax;
  out.shape = a.shape();
  out.val.resize(v.size());
  const double mx = *std::max_element(v.begin(), v.end());
  double denom = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.val[i] = std::exp(v[i] - mx);
    denom += out.val[i];
  }
  for (double& x : out.val) x /= denom;
  out.in = {a.id()};
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

Tensor pick(const Tensor& a, int index) {
  Tape* t = tape_of(a, "pick");
  if (a.rank() != 1) throw DimensionError("pick: expects rank-1, got " + shape_str(a.shape()));
  if (index < 0 || index >= a.shape()[0])
    throw DimensionError("pick: index " + std::to_string(index) + " out of range " + shape_str(a.shape()));
  Tape::Node out;
  out.op = Op::kPick;
  out.shape = {1};
  out.val = {a.values()[index]};
  out.in = {a.id()};
  out.i0 = index;
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

Tensor cross_entropy(const Tensor& p, int label) {
  return mul_scalar(log(pick(p, label)), -1.0);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  Tape* t = tape_of(parts[0], "concat");
  const Shape& s0 = parts[0].shape();
  Shape out_shape = s0;
  for (const Tensor& p : parts) {
    same_tape(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != s0[i])
        throw DimensionError("concat: shapes differ off-axis: " + shape_str(s0) + " vs " + shape_str(s));
    }
  }
  out_shape[axis] = 0;
  for (const Tensor& p : parts) out_shape[axis] += p.shape()[axis];

  Tape::Node out;
  out.op = Op::kConcat;
  out.shape = out_shape;
  out.val.assign(numel(out_shape), 0.0);
  const AxisView vo = axis_view(out_shape, axis);
  std::size_t off = 0;
  out.requires_grad = false;
  for (const Tensor& p : parts) {
    const AxisView vp = axis_view(p.shape(), axis);
    const auto vv = p.values();
    for (std::size_t o = 0; o < vp.outer; ++o) {
      const double* src = vv.data() + o * vp.ax * vp.inner;
      double* dst = out.val.data() + (o * vo.ax + off) * vo.inner;
      std::memcpy(dst, src, vp.ax * vp.inner * sizeof(double));
    }
    off += vp.ax;
    out.in.push_back(p.id());
    out.requires_grad = out.requires_grad || p.requires_grad();
  }
  out.i0 = axis;
  return t->push(std::move(out));
}

Tensor reshape(const Tensor& a, Shape shape) {
  Tape* t = tape_of(a, "reshape");
  check_shape(shape, "reshape");
  if (numel(shape) != a.values().size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  Tape::Node out;
  out.op = Op::kReshape;
  out.shape = std::move(shape);
  out.val.assign(a.values().begin(), a.values().end());
  out.in = {a.id()};
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

Tensor flatten(const Tensor& a) {
  return reshape(a, {static_cast<int>(a.values().size())});
}

Tensor mask_mul(const Tensor& a, const std::vector<double>& mask) {
  Tape* t = tape_of(a, "mask_mul");
  if (mask.size() != a.values().size())
    throw DimensionError("mask_mul: mask size " + std::to_string(mask.size()) + " vs tensor " +
                         shape_str(a.shape()));
  check_finite(mask, "mask_mul");
  Tape::Node out;
  out.op = Op::kMaskMul;
  out.shape = a.shape();
  out.val.resize(mask.size());
  const auto va = a.values();
  for (std::size_t i = 0; i < mask.size(); ++i) out.val[i] = va[i] * mask[i];
  out.in = {a.id()};
  out.aux = mask;
  out.requires_grad = a.requires_grad();
  return t->push(std::move(out));
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int pad) {
  Tape* t = tape_of(x, "conv2d");
  same_tape(x, w, "conv2d");
  same_tape(x, bias, "conv2d");
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 3 || sw.size() != 4 || bias.rank() != 1)
    throw DimensionError("conv2d: expects x[Cin x H x W], w[Cout x Cin x kh x kw], b[Cout]");
  const int cin = sx[0], h = sx[1], wd = sx[2];
  const int cout = sw[0], kh = sw[2], kw = sw[3];
  if (sw[1] != cin) throw DimensionError("conv2d: channel mismatch");
  if (bias.shape()[0] != cout) throw DimensionError("conv2d: bias extent mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("conv2d: kernel extents must be odd");
  if (pad != kh / 2 || pad != kw / 2)
    throw DimensionError("conv2d: padding must preserve spatial extents");

  Tape::Node out;
  out.op = Op::kConv2d;
  out.shape = {cout, h, wd};
  out.val.assign(static_cast<std::size_t>(cout) * h * wd, 0.0);
  const double* X = x.values().data();
  const double* W = w.values().data();
  const double* B = bias.values().data();
  for (int co = 0; co < cout; ++co) {
    double* o0 = out.val.data() + static_cast<std::size_t>(co) * h * wd;
    for (int i = 0; i < h * wd; ++i) o0[i] = B[co];
    for (int ci = 0; ci < cin; ++ci) {
      const double* x0 = X + static_cast<std::size_t>(ci) * h * wd;
      for (int dy = 0; dy < kh; ++dy) {
        for (int dx = 0; dx < kw; ++dx) {
          const double wv = W[((static_cast<std::size_t>(co) * cin + ci) * kh + dy) * kw + dx];
          const int y0 = std::max(0, pad - dy), y1 = std::min(h, h + pad - dy);
          const int x0i = std::max(0, pad - dx), x1i = std::min(wd, wd + pad - dx);
          for (int y = y0; y < y1; ++y) {
            const double* src = x0 + static_cast<std::size_t>(y + dy - pad) * wd + (dx - pad);
            double* dst = o0 + static_cast<std::size_t>(y) * wd;
            for (int xx = x0i; xx < x1i; ++xx) dst[xx] += wv * src[xx];
          }
        }
      }
    }
  }
  out.in = {x.id(), w.id(), bias.id()};
  out.i0 = pad;
  out.requires_grad = x.requires_grad() || w.requires_grad() || bias.requires_grad();
  return t->push(std::move(out));
}

Tensor broadcast_scalar(const Tensor& s, Shape shape) {
  Tape* t = tape_of(s, "broadcast_scalar");
  if (s.values().size() != 1) throw DimensionError("broadcast_scalar: source must be a scalar");
  check_shape(shape, "broadcast_scalar");
  Tape::Node out;
  out.op = Op::kBroadcast;
  out.val.assign(numel(shape), s.values()[0]);
  out.shape = std::move(shape);
  out.in = {s.id()};
  out.requires_grad = s.requires_grad();
  return t->push(std::move(out));
}

// ---- backward ---------------------------------------------------------------

namespace {

std::vector<double>& acc(std::vector<std::vector<double>>& adj, int id, std::size_t n) {
  auto& v = adj[id];
  if (v.empty()) v.assign(n, 0.0);
  return v;
}

}  // namespace

void Tape::sweep(int root_id, int stop_id, std::vector<std::vector<double>>& adj) const {
  for (int i = root_id; i >= stop_id; --i) {
    const Node& n = nodes_[i];
    const auto& g = adj[i];
    if (g.empty() || !n.requires_grad) continue;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kMatMul: {
        const Node& a = nodes_[n.in[0]];
        const Node& b = nodes_[n.in[1]];
        const int m = a.shape[0], k = a.shape[1], nn = b.shape[1];
        if (a.requires_grad)
          gemm_nt(m, nn, k, g.data(), b.val.data(), acc(adj, n.in[0], a.val.size()).data());
        if (b.requires_grad)
          gemm_tn(k, m, nn, a.val.data(), g.data(), acc(adj, n.in[1], b.val.size()).data());
        break;
      }
      case Op::kTranspose: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        auto& ga = acc(adj, n.in[0], a.val.size());
        const int m = a.shape[0], nn = a.shape[1];
        for (int r = 0; r < m; ++r)
          for (int c = 0; c < nn; ++c)
            ga[static_cast<std::size_t>(r) * nn + c] += g[static_cast<std::size_t>(c) * m + r];
        break;
      }
      case Op::kAdd:
      case Op::kSub: {
        const double sign = n.op == Op::kSub ? -1.0 : 1.0;
        if (nodes_[n.in[0]].requires_grad) {
          auto& ga = acc(adj, n.in[0], g.size());
          for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
        }
        if (nodes_[n.in[1]].requires_grad) {
          auto& gb = acc(adj, n.in[1], g.size());
          for (std::size_t j = 0; j < g.size(); ++j) gb[j] += sign * g[j];
        }
        break;
      }
      case Op::kMul: {
        const Node& a = nodes_[n.in[0]];
        const Node& b = nodes_[n.in[1]];
        if (a.requires_grad) {
          auto& ga = acc(adj, n.in[0], g.size());
          for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * b.val[j];
        }
        if (b.requires_grad) {
          auto& gb = acc(adj, n.in[1], g.size());
          for (std::size_t j = 0; j < g.size(); ++j) gb[j] += g[j] * a.val[j];
        }
        break;
      }
      case Op::kDiv: {
        const Node& a = nodes_[n.in[0]];
        const Node& b = nodes_[n.in[1]];
        if (a.requires_grad) {
          auto& ga = acc(adj, n.in[0], g.size());
          for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] / b.val[j];
        }
        if (b.requires_grad) {
          auto& gb = acc(adj, n.in[1], g.size());
          for (std::size_t j = 0; j < g.size(); ++j)
            gb[j] -= g[j] * a.val[j] / (b.val[j] * b.val[j]);
        }
        break;
      }
      case Op::kAddScalar: {
        if (!nodes_[n.in[0]].requires_grad) break;
        auto& ga = acc(adj, n.in[0], g.size());
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
        break;
      }
      case Op::kMulScalar: {
        if (!nodes_[n.in[0]].requires_grad) break;
        auto& ga = acc(adj, n.in[0], g.size());
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += n.c0 * g[j];
        break;
      }
      case Op::kRelu: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        auto& ga = acc(adj, n.in[0], g.size());
        for (std::size_t j = 0; j < g.size(); ++j)
          if (a.val[j] > 0.0) ga[j] += g[j];
        break;
      }
      case Op::kClampMin: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        auto& ga = acc(adj, n.in[0], g.size());
        for (std::size_t j = 0; j < g.size(); ++j)
          if (a.val[j] > n.c0) ga[j] += g[j];
        break;
      }
      case Op::kLog: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        auto& ga = acc(adj, n.in[0], g.size());
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] / a.val[j];
        break;
      }
      case Op::kExp: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        auto& ga = acc(adj, n.in[0], g.size());
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * n.val[j];
        break;
      }
      case Op::kMeanAxis:
      case Op::kSumAxis: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        const AxisView v = axis_view(a.shape, n.i0);
        const double scale = n.op == Op::kMeanAxis ? 1.0 / static_cast<double>(v.ax) : 1.0;
        auto& ga = acc(adj, n.in[0], a.val.size());
        for (std::size_t o = 0; o < v.outer; ++o) {
          const double* gs = g.data() + o * v.inner;
          for (std::size_t x = 0; x < v.ax; ++x) {
            double* dst = ga.data() + (o * v.ax + x) * v.inner;
            for (std::size_t j = 0; j < v.inner; ++j) dst[j] += scale * gs[j];
          }
        }
        break;
      }
      case Op::kSumAll: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        auto& ga = acc(adj, n.in[0], a.val.size());
        for (double& x : ga) x += g[0];
        break;
      }
      case Op::kBroadcast: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        double s = 0.0;
        for (double x : g) s += x;
        acc(adj, n.in[0], 1)[0] += s;
        break;
      }
      case Op::kSoftmax: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        auto& ga = acc(adj, n.in[0], g.size());
        double dot = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) dot += g[j] * n.val[j];
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += n.val[j] * (g[j] - dot);
        break;
      }
      case Op::kPick: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        acc(adj, n.in[0], a.val.size())[n.i0] += g[0];
        break;
      }
      case Op::kConcat: {
        const AxisView vo = axis_view(n.shape, n.i0);
        std::size_t off = 0;
        for (int src_id : n.in) {
          const Node& a = nodes_[src_id];
          const AxisView vp = axis_view(a.shape, n.i0);
          if (a.requires_grad) {
            auto& ga = acc(adj, src_id, a.val.size());
            for (std::size_t o = 0; o < vp.outer; ++o) {
              const double* gs = g.data() + (o * vo.ax + off) * vo.inner;
              double* dst = ga.data() + o * vp.ax * vp.inner;
              for (std::size_t j = 0; j < vp.ax * vp.inner; ++j) dst[j] += gs[j];
            }
          }
          off += vp.ax;
        }
        break;
      }
      case Op::kReshape: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        auto& ga = acc(adj, n.in[0], a.val.size());
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
        break;
      }
      case Op::kMaskMul: {
        const Node& a = nodes_[n.in[0]];
        if (!a.requires_grad) break;
        auto& ga = acc(adj, n.in[0], g.size());
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * n.aux[j];
        break;
      }
      case Op::kConv2d: {
        const Node& x = nodes_[n.in[0]];
        const Node& w = nodes_[n.in[1]];
        const Node& b = nodes_[n.in[2]];
        const int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
        const int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
        const int pad = n.i0;
        if (b.requires_grad) {
          auto& gb = acc(adj, n.in[2], b.val.size());
          for (int co = 0; co < cout; ++co) {
            const double* gs = g.data() + static_cast<std::size_t>(co) * h * wd;
            double s = 0.0;
            for (int j = 0; j < h * wd; ++j) s += gs[j];
            gb[co] += s;
          }
        }
        if (w.requires_grad) {
          auto& gw = acc(adj, n.in[1], w.val.size());
          for (int co = 0; co < cout; ++co) {
            const double* gs = g.data() + static_cast<std::size_t>(co) * h * wd;
            for (int ci = 0; ci < cin; ++ci) {
              const double* x0 = x.val.data() + static_cast<std::size_t>(ci) * h * wd;
              for (int dy = 0; dy < kh; ++dy) {
                for (int dx = 0; dx < kw; ++dx) {
                  const int y0 = std::max(0, pad - dy), y1 = std::min(h, h + pad - dy);
                  const int x0i = std::max(0, pad - dx), x1i = std::min(wd, wd + pad - dx);
                  double s = 0.0;
                  for (int y = y0; y < y1; ++y) {
                    const double* src = x0 + static_cast<std::size_t>(y + dy - pad) * wd + (dx - pad);
                    const double* gr = gs + static_cast<std::size_t>(y) * wd;
                    for (int xx = x0i; xx < x1i; ++xx) s += gr[xx] * src[xx];
                  }
                  gw[((static_cast<std::size_t>(co) * cin + ci) * kh + dy) * kw + dx] += s;
                }
              }
            }
          }
        }
        if (x.requires_grad) {
          auto& gx = acc(adj, n.in[0], x.val.size());
          for (int co = 0; co < cout; ++co) {
            const double* gs = g.data() + static_cast<std::size_t>(co) * h * wd;
            for (int ci = 0; ci < cin; ++ci) {
              double* gx0 = gx.data() + static_cast<std::size_t>(ci) * h * wd;
              for (int dy = 0; dy < kh; ++dy) {
                for (int dx = 0; dx < kw; ++dx) {
                  const double wv = w.val[((static_cast<std::size_t>(co) * cin + ci) * kh + dy) * kw + dx];
                  const int y0 = std::max(0, pad - dy), y1 = std::min(h, h + pad - dy);
                  const int x0i = std::max(0, pad - dx), x1i = std::min(wd, wd + pad - dx);
                  for (int y = y0; y < y1; ++y) {
                    double* dst = gx0 + static_cast<std::size_t>(y + dy - pad) * wd + (dx - pad);
                    const double* gr = gs + static_cast<std::size_t>(y) * wd;
                    for (int xx = x0i; xx < x1i; ++xx) dst[xx] += wv * gr[xx];
                  }
                }
              }
            }
          }
        }
        break;
      }
    }
  }
}

GradTable Tape::backward(const Tensor& root) {
  check_mine(root, "backward");
  if (root.values().size() != 1) throw UsageError("backward: root must be a scalar");
  std::vector<std::vector<double>> adj(root.id_ + 1);
  adj[root.id_] = {1.0};
  sweep(root.id_, 0, adj);

  GradTable table;
  table.tape_ = this;
  for (int i = 0; i <= root.id_; ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::kLeaf && n.requires_grad && !adj[i].empty())
      table.by_node_.emplace(i, std::move(adj[i]));
  }
  table.param_node_ = param_nodes_;
  return table;
}

std::vector<double> Tape::grad_of(const Tensor& root, const Tensor& intermediate) {
  check_mine(root, "grad_of");
  check_mine(intermediate, "grad_of");
  if (root.values().size() != 1) throw UsageError("grad_of: root must be a scalar");
  if (intermediate.id_ > root.id_)
    throw UsageError("grad_of: intermediate was recorded after the root");
  if (!intermediate.requires_grad())
    throw UsageError("grad_of: intermediate is not grad-tracked");
  std::vector<std::vector<double>> adj(root.id_ + 1);
  adj[root.id_] = {1.0};
  sweep(root.id_, intermediate.id_ + 1, adj);
  if (adj[intermediate.id_].empty())
    return std::vector<double>(intermediate.values().size(), 0.0);
  return std::move(adj[intermediate.id_]);
}

// ---- GradTable ---------------------------------------------------------------

const std::vector<double>& GradTable::wrt(const Tensor& leaf) const {
  if (!leaf.valid() || leaf.tape() != tape_) throw UsageError("GradTable: tensor from another tape");
  const int id = leaf.id();
  auto it = by_node_.find(id);
  if (it != by_node_.end()) return it->second;
  if (!leaf.requires_grad())
    throw UsageError("GradTable: tensor does not require grad");
  auto [zit, _] = zero_cache_.try_emplace(id, std::vector<double>(leaf.values().size(), 0.0));
  return zit->second;
}

const std::vector<double>* GradTable::wrt(const Param& p) const {
  auto it = param_node_.find(&p);
  if (it == param_node_.end()) return nullptr;
  auto git = by_node_.find(it->second);
  if (git != by_node_.end()) return &git->second;
  auto [zit, _] = zero_cache_.try_emplace(it->second, std::vector<double>(p.value.size(), 0.0));
  return &zit->second;
}

}  // namespace stpam::ad
