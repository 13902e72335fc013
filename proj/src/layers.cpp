#include "stpam/layers.hpp"

#include <cmath>

namespace stpam::nn {

ad::Tensor activate(Act act, const ad::Tensor& x) {
  return act == Act::kRelu ? ad::relu(x) : x;
}

void glorot_init(ad::Param& p, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : p.value) v = rng.uniform(-bound, bound);
}

// ---- ChebConvLayer ----------------------------------------------------------

ChebConvLayer::ChebConvLayer(const std::string& name, const graph::GraphSpec& g, int f_in_,
                             int f_out_, Act act_)
    : spec(&g), f_in(f_in_), f_out(f_out_), act(act_) {
  if (f_in < 1 || f_out < 1) throw ConfigError("ChebConvLayer: feature extents must be >= 1");
  weights.reserve(g.order + 1);
  for (int k = 0; k <= g.order; ++k)
    weights.emplace_back(name + ".w" + std::to_string(k), ad::Shape{f_in, f_out});
}

void ChebConvLayer::init(Rng& rng) {
  for (auto& w : weights) glorot_init(w, f_in, f_out, rng);
}

void ChebConvLayer::collect(std::vector<ad::Param*>& out) {
  for (auto& w : weights) out.push_back(&w);
}

std::vector<ad::Tensor> ChebConvLayer::place_basis(ad::Tape& tape, const graph::GraphSpec& g) {
  std::vector<ad::Tensor> basis;
  basis.reserve(g.basis.size());
  for (const auto& t : g.basis) basis.push_back(tape.constant({g.n, g.n}, t.a));
  return basis;
}

ad::Tensor ChebConvLayer::forward(ad::Tape& tape, const ad::Tensor& x,
                                  std::span<const ad::Tensor> basis) const {
  if (x.rank() != 2 || x.shape()[0] != spec->n || x.shape()[1] != f_in)
    throw DimensionError("ChebConvLayer: input " + ad::shape_str(x.shape()) + ", expected [" +
                         std::to_string(spec->n) + "x" + std::to_string(f_in) + "]");
  if (static_cast<int>(basis.size()) != spec->order + 1)
    throw UsageError("ChebConvLayer: basis order mismatch");
  ad::Tensor acc;
  for (int k = 0; k <= spec->order; ++k) {
    // T_0 = I: skip the identity product
    ad::Tensor diffused = k == 0 ? x : ad::matmul(basis[k], x);
    ad::Tensor term = ad::matmul(diffused, tape.param(weights[k]));
    acc = k == 0 ? term : ad::add(acc, term);
  }
  return activate(act, acc);
}

// ---- FcLayer ----------------------------------------------------------------

FcLayer::FcLayer(const std::string& name, int f_in_, int f_out_)
    : f_in(f_in_), f_out(f_out_),
      weight(name + ".W", ad::Shape{f_in_, f_out_}),
      bias(name + ".b", ad::Shape{f_out_}) {
  if (f_in < 1 || f_out < 1) throw ConfigError("FcLayer: feature extents must be >= 1");
}

void FcLayer::init(Rng& rng) {
  glorot_init(weight, f_in, f_out, rng);
  for (double& v : bias.value) v = 0.0;
}

void FcLayer::collect(std::vector<ad::Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

ad::Tensor FcLayer::forward(ad::Tape& tape, const ad::Tensor& x) const {
  if (x.rank() != 1 || x.shape()[0] != f_in)
    throw DimensionError("FcLayer: input " + ad::shape_str(x.shape()) + ", expected [" +
                         std::to_string(f_in) + "]");
  ad::Tensor row = ad::reshape(x, {1, f_in});
  ad::Tensor prod = ad::reshape(ad::matmul(row, tape.param(weight)), {f_out});
  return ad::add(prod, tape.param(bias));
}

// ---- Conv2dLayer ------------------------------------------------------------

Conv2dLayer::Conv2dLayer(const std::string& name, int in_ch_, int out_ch_, int kernel_)
    : in_ch(in_ch_), out_ch(out_ch_), kernel(kernel_), pad(kernel_ / 2),
      weight(name + ".W", ad::Shape{out_ch_, in_ch_, kernel_, kernel_}),
      bias(name + ".b", ad::Shape{out_ch_}) {
  if (kernel % 2 == 0) throw ConfigError("Conv2dLayer: kernel extent must be odd");
}

void Conv2dLayer::init(Rng& rng) {
  glorot_init(weight, in_ch * kernel * kernel, out_ch * kernel * kernel, rng);
  for (double& v : bias.value) v = 0.0;
}

void Conv2dLayer::collect(std::vector<ad::Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

ad::Tensor Conv2dLayer::forward(ad::Tape& tape, const ad::Tensor& x) const {
  return ad::conv2d(x, tape.param(weight), tape.param(bias), pad);
}

// ---- ReduceHead -------------------------------------------------------------

ReduceHead::ReduceHead(const std::string& name, int experts_, int d_, int d_out_, int channels_)
    : experts(experts_), d(d_), d_out(d_out_), channels(channels_),
      conv(name + ".conv", experts_, channels_, 3),
      fc(name + ".fc", channels_ * d_, d_out_) {}

void ReduceHead::init(Rng& rng) {
  conv.init(rng);
  fc.init(rng);
}

void ReduceHead::collect(std::vector<ad::Param*>& out) {
  conv.collect(out);
  fc.collect(out);
}

ad::Tensor ReduceHead::forward(ad::Tape& tape, const ad::Tensor& stacked) const {
  if (stacked.rank() != 3 || stacked.shape()[0] != experts || stacked.shape()[2] != d)
    throw DimensionError("ReduceHead: input " + ad::shape_str(stacked.shape()));
  ad::Tensor h = ad::relu(conv.forward(tape, stacked));  // [channels x C x d]
  ad::Tensor pooled = ad::mean_axis(h, 1);               // [channels x 1 x d]
  ad::Tensor flat = ad::flatten(pooled);                 // [channels * d]
  return ad::relu(fc.forward(tape, flat));               // [d']
}

// ---- pooling ----------------------------------------------------------------

ad::Tensor pool_mean(std::span<const ad::Tensor> parts) {
  if (parts.empty()) throw UsageError("pool_mean: no inputs");
  ad::Tensor acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = ad::add(acc, parts[i]);
  return parts.size() == 1 ? acc : ad::mul_scalar(acc, 1.0 / static_cast<double>(parts.size()));
}

}  // namespace stpam::nn
