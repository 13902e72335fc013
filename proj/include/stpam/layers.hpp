#pragma once

#include <span>
#include <string>
#include <vector>

#include "stpam/graph.hpp"
#include "stpam/tensor.hpp"

// Learnable layers: Chebyshev graph convolution, fully connected, 2-D
// convolution and the reduction head that fuses the spatial experts.

namespace stpam::nn {

enum class Act { kIdentity, kRelu };

ad::Tensor activate(Act act, const ad::Tensor& x);

// Glorot-uniform init over [-sqrt(6/(fin+fout)), +sqrt(6/(fin+fout))].
void glorot_init(ad::Param& p, int fan_in, int fan_out, Rng& rng);

// y = act( sum_k T_k(L~) x w_k ), x is [n x F_in] node features.
struct ChebConvLayer {
  const graph::GraphSpec* spec = nullptr;
  int f_in = 0, f_out = 0;
  Act act = Act::kRelu;
  std::vector<ad::Param> weights;  // K+1 matrices [F_in x F_out]

  ChebConvLayer() = default;
  ChebConvLayer(const std::string& name, const graph::GraphSpec& g, int f_in, int f_out, Act act);

  void init(Rng& rng);
  void collect(std::vector<ad::Param*>& out);

  // The basis constants are placed once per tape and shared by every expert
  // using the same graph.
  static std::vector<ad::Tensor> place_basis(ad::Tape& tape, const graph::GraphSpec& g);
  ad::Tensor forward(ad::Tape& tape, const ad::Tensor& x,
                     std::span<const ad::Tensor> basis) const;
};

// e = x W + b for a rank-1 input.
struct FcLayer {
  int f_in = 0, f_out = 0;
  ad::Param weight;  // [F_in x F_out]
  ad::Param bias;    // [F_out]

  FcLayer() = default;
  FcLayer(const std::string& name, int f_in, int f_out);

  void init(Rng& rng);
  void collect(std::vector<ad::Param*>& out);
  ad::Tensor forward(ad::Tape& tape, const ad::Tensor& x) const;
};

struct Conv2dLayer {
  int in_ch = 0, out_ch = 0, kernel = 0, pad = 0;
  ad::Param weight;  // [out x in x k x k]
  ad::Param bias;    // [out]

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, int in_ch, int out_ch, int kernel);

  void init(Rng& rng);
  void collect(std::vector<ad::Param*>& out);
  ad::Tensor forward(ad::Tape& tape, const ad::Tensor& x) const;
};

// Reduction head of the progressive spatial block: stacked expert features
// [E x C x d] -> conv(E -> channels) -> ReLU -> mean over electrodes ->
// flatten -> FC -> ReLU -> [d'].
struct ReduceHead {
  int experts = 0, d = 0, d_out = 0, channels = 0;
  Conv2dLayer conv;
  FcLayer fc;

  ReduceHead() = default;
  ReduceHead(const std::string& name, int experts, int d, int d_out, int channels = 8);

  void init(Rng& rng);
  void collect(std::vector<ad::Param*>& out);
  ad::Tensor forward(ad::Tape& tape, const ad::Tensor& stacked) const;
};

// Elementwise mean of equally shaped tensors.
ad::Tensor pool_mean(std::span<const ad::Tensor> parts);

}  // namespace stpam::nn
