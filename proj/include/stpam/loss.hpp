#pragma once

#include <span>
#include <vector>

#include "stpam/model.hpp"

// Loss composition and Adam. The total objective is
//   L = Lc + LS + LT + gamma * (LKL_S + LKL_T)
// where the cross-entropy terms train every parameter and the diversity
// terms update only the experts' graph-convolution weights.

namespace stpam::optim {

struct LossBreakdown {
  double lc = 0.0;
  double ls = 0.0;   // sum over spatial experts
  double lt = 0.0;   // sum over temporal experts
  double kl_s = 0.0;
  double kl_t = 0.0;
  double gamma = 0.0;
  double total = 0.0;

  static LossBreakdown assemble(double lc, double ls, double lt, double kl_s, double kl_t,
                                double gamma);
};

// -(1/N) sum_n log(y_n[label_n]); y are post-softmax rows, floored at 1e-12.
double expert_ce_loss(std::span<const std::vector<double>> y, std::span<const int> labels);

// Batch diversity penalties from per-sample distribution pairs:
// mean_n exp(-D_KL(p_n || q_n)).
double kl_losses(std::span<const std::vector<double>> p, std::span<const std::vector<double>> q);

// Gradient of the full objective for one batch, averaged over samples, plus
// the averaged loss breakdown and training-mode predictions.
struct BatchResult {
  LossBreakdown loss;
  std::vector<std::vector<double>> grads;  // aligned with ModelState::params()
  std::vector<int> predicted;              // argmax of final P per sample
};

struct Batch {
  // borrowed sample pointers, each channels x T row-major
  std::vector<const double*> x;
  std::vector<int> labels;
  int t = 0;
};

// Reference implementation: plain sequential loop over the batch.
BatchResult batch_pass_serial(const model::ModelState& state, const Batch& batch);
// OpenMP version: per-sample tapes in parallel, gradients reduced in sample
// order; bit-identical to the serial reference.
BatchResult batch_pass(const model::ModelState& state, const Batch& batch);

// Forward + per-sample loss roots on the caller's tape. kl_root is invalid
// for variants without attention.
struct SampleLoss {
  model::ForwardTrace trace;
  ad::Tensor ce_root;
  ad::Tensor kl_root;
  double lc = 0.0, ls = 0.0, lt = 0.0, kl_s = 0.0, kl_t = 0.0;
};
SampleLoss sample_loss(ad::Tape& tape, const model::ModelState& state,
                       const model::SliceSequence& seq, int label);

struct AdamConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables clipping
};

class AdamState {
 public:
  AdamState(model::ModelState& state, const AdamConfig& cfg);

  // Bias-corrected update; gradients must cover every parameter.
  void step(std::span<const std::vector<double>> grads);
  long steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  model::ModelState* state_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

}  // namespace stpam::optim
