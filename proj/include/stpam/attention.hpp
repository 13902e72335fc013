#pragma once

#include <vector>

#include "stpam/tensor.hpp"

// Gradient attention maps: pooled class-score gradients weight the feature
// rows, rectified heat per node, threshold selection and the KL diversity
// measure between experts' maps.

namespace stpam::attn {

// Floor applied to distribution views before logs.
inline constexpr double kEpsNum = 1e-8;

struct AttentionMap {
  std::vector<double> heat;          // phi >= 0
  std::vector<double> minmax;        // (phi - min) / (max - min); all-ones when constant
  std::vector<double> distribution;  // (phi + eps) / sum(phi + eps)
  int expert = -1;
  int slice = -1;  // -1 for temporal maps
};

struct SelectionMask {
  std::vector<char> keep;  // per node
  double threshold = 0.0;

  int kept() const;
};

// Heat values both as a live tensor (for the diversity loss) and as a
// detached record (for masking and export).
struct TapedMap {
  ad::Tensor heat_live;  // [n]
  AttentionMap detached;
};

// feature: [n x dF] grad-tracked intermediate; class_score: scalar on the
// same tape downstream of feature. alpha_j = mean_c d(score)/d(h_cj) is
// detached; phi_c = sum_j relu(alpha_j * h_cj) stays on the tape.
TapedMap attention_map(ad::Tape& tape, const ad::Tensor& feature, const ad::Tensor& class_score,
                       int expert, int slice = -1);

// Fills the minmax / distribution views from heat.
void normalize_map(AttentionMap& map);

// Distribution view of heat values as a live tensor.
ad::Tensor distribution_live(const ad::Tensor& heat);

// Keep node c iff minmax[c] >= threshold; if nothing qualifies, keep the
// argmax (lowest index on ties). threshold must be in [0, 1).
SelectionMask select_by_threshold(const AttentionMap& map, double threshold);

// Zeroes dropped rows of a [rows x cols] tensor; mask length == rows.
ad::Tensor apply_row_mask(const ad::Tensor& data, const SelectionMask& mask);

// KL divergence between detached distribution views, and exp(-D).
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);
double kl_penalty(const std::vector<double>& p, const std::vector<double>& q);

// On-tape D_KL(p || q) and exp(-D) for distribution-view tensors.
ad::Tensor kl_divergence_live(const ad::Tensor& p, const ad::Tensor& q);
ad::Tensor kl_penalty_live(const ad::Tensor& p, const ad::Tensor& q);

}  // namespace stpam::attn
