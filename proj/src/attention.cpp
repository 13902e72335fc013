#include "stpam/attention.hpp"

#include <algorithm>
#include <cmath>

namespace stpam::attn {

int SelectionMask::kept() const {
  int n = 0;
  for (char k : keep) n += k != 0;
  return n;
}

TapedMap attention_map(ad::Tape& tape, const ad::Tensor& feature, const ad::Tensor& class_score,
                       int expert, int slice) {
  if (feature.rank() != 2) throw DimensionError("attention_map: feature must be [n x dF]");
  const int n = feature.shape()[0];
  const int df = feature.shape()[1];

  // Pooled gradients, detached: alpha_j = (1/n) sum_c d(score)/d(h_cj).
  const std::vector<double> grad = tape.grad_of(class_score, feature);
  std::vector<double> alpha(df, 0.0);
  for (int c = 0; c < n; ++c)
    for (int j = 0; j < df; ++j) alpha[j] += grad[static_cast<std::size_t>(c) * df + j];
  for (double& a : alpha) a /= n;

  // phi_c = sum_j relu(alpha_j * h_cj); alpha enters as a constant so the
  // heat stays differentiable w.r.t. the feature path only.
  std::vector<double> alpha_rows(static_cast<std::size_t>(n) * df);
  for (int c = 0; c < n; ++c)
    for (int j = 0; j < df; ++j) alpha_rows[static_cast<std::size_t>(c) * df + j] = alpha[j];
  ad::Tensor weighted = ad::mask_mul(feature, alpha_rows);
  ad::Tensor heat = ad::reshape(ad::sum_axis(ad::relu(weighted), 1), {n});

  TapedMap out;
  out.heat_live = heat;
  out.detached.heat.assign(heat.values().begin(), heat.values().end());
  out.detached.expert = expert;
  out.detached.slice = slice;
  normalize_map(out.detached);
  return out;
}

void normalize_map(AttentionMap& map) {
  const std::size_t n = map.heat.size();
  if (n == 0) throw UsageError("normalize_map: empty map");
  for (double h : map.heat) {
    if (h < 0.0) throw UsageError("normalize_map: negative heat value");
  }
  const double lo = *std::min_element(map.heat.begin(), map.heat.end());
  const double hi = *std::max_element(map.heat.begin(), map.heat.end());

  map.minmax.assign(n, 1.0);  // all-equal maps normalize to all-ones
  if (hi - lo > 0.0) {
    for (std::size_t i = 0; i < n; ++i) map.minmax[i] = (map.heat[i] - lo) / (hi - lo);
  }

  map.distribution.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    map.distribution[i] = map.heat[i] + kEpsNum;
    total += map.distribution[i];
  }
  for (double& d : map.distribution) d /= total;
}

ad::Tensor distribution_live(const ad::Tensor& heat) {
  if (heat.rank() != 1) throw DimensionError("distribution_live: expects rank-1 heat");
  ad::Tensor shifted = ad::add_scalar(heat, kEpsNum);
  ad::Tensor total = ad::sum_all(shifted);
  return ad::div(shifted, ad::broadcast_scalar(total, heat.shape()));
}

SelectionMask select_by_threshold(const AttentionMap& map, double threshold) {
  if (threshold < 0.0 || threshold >= 1.0)
    throw ConfigError("select_by_threshold: threshold must be in [0,1)");
  if (map.minmax.size() != map.heat.size())
    throw UsageError("select_by_threshold: map is not normalized");
  SelectionMask mask;
  mask.threshold = threshold;
  mask.keep.assign(map.minmax.size(), 0);
  bool any = false;
  for (std::size_t i = 0; i < map.minmax.size(); ++i) {
    if (map.minmax[i] >= threshold) {
      mask.keep[i] = 1;
      any = true;
    }
  }
  if (!any) {
    // keep the strongest node; lowest index wins ties
    std::size_t best = 0;
    for (std::size_t i = 1; i < map.minmax.size(); ++i)
      if (map.minmax[i] > map.minmax[best]) best = i;
    mask.keep[best] = 1;
  }
  return mask;
}

ad::Tensor apply_row_mask(const ad::Tensor& data, const SelectionMask& mask) {
  if (data.rank() != 2) throw DimensionError("apply_row_mask: expects rank-2 data");
  const int rows = data.shape()[0];
  const int cols = data.shape()[1];
  if (static_cast<int>(mask.keep.size()) != rows)
    throw DimensionError("apply_row_mask: mask length " + std::to_string(mask.keep.size()) +
                         " vs " + std::to_string(rows) + " rows");
  std::vector<double> full(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    const double v = mask.keep[r] ? 1.0 : 0.0;
    for (int c = 0; c < cols; ++c) full[static_cast<std::size_t>(r) * cols + c] = v;
  }
  return ad::mask_mul(data, full);
}

namespace {

void check_distribution_pair(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionError("kl: length mismatch");
  if (p.empty()) throw DimensionError("kl: empty distributions");
}

}  // namespace

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  check_distribution_pair(p, q);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += p[i] * (std::log(p[i]) - std::log(q[i]));
  return d;
}

double kl_penalty(const std::vector<double>& p, const std::vector<double>& q) {
  return std::exp(-kl_divergence(p, q));
}

ad::Tensor kl_divergence_live(const ad::Tensor& p, const ad::Tensor& q) {
  if (p.shape() != q.shape()) throw DimensionError("kl: length mismatch");
  return ad::sum_all(ad::mul(p, ad::sub(ad::log(p), ad::log(q))));
}

ad::Tensor kl_penalty_live(const ad::Tensor& p, const ad::Tensor& q) {
  return ad::exp(ad::mul_scalar(kl_divergence_live(p, q), -1.0));
}

}  // namespace stpam::attn
