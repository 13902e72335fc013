#include "stpam/loss.hpp"

#include <cmath>

#include "stpam/parallel.hpp"

namespace stpam::optim {

namespace {
constexpr double kProbFloor = 1e-12;
}

LossBreakdown LossBreakdown::assemble(double lc, double ls, double lt, double kl_s, double kl_t,
                                      double gamma) {
  LossBreakdown b;
  b.lc = lc;
  b.ls = ls;
  b.lt = lt;
  b.kl_s = kl_s;
  b.kl_t = kl_t;
  b.gamma = gamma;
  b.total = lc + ls + lt + gamma * (kl_s + kl_t);
  return b;
}

double expert_ce_loss(std::span<const std::vector<double>> y, std::span<const int> labels) {
  if (y.size() != labels.size() || y.empty()) throw UsageError("expert_ce_loss: batch mismatch");
  double s = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n) {
    const int z = labels[n];
    if (z < 0 || z >= static_cast<int>(y[n].size()))
      throw UsageError("expert_ce_loss: label out of range");
    s -= std::log(std::max(y[n][z], kProbFloor));
  }
  return s / static_cast<double>(y.size());
}

double kl_losses(std::span<const std::vector<double>> p, std::span<const std::vector<double>> q) {
  if (p.size() != q.size() || p.empty()) throw UsageError("kl_losses: batch mismatch");
  double s = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) s += attn::kl_penalty(p[n], q[n]);
  return s / static_cast<double>(p.size());
}

SampleLoss sample_loss(ad::Tape& tape, const model::ModelState& state,
                       const model::SliceSequence& seq, int label) {
  const auto& cfg = state.cfg;
  if (label < 0 || label >= cfg.classes) throw UsageError("sample_loss: label out of range");

  model::ForwardOptions opts;
  opts.attn_class = model::AttnClass::kLabel;
  opts.label = label;

  SampleLoss out;
  out.trace = model::forward(tape, state, seq, opts);
  const auto& tr = out.trace;

  auto nll = [&](const ad::Tensor& probs) {
    return ad::mul_scalar(ad::log(ad::clamp_min(ad::pick(probs, label), kProbFloor)), -1.0);
  };

  ad::Tensor ce = nll(tr.final_p);
  out.lc = ce.scalar();
  for (const auto& y : tr.y_spatial) {
    ad::Tensor t = nll(y);
    out.ls += t.scalar();
    ce = ad::add(ce, t);
  }
  for (const auto& y : tr.y_temporal) {
    ad::Tensor t = nll(y);
    out.lt += t.scalar();
    ce = ad::add(ce, t);
  }
  out.ce_root = ce;

  // diversity penalties over the (1,2) pair, optionally extended to (2,3)
  std::vector<std::pair<int, int>> pairs;
  if (cfg.spatial_experts() >= 2) pairs.emplace_back(0, 1);
  if (cfg.kl_extended && cfg.spatial_experts() >= 3) pairs.emplace_back(1, 2);

  ad::Tensor kl;
  for (auto [a, b] : pairs) {
    ad::Tensor pa = attn::distribution_live(tr.spatial_avg_heat[a]);
    ad::Tensor pb = attn::distribution_live(tr.spatial_avg_heat[b]);
    ad::Tensor pen = attn::kl_penalty_live(pa, pb);
    out.kl_s += pen.scalar();
    kl = kl.valid() ? ad::add(kl, pen) : pen;
  }
  for (auto [a, b] : pairs) {
    ad::Tensor pa = attn::distribution_live(tr.temporal_heat[a]);
    ad::Tensor pb = attn::distribution_live(tr.temporal_heat[b]);
    ad::Tensor pen = attn::kl_penalty_live(pa, pb);
    out.kl_t += pen.scalar();
    kl = ad::add(kl, pen);
  }
  out.kl_root = kl;
  return out;
}

namespace {

// Per-sample gradient of ce + gamma * kl with the diversity part restricted
// to the experts' graph-convolution weights.
void sample_grads(ad::Tape& tape, const model::ModelState& state, SampleLoss& sl,
                  const std::vector<const ad::Param*>& params, const std::vector<bool>& gcn_flag,
                  std::vector<std::vector<double>>& out) {
  const double gamma = state.cfg.gamma;
  const ad::GradTable ce = tape.backward(sl.ce_root);
  out.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::vector<double>* g = ce.wrt(*params[i]);
    out[i] = g ? *g : std::vector<double>(params[i]->size(), 0.0);
  }
  if (sl.kl_root.valid() && gamma != 0.0) {
    const ad::GradTable kl = tape.backward(sl.kl_root);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!gcn_flag[i]) continue;
      const std::vector<double>* g = kl.wrt(*params[i]);
      if (!g) continue;
      for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += gamma * (*g)[j];
    }
  }
}

struct PerSample {
  std::vector<std::vector<double>> grads;
  double lc = 0, ls = 0, lt = 0, kl_s = 0, kl_t = 0;
  int predicted = 0;
};

PerSample one_sample(const model::ModelState& state, const double* x, int t, int label,
                     const std::vector<const ad::Param*>& params,
                     const std::vector<bool>& gcn_flag) {
  ad::Tape tape;
  const auto seq = model::slice_input(
      std::span<const double>(x, static_cast<std::size_t>(state.cfg.channels) * t),
      state.cfg.channels, t, state.cfg.t_window, state.cfg.m_slices);
  SampleLoss sl = sample_loss(tape, state, seq, label);
  PerSample out;
  sample_grads(tape, state, sl, params, gcn_flag, out.grads);
  out.lc = sl.lc;
  out.ls = sl.ls;
  out.lt = sl.lt;
  out.kl_s = sl.kl_s;
  out.kl_t = sl.kl_t;
  out.predicted = model::argmax_lowest(sl.trace.final_p.values());
  return out;
}

BatchResult reduce_samples(const model::ModelState& state, const Batch& batch,
                           std::vector<PerSample>& per) {
  const std::size_t n = per.size();
  const double inv = 1.0 / static_cast<double>(n);
  BatchResult out;
  out.grads = std::move(per[0].grads);
  for (auto& g : out.grads)
    for (double& v : g) v *= inv;
  double lc = per[0].lc, ls = per[0].ls, lt = per[0].lt, kls = per[0].kl_s, klt = per[0].kl_t;
  out.predicted.resize(n);
  out.predicted[0] = per[0].predicted;
  for (std::size_t s = 1; s < n; ++s) {
    for (std::size_t i = 0; i < out.grads.size(); ++i) {
      const auto& src = per[s].grads[i];
      auto& dst = out.grads[i];
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += inv * src[j];
    }
    lc += per[s].lc;
    ls += per[s].ls;
    lt += per[s].lt;
    kls += per[s].kl_s;
    klt += per[s].kl_t;
    out.predicted[s] = per[s].predicted;
  }
  out.loss = LossBreakdown::assemble(lc * inv, ls * inv, lt * inv, kls * inv, klt * inv,
                                     state.cfg.gamma);
  return out;
}

void check_batch(const Batch& batch) {
  if (batch.x.empty() || batch.x.size() != batch.labels.size())
    throw UsageError("batch_pass: empty or mismatched batch");
}

}  // namespace

BatchResult batch_pass_serial(const model::ModelState& state, const Batch& batch) {
  check_batch(batch);
  const auto params = state.params();
  const auto flags = state.attention_gcn_flags();
  std::vector<PerSample> per(batch.x.size());
  for (std::size_t s = 0; s < batch.x.size(); ++s)
    per[s] = one_sample(state, batch.x[s], batch.t, batch.labels[s], params, flags);
  return reduce_samples(state, batch, per);
}

BatchResult batch_pass(const model::ModelState& state, const Batch& batch) {
  check_batch(batch);
  const auto params = state.params();
  const auto flags = state.attention_gcn_flags();
  std::vector<PerSample> per(batch.x.size());
  parallel_for(batch.x.size(), [&](std::size_t s) {
    per[s] = one_sample(state, batch.x[s], batch.t, batch.labels[s], params, flags);
  });
  return reduce_samples(state, batch, per);
}

// ---- Adam --------------------------------------------------------------------

AdamState::AdamState(model::ModelState& state, const AdamConfig& cfg)
    : state_(&state), cfg_(cfg) {
  for (const auto* p : state.params()) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamState::step(std::span<const std::vector<double>> grads) {
  auto params = state_->params();
  if (grads.size() != params.size()) throw UsageError("adam_step: gradient table incomplete");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i]->size())
      throw UsageError("adam_step: gradient shape mismatch for " + params[i]->name);
  }

  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads)
      for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->value;
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = scale * g[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace stpam::optim
