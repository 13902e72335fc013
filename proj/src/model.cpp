#include "stpam/model.hpp"

#include <algorithm>
#include <cmath>

namespace stpam::model {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kStm: return "stm";
    case Variant::kStam: return "stam";
    case Variant::kStpam: return "stpam";
  }
  return "?";
}

std::optional<Variant> variant_from_name(const std::string& s) {
  if (s == "stm") return Variant::kStm;
  if (s == "stam") return Variant::kStam;
  if (s == "stpam") return Variant::kStpam;
  return std::nullopt;
}

int ModelConfig::spatial_experts() const {
  switch (variant) {
    case Variant::kStm: return 1;
    case Variant::kStam: return 2;
    case Variant::kStpam: return 3;
  }
  return 3;
}

int ModelConfig::temporal_experts() const { return spatial_experts(); }

ModelState ModelState::build(const ModelConfig& cfg, const graph::ElectrodeLayout& layout,
                             std::uint64_t seed) {
  if (layout.size() != cfg.channels)
    throw ConfigError("model: layout has " + std::to_string(layout.size()) + " channels, config " +
                      std::to_string(cfg.channels));
  if (cfg.m_slices < 2) throw ConfigError("model: M must be >= 2");
  if (cfg.classes < 2) throw ConfigError("model: Z must be >= 2");
  if (cfg.epsilon < 0.0 || cfg.epsilon >= 1.0)
    throw ConfigError("model: epsilon must be in [0,1)");

  ModelState st;
  st.cfg = cfg;
  st.layout = std::make_shared<graph::ElectrodeLayout>(layout);
  st.spatial_graph = std::make_shared<graph::GraphSpec>(graph::GraphSpec::build(
      graph::spatial_adjacency(layout, cfg.sigma_scale, cfg.sparsify), cfg.k_spatial,
      cfg.fixed_lambda2));
  st.temporal_graph = std::make_shared<graph::GraphSpec>(graph::GraphSpec::build(
      graph::temporal_adjacency(cfg.m_slices), cfg.k_temporal, cfg.fixed_lambda2));

  const int es = cfg.spatial_experts();
  const int et = cfg.temporal_experts();
  for (int e = 0; e < es; ++e) {
    const std::string base = "psl.e" + std::to_string(e + 1);
    SpatialExpert ex{
        nn::ChebConvLayer(base + ".cheb", *st.spatial_graph, cfg.t_window, cfg.d_spatial,
                          nn::Act::kRelu),
        nn::FcLayer(base + ".head", cfg.channels * cfg.d_spatial, cfg.classes)};
    st.spatial.push_back(std::move(ex));
  }
  st.reduce = nn::ReduceHead("psl.reduce", es, cfg.d_spatial, cfg.d_reduced);
  for (int e = 0; e < et; ++e) {
    const std::string base = "ptl.e" + std::to_string(e + 1);
    TemporalExpert ex{
        nn::ChebConvLayer(base + ".cheb", *st.temporal_graph, cfg.d_reduced, cfg.d_temporal,
                          nn::Act::kRelu),
        nn::FcLayer(base + ".head", cfg.m_slices * cfg.d_temporal, cfg.classes)};
    st.temporal.push_back(std::move(ex));
  }
  st.final_fc = nn::FcLayer("final", cfg.m_slices * cfg.d_temporal, cfg.classes);

  Rng rng(seed_mix(seed, 0x5350414dull));  // init stream
  for (auto& e : st.spatial) {
    e.conv.init(rng);
    e.head.init(rng);
  }
  st.reduce.init(rng);
  for (auto& e : st.temporal) {
    e.conv.init(rng);
    e.head.init(rng);
  }
  st.final_fc.init(rng);
  return st;
}

std::vector<ad::Param*> ModelState::params() {
  std::vector<ad::Param*> out;
  for (auto& e : spatial) {
    e.conv.collect(out);
    e.head.collect(out);
  }
  reduce.collect(out);
  for (auto& e : temporal) {
    e.conv.collect(out);
    e.head.collect(out);
  }
  final_fc.collect(out);
  return out;
}

std::vector<const ad::Param*> ModelState::params() const {
  auto mut = const_cast<ModelState*>(this)->params();
  return std::vector<const ad::Param*>(mut.begin(), mut.end());
}

std::vector<bool> ModelState::attention_gcn_flags() const {
  auto& self = const_cast<ModelState&>(*this);
  std::vector<bool> flags;
  for (auto& e : self.spatial) {
    for (std::size_t i = 0; i < e.conv.weights.size(); ++i) flags.push_back(true);
    flags.push_back(false);  // head.W
    flags.push_back(false);  // head.b
  }
  std::vector<ad::Param*> tmp;
  self.reduce.collect(tmp);
  for (std::size_t i = 0; i < tmp.size(); ++i) flags.push_back(false);
  for (auto& e : self.temporal) {
    for (std::size_t i = 0; i < e.conv.weights.size(); ++i) flags.push_back(true);
    flags.push_back(false);
    flags.push_back(false);
  }
  flags.push_back(false);  // final.W
  flags.push_back(false);  // final.b
  return flags;
}

std::size_t ModelState::param_count() const {
  std::size_t n = 0;
  for (const auto* p : params()) n += p->size();
  return n;
}

SliceSequence slice_input(std::span<const double> x, int channels, int t, int t_window, int m) {
  if (channels < 1 || t < 1) throw DimensionError("slice_input: bad sample extents");
  if (x.size() != static_cast<std::size_t>(channels) * t)
    throw DimensionError("slice_input: sample size mismatch");
  if (t < t_window) throw DimensionError("slice_input: T < T_M");
  if (m < 1) throw UsageError("slice_input: M must be >= 1");

  SliceSequence out;
  out.channels = channels;
  out.t_window = t_window;
  out.stride = m == 1 ? 0 : (t - t_window) / (m - 1);
  out.slices.reserve(m);
  for (int i = 0; i < m; ++i) {
    const int off = i * out.stride;
    std::vector<double> s(static_cast<std::size_t>(channels) * t_window);
    for (int c = 0; c < channels; ++c) {
      const double* src = x.data() + static_cast<std::size_t>(c) * t + off;
      std::copy(src, src + t_window, s.begin() + static_cast<std::size_t>(c) * t_window);
    }
    out.slices.push_back(std::move(s));
  }
  return out;
}

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace {

int attention_class(const ForwardOptions& opts, const ad::Tensor& probs) {
  if (opts.attn_class == AttnClass::kLabel) {
    if (opts.label < 0) throw UsageError("forward: label required for label-mode attention");
    return opts.label;
  }
  return argmax_lowest(probs.values());
}

}  // namespace

ForwardTrace forward(ad::Tape& tape, const ModelState& state, const SliceSequence& seq,
                     const ForwardOptions& opts) {
  const ModelConfig& cfg = state.cfg;
  if (seq.channels != cfg.channels || seq.t_window != cfg.t_window ||
      seq.count() != cfg.m_slices)
    throw DimensionError("forward: slice sequence does not match the model config");
  const int es = cfg.spatial_experts();
  const int et = cfg.temporal_experts();
  const int m = cfg.m_slices;

  // A spatial expert needs maps when it feeds a mask to the next expert, when
  // it sits in a diversity pair, or when the caller wants every map.
  auto needs_map = [&](int e, int total) {
    if (total < 2) return false;
    if (e + 1 < total) return true;                       // produces a mask
    if (e <= 1) return true;                              // (1,2) diversity pair
    if (cfg.kl_extended && e <= 2) return true;           // (2,3) pair
    return opts.all_maps;
  };

  ForwardTrace tr;
  tr.spatial_maps.resize(es);
  tr.spatial_masks.resize(std::max(0, es - 1));
  tr.temporal_maps.resize(et);
  tr.temporal_masks.resize(std::max(0, et - 1));

  // ---- progressive spatial block -------------------------------------------
  const auto basis_s = nn::ChebConvLayer::place_basis(tape, *state.spatial_graph);
  std::vector<ad::Tensor> y_acc(es);
  std::vector<std::vector<ad::Tensor>> heat_acc(es);
  std::vector<ad::Tensor> g_cols;
  g_cols.reserve(m);

  for (int i = 0; i < m; ++i) {
    ad::Tensor cur = tape.constant({cfg.channels, cfg.t_window}, seq.slices[i]);
    std::vector<ad::Tensor> feats;
    feats.reserve(es);
    for (int e = 0; e < es; ++e) {
      const auto& expert = state.spatial[e];
      ad::Tensor h = expert.conv.forward(tape, cur, basis_s);  // [C x d]
      feats.push_back(h);
      ad::Tensor probs = ad::softmax(expert.head.forward(tape, ad::flatten(h)));
      y_acc[e] = y_acc[e].valid() ? ad::add(y_acc[e], probs) : probs;

      attn::SelectionMask mask;
      if (needs_map(e, es)) {
        const int z = attention_class(opts, probs);
        attn::TapedMap tm = attn::attention_map(tape, h, ad::pick(probs, z), e, i);
        heat_acc[e].push_back(tm.heat_live);
        if (e + 1 < es) mask = attn::select_by_threshold(tm.detached, cfg.epsilon);
        tr.spatial_maps[e].push_back(std::move(tm.detached));
      }
      if (e + 1 < es) {
        cur = attn::apply_row_mask(cur, mask);
        tr.spatial_masks[e].push_back(std::move(mask));
      }
    }
    // reduction head: stack expert features as channels
    std::vector<ad::Tensor> chans;
    chans.reserve(es);
    for (const auto& f : feats) chans.push_back(ad::reshape(f, {1, cfg.channels, cfg.d_spatial}));
    ad::Tensor g_i = state.reduce.forward(tape, ad::concat(chans, 0));  // [d']
    g_cols.push_back(ad::reshape(g_i, {cfg.d_reduced, 1}));
  }

  tr.y_spatial.reserve(es);
  for (int e = 0; e < es; ++e)
    tr.y_spatial.push_back(ad::mul_scalar(y_acc[e], 1.0 / static_cast<double>(m)));
  tr.spatial_avg_heat.assign(es, ad::Tensor());
  for (int e = 0; e < es; ++e)
    if (!heat_acc[e].empty()) tr.spatial_avg_heat[e] = nn::pool_mean(heat_acc[e]);

  tr.g_feature = ad::concat(g_cols, 1);  // [d' x M]

  // ---- progressive temporal block -------------------------------------------
  const auto basis_t = nn::ChebConvLayer::place_basis(tape, *state.temporal_graph);
  ad::Tensor cur = ad::transpose(tr.g_feature);  // node-major [M x d']
  std::vector<ad::Tensor> o_feats;
  o_feats.reserve(et);
  tr.temporal_heat.assign(et, ad::Tensor());
  for (int e = 0; e < et; ++e) {
    const auto& expert = state.temporal[e];
    ad::Tensor o = expert.conv.forward(tape, cur, basis_t);  // [M x d'']
    o_feats.push_back(o);
    ad::Tensor probs = ad::softmax(expert.head.forward(tape, ad::flatten(o)));
    tr.y_temporal.push_back(probs);

    attn::SelectionMask mask;
    if (needs_map(e, et)) {
      const int z = attention_class(opts, probs);
      attn::TapedMap tm = attn::attention_map(tape, o, ad::pick(probs, z), e, -1);
      tr.temporal_heat[e] = tm.heat_live;
      if (e + 1 < et) mask = attn::select_by_threshold(tm.detached, cfg.epsilon);
      tr.temporal_maps[e] = std::move(tm.detached);
    }
    if (e + 1 < et) {
      cur = attn::apply_row_mask(cur, mask);
      tr.temporal_masks[e] = std::move(mask);
    }
  }

  tr.o_pooled = ad::transpose(nn::pool_mean(o_feats));  // [d'' x M]
  ad::Tensor logits = state.final_fc.forward(tape, ad::flatten(tr.o_pooled));
  tr.final_p = ad::softmax(logits);
  return tr;
}

Prediction predict(const ModelState& state, std::span<const double> x, int t) {
  ad::Tape tape;
  const SliceSequence seq =
      slice_input(x, state.cfg.channels, t, state.cfg.t_window, state.cfg.m_slices);
  ForwardOptions opts;
  opts.attn_class = AttnClass::kPredicted;
  const ForwardTrace tr = forward(tape, state, seq, opts);
  Prediction out;
  out.p.assign(tr.final_p.values().begin(), tr.final_p.values().end());
  out.cls = argmax_lowest(out.p);
  return out;
}

}  // namespace stpam::model
