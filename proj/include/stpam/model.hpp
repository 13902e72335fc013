#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stpam/attention.hpp"
#include "stpam/graph.hpp"
#include "stpam/layers.hpp"

// Full model assembly: the progressive spatial block (experts over the
// electrode graph + reduction head), the progressive temporal block (experts
// over the slice-chain graph + pooling) and the final classifier, together
// with the reduced STM / STAM variants.

namespace stpam::model {

enum class Variant { kStm, kStam, kStpam };

const char* variant_name(Variant v);
std::optional<Variant> variant_from_name(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::kStpam;
  int channels = 64;    // C
  int t_window = 32;    // T_M
  int m_slices = 16;    // M
  int k_spatial = 2;
  int d_spatial = 32;   // d
  int k_temporal = 3;
  int d_temporal = 8;   // d''
  int d_reduced = 64;   // d'
  int classes = 2;      // Z
  double epsilon = 0.2;
  double gamma = 0.01;
  double sigma_scale = 1.0;
  double sparsify = 0.1;
  bool fixed_lambda2 = false;
  bool kl_extended = false;  // also penalize the (2,3) map pair

  int spatial_experts() const;
  int temporal_experts() const;
  bool operator==(const ModelConfig&) const = default;
};

struct SpatialExpert {
  nn::ChebConvLayer conv;  // [C x T_M] -> [C x d]
  nn::FcLayer head;        // C*d -> Z
};

struct TemporalExpert {
  nn::ChebConvLayer conv;  // [M x d'] -> [M x d'']
  nn::FcLayer head;        // M*d'' -> Z
};

class ModelState {
 public:
  ModelConfig cfg;
  std::shared_ptr<const graph::GraphSpec> spatial_graph;
  std::shared_ptr<const graph::GraphSpec> temporal_graph;
  std::shared_ptr<const graph::ElectrodeLayout> layout;
  std::vector<SpatialExpert> spatial;
  nn::ReduceHead reduce;
  std::vector<TemporalExpert> temporal;
  nn::FcLayer final_fc;

  // Builds a variant with Glorot-initialized weights.
  static ModelState build(const ModelConfig& cfg, const graph::ElectrodeLayout& layout,
                          std::uint64_t seed);

  // Trainable parameters in canonical (checkpoint) order.
  std::vector<ad::Param*> params();
  std::vector<const ad::Param*> params() const;
  // Marks the graph-convolution weights of the spatial/temporal experts,
  // aligned with params(); the diversity loss updates only these.
  std::vector<bool> attention_gcn_flags() const;
  std::size_t param_count() const;
};

// An epoch re-windowed into M slices of length T_M.
struct SliceSequence {
  int channels = 0;
  int t_window = 0;
  int stride = 0;
  std::vector<std::vector<double>> slices;  // each C x T_M row-major

  int count() const { return static_cast<int>(slices.size()); }
};

// Sliding windows at offsets {0, stride, ...}, stride = floor((T-T_M)/(M-1)).
// Trailing samples beyond the last window are dropped. M = 1 takes a single
// window at offset 0.
SliceSequence slice_input(std::span<const double> x, int channels, int t, int t_window, int m);

enum class AttnClass { kLabel, kPredicted };

struct ForwardOptions {
  AttnClass attn_class = AttnClass::kPredicted;
  int label = -1;             // required for kLabel
  bool all_maps = false;      // also compute the last expert's maps (export)
};

struct ForwardTrace {
  // live tensors, valid while the tape is alive
  std::vector<ad::Tensor> y_spatial;        // per expert, slice-averaged probs [Z]
  std::vector<ad::Tensor> y_temporal;       // per expert probs [Z]
  ad::Tensor final_p;                       // [Z]
  ad::Tensor g_feature;                     // [d' x M]
  ad::Tensor o_pooled;                      // [d'' x M]
  std::vector<ad::Tensor> spatial_avg_heat; // per expert, slice-averaged heat [C] (may be invalid)
  std::vector<ad::Tensor> temporal_heat;    // per expert heat [M] (may be invalid)

  // detached records
  std::vector<std::vector<attn::AttentionMap>> spatial_maps;   // [expert][slice]
  std::vector<attn::AttentionMap> temporal_maps;               // [expert], empty heat = absent
  std::vector<std::vector<attn::SelectionMask>> spatial_masks; // [stage][slice]
  std::vector<attn::SelectionMask> temporal_masks;             // [stage]
};

// Runs the whole forward pass on the caller's tape.
ForwardTrace forward(ad::Tape& tape, const ModelState& state, const SliceSequence& slices,
                     const ForwardOptions& opts);

struct Prediction {
  int cls = 0;
  std::vector<double> p;
};

// Inference: attention class is each expert's own argmax; final class is the
// argmax of P with ties toward the lower index.
Prediction predict(const ModelState& state, std::span<const double> x, int t);

int argmax_lowest(std::span<const double> v);

}  // namespace stpam::model
