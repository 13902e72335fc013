#pragma once

#include <string>
#include <vector>

#include "stpam/dataset.hpp"
#include "stpam/model.hpp"

// Attention-map aggregation over a dataset and the structured-text / SVG
// exports consumed by the CLI.

namespace stpam::exporter {

struct AveragedMaps {
  // [expert][channel], averaged over samples and slices
  std::vector<std::vector<double>> spatial;
  // [expert][slice], averaged over samples
  std::vector<std::vector<double>> temporal;
  int samples_used = 0;
  int slice_stride = 0;  // samples at the dataset rate
  int t_window = 0;
  double fs = 0.0;
};

// Runs inference with full map extraction on up to n_samples samples.
// class_filter: -1 = all samples, otherwise only samples of that label.
AveragedMaps average_maps(const model::ModelState& state, const data::Dataset& ds, int n_samples,
                          int class_filter = -1);

// One block per map: expert index, "spatial"/"temporal" kind, node name or
// window time range, raw phi and min-max phi.
std::string maps_to_text(const AveragedMaps& maps, const graph::ElectrodeLayout& layout);

// Flat-shaded scalp disc plot of one spatial map (no external assets).
std::string topomap_svg(const graph::ElectrodeLayout& layout, const std::vector<double>& values,
                        const std::string& title);

// Index of the strongest electrode / window.
int peak_index(const std::vector<double>& values);

// Time range covered by slice i, in milliseconds.
std::pair<double, double> slice_window_ms(const AveragedMaps& maps, int slice);

}  // namespace stpam::exporter
