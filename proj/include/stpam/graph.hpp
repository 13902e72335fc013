#pragma once

#include <array>
#include <string>
#include <vector>

#include "stpam/common.hpp"

// Electrode / slice-chain graphs, symmetric-normalized Laplacians and the
// Chebyshev polynomial basis used by the graph convolutions.

namespace stpam::graph {

// Dense symmetric matrix, row-major n x n.
struct Dense {
  int n = 0;
  std::vector<double> a;

  Dense() = default;
  explicit Dense(int n_) : n(n_), a(static_cast<std::size_t>(n_) * n_, 0.0) {}
  double& at(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }
};

struct ElectrodeLayout {
  std::vector<std::string> names;
  std::vector<std::array<double, 3>> pos;   // unit sphere
  std::vector<std::array<double, 2>> pos2d; // azimuthal-equidistant projection

  int size() const { return static_cast<int>(names.size()); }
  int index_of(const std::string& name) const;  // -1 if absent
  // Great-circle distance in radians between two channels.
  double arc(int i, int j) const;
};

// Parses the layout text format: one "name x y z" per line, '#' comments.
ElectrodeLayout layout_from_string(const std::string& text);
ElectrodeLayout layout_from_file(const std::string& path);
// The 64-channel table compiled into the library.
const ElectrodeLayout& builtin_biosemi64();

// Gaussian distance kernel over electrode positions.
// w_uv = exp(-|p_u - p_v|^2 / (2 sigma^2)), sigma = sigma_scale * mean pairwise
// distance; entries below sparsify_threshold are dropped.
Dense spatial_adjacency(const ElectrodeLayout& layout, double sigma_scale = 1.0,
                        double sparsify_threshold = 0.1);

// Chain graph over M chronologically ordered slices.
Dense temporal_adjacency(int m);

// Lap = I - D^{-1/2} A D^{-1/2}; isolated nodes get Lap_ii = 1.
Dense normalized_laplacian(const Dense& adjacency);

// Largest eigenvalue by power iteration (tol 1e-9, capped at 10000 iters).
double power_lambda_max(const Dense& m);

// L~ = (2 / lambda_max) * Lap - I
Dense scaled_laplacian(const Dense& lap, double lambda_max);

// [T_0 .. T_K], T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2}
std::vector<Dense> chebyshev_basis(const Dense& scaled_lap, int order);

// Immutable per-graph bundle shared by all experts on that graph.
struct GraphSpec {
  int n = 0;
  Dense adjacency;
  Dense laplacian;
  Dense scaled;
  double lambda_max = 0.0;
  int order = 0;
  std::vector<Dense> basis;

  static GraphSpec build(Dense adjacency, int order, bool fixed_lambda2 = false);
};

}  // namespace stpam::graph
