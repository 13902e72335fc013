#include "stpam/graph.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace stpam::graph {

int ElectrodeLayout::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

double ElectrodeLayout::arc(int i, int j) const {
  double dot = 0.0;
  for (int k = 0; k < 3; ++k) dot += pos[i][k] * pos[j][k];
  dot = std::max(-1.0, std::min(1.0, dot));
  return std::acos(dot);
}

namespace {

std::array<double, 2> project_2d(const std::array<double, 3>& p) {
  // azimuthal equidistant from the vertex; front (+y) is up
  const double theta = std::acos(std::max(-1.0, std::min(1.0, p[2])));
  const double r = std::hypot(p[0], p[1]);
  if (r < 1e-12) return {0.0, 0.0};
  return {theta * p[0] / r, theta * p[1] / r};
}

}  // namespace

ElectrodeLayout layout_from_string(const std::string& text) {
  ElectrodeLayout out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string name;
    double x, y, z;
    if (!(ls >> name)) continue;  // blank line
    if (!(ls >> x >> y >> z))
      throw FormatError("layout line " + std::to_string(lineno) + ": expected 'name x y z'");
    const double norm = std::sqrt(x * x + y * y + z * z);
    if (std::abs(norm - 1.0) > 1e-6)
      throw FormatError("layout line " + std::to_string(lineno) + ": '" + name +
                        "' is not on the unit sphere (|p| = " + std::to_string(norm) + ")");
    if (out.index_of(name) >= 0)
      throw FormatError("layout: duplicate channel name '" + name + "'");
    out.names.push_back(name);
    out.pos.push_back({x, y, z});
  }
  if (out.names.empty()) throw FormatError("layout: no channels");
  out.pos2d.reserve(out.pos.size());
  for (const auto& p : out.pos) out.pos2d.push_back(project_2d(p));
  return out;
}

ElectrodeLayout layout_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open layout file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return layout_from_string(ss.str());
}

Dense spatial_adjacency(const ElectrodeLayout& layout, double sigma_scale,
                        double sparsify_threshold) {
  const int n = layout.size();
  if (n < 2) throw UsageError("spatial_adjacency: need at least 2 electrodes");
  if (sigma_scale <= 0.0) throw ConfigError("spatial_adjacency: sigma-scale must be positive");
  if (sparsify_threshold < 0.0 || sparsify_threshold >= 1.0)
    throw ConfigError("spatial_adjacency: sparsify-threshold must be in [0,1)");

  auto dist = [&](int i, int j) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = layout.pos[i][k] - layout.pos[j][k];
      s += d * d;
    }
    return std::sqrt(s);
  };

  double mean_d = 0.0;
  int pairs = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = dist(i, j);
      if (d < 1e-12)
        throw FormatError("spatial_adjacency: channels '" + layout.names[i] + "' and '" +
                          layout.names[j] + "' share coordinates");
      mean_d += d;
      ++pairs;
    }
  }
  mean_d /= pairs;
  const double sigma = sigma_scale * mean_d;

  Dense a(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = dist(i, j);
      double w = std::exp(-d * d / (2.0 * sigma * sigma));
      if (w < sparsify_threshold) w = 0.0;
      a.at(i, j) = w;
      a.at(j, i) = w;
    }
  }
  return a;
}

Dense temporal_adjacency(int m) {
  if (m < 2) throw UsageError("temporal_adjacency: need at least 2 slices");
  Dense a(m);
  for (int i = 0; i + 1 < m; ++i) {
    a.at(i, i + 1) = 1.0;
    a.at(i + 1, i) = 1.0;
  }
  return a;
}

namespace {

void check_symmetric_nonneg(const Dense& a, const char* what) {
  for (int i = 0; i < a.n; ++i) {
    for (int j = 0; j < a.n; ++j) {
      if (a.at(i, j) != a.at(j, i)) throw UsageError(std::string(what) + ": adjacency not symmetric");
      if (a.at(i, j) < 0.0) throw UsageError(std::string(what) + ": negative adjacency entry");
    }
  }
}

}  // namespace

Dense normalized_laplacian(const Dense& a) {
  check_symmetric_nonneg(a, "normalized_laplacian");
  const int n = a.n;
  std::vector<double> inv_sqrt_deg(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double d = 0.0;
    for (int j = 0; j < n; ++j) d += a.at(i, j);
    inv_sqrt_deg[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;  // isolated node
  }
  Dense lap(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      lap.at(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt_deg[i] * a.at(i, j) * inv_sqrt_deg[j];
  }
  return lap;
}

double power_lambda_max(const Dense& m) {
  const int n = m.n;
  std::vector<double> v(n), w(n);
  for (int i = 0; i < n; ++i) v[i] = 1.0 + static_cast<double>(i) / n;  // breaks symmetry
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;

  double lambda = 0.0;
  for (int it = 0; it < 10000; ++it) {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += m.at(i, j) * v[j];
      w[i] = s;
    }
    double next = 0.0;
    for (int i = 0; i < n; ++i) next += v[i] * w[i];  // Rayleigh quotient
    double wn = 0.0;
    for (double x : w) wn += x * x;
    wn = std::sqrt(wn);
    if (wn < 1e-300) return 0.0;  // zero matrix
    for (int i = 0; i < n; ++i) v[i] = w[i] / wn;
    if (std::abs(next - lambda) <= 1e-9 * std::max(1.0, std::abs(next))) return next;
    lambda = next;
  }
  return lambda;
}

Dense scaled_laplacian(const Dense& lap, double lambda_max) {
  if (lambda_max <= 0.0) throw UsageError("scaled_laplacian: lambda_max must be positive");
  Dense out(lap.n);
  const double s = 2.0 / lambda_max;
  for (int i = 0; i < lap.n; ++i)
    for (int j = 0; j < lap.n; ++j)
      out.at(i, j) = s * lap.at(i, j) - (i == j ? 1.0 : 0.0);
  return out;
}

std::vector<Dense> chebyshev_basis(const Dense& scaled_lap, int order) {
  if (order < 0) throw UsageError("chebyshev_basis: order must be >= 0");
  const int n = scaled_lap.n;
  std::vector<Dense> basis;
  basis.reserve(order + 1);
  Dense ident(n);
  for (int i = 0; i < n; ++i) ident.at(i, i) = 1.0;
  basis.push_back(std::move(ident));
  if (order >= 1) basis.push_back(scaled_lap);
  for (int k = 2; k <= order; ++k) {
    Dense t(n);
    // T_k = 2 L~ T_{k-1} - T_{k-2}
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int p = 0; p < n; ++p) s += scaled_lap.at(i, p) * basis[k - 1].at(p, j);
        t.at(i, j) = 2.0 * s - basis[k - 2].at(i, j);
      }
    }
    basis.push_back(std::move(t));
  }
  return basis;
}

GraphSpec GraphSpec::build(Dense adjacency, int order, bool fixed_lambda2) {
  GraphSpec g;
  g.n = adjacency.n;
  g.adjacency = std::move(adjacency);
  for (int i = 0; i < g.n; ++i)
    if (g.adjacency.at(i, i) != 0.0) throw UsageError("GraphSpec: adjacency has self-loops");
  g.laplacian = normalized_laplacian(g.adjacency);
  g.lambda_max = fixed_lambda2 ? 2.0 : power_lambda_max(g.laplacian);
  if (g.lambda_max <= 0.0) g.lambda_max = 2.0;  // degenerate graphs
  g.scaled = scaled_laplacian(g.laplacian, g.lambda_max);
  g.order = order;
  g.basis = chebyshev_basis(g.scaled, order);
  return g;
}

}  // namespace stpam::graph
