#include "stpam/export.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stpam/parallel.hpp"

namespace stpam::exporter {

AveragedMaps average_maps(const model::ModelState& state, const data::Dataset& ds, int n_samples,
                          int class_filter) {
  if (ds.channels != state.cfg.channels) throw ConfigError("average_maps: channel mismatch");
  std::vector<int> idx;
  for (int i = 0; i < ds.size() && static_cast<int>(idx.size()) < n_samples; ++i) {
    if (class_filter < 0 || ds.labels[i] == class_filter) idx.push_back(i);
  }
  if (idx.empty()) throw UsageError("average_maps: no samples selected");

  const int es = state.cfg.spatial_experts();
  const int et = state.cfg.temporal_experts();
  const int c = state.cfg.channels;
  const int m = state.cfg.m_slices;

  struct Acc {
    std::vector<std::vector<double>> spatial, temporal;
  };
  std::vector<Acc> acc(idx.size());

  const int stride = m == 1 ? 0 : (ds.t - state.cfg.t_window) / (m - 1);
  parallel_for(idx.size(), [&](std::size_t k) {
    ad::Tape tape;
    const auto seq = model::slice_input(ds.x[idx[k]], c, ds.t, state.cfg.t_window, m);
    model::ForwardOptions opts;
    opts.attn_class = model::AttnClass::kPredicted;
    opts.all_maps = true;
    const auto tr = model::forward(tape, state, seq, opts);
    Acc& a = acc[k];
    a.spatial.assign(es, std::vector<double>(c, 0.0));
    a.temporal.assign(et, std::vector<double>(m, 0.0));
    for (int e = 0; e < es; ++e) {
      for (const auto& map : tr.spatial_maps[e])
        for (int ch = 0; ch < c; ++ch) a.spatial[e][ch] += map.heat[ch];
      const int n_maps = static_cast<int>(tr.spatial_maps[e].size());
      if (n_maps > 0)
        for (double& v : a.spatial[e]) v /= n_maps;
    }
    for (int e = 0; e < et; ++e) {
      if (!tr.temporal_maps[e].heat.empty())
        for (int s = 0; s < m; ++s) a.temporal[e][s] = tr.temporal_maps[e].heat[s];
    }
  });

  AveragedMaps out;
  out.samples_used = static_cast<int>(idx.size());
  out.slice_stride = stride;
  out.t_window = state.cfg.t_window;
  out.fs = ds.fs;
  out.spatial.assign(es, std::vector<double>(c, 0.0));
  out.temporal.assign(et, std::vector<double>(m, 0.0));
  for (const auto& a : acc) {
    for (int e = 0; e < es; ++e)
      for (int ch = 0; ch < c; ++ch) out.spatial[e][ch] += a.spatial[e][ch];
    for (int e = 0; e < et; ++e)
      for (int s = 0; s < m; ++s) out.temporal[e][s] += a.temporal[e][s];
  }
  for (auto& v : out.spatial)
    for (double& x : v) x /= out.samples_used;
  for (auto& v : out.temporal)
    for (double& x : v) x /= out.samples_used;
  return out;
}

namespace {

std::vector<double> minmax_view(const std::vector<double>& v) {
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 1.0);
  if (hi - lo > 0.0)
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / (hi - lo);
  return out;
}

}  // namespace

std::pair<double, double> slice_window_ms(const AveragedMaps& maps, int slice) {
  const double ms_per_sample = 1000.0 / maps.fs;
  const double start = slice * maps.slice_stride * ms_per_sample;
  return {start, start + maps.t_window * ms_per_sample};
}

std::string maps_to_text(const AveragedMaps& maps, const graph::ElectrodeLayout& layout) {
  std::ostringstream os;
  os << "# averaged attention maps over " << maps.samples_used << " samples\n";
  for (std::size_t e = 0; e < maps.spatial.size(); ++e) {
    const auto mm = minmax_view(maps.spatial[e]);
    os << "map\tspatial\texpert\t" << e + 1 << "\n";
    os << "node\traw\tminmax\n";
    for (std::size_t ch = 0; ch < maps.spatial[e].size(); ++ch)
      os << layout.names[ch] << '\t' << maps.spatial[e][ch] << '\t' << mm[ch] << "\n";
    os << "\n";
  }
  for (std::size_t e = 0; e < maps.temporal.size(); ++e) {
    const auto mm = minmax_view(maps.temporal[e]);
    os << "map\ttemporal\texpert\t" << e + 1 << "\n";
    os << "window_ms\traw\tminmax\n";
    for (std::size_t s = 0; s < maps.temporal[e].size(); ++s) {
      const auto [t0, t1] = slice_window_ms(maps, static_cast<int>(s));
      os << t0 << '-' << t1 << '\t' << maps.temporal[e][s] << '\t' << mm[s] << "\n";
    }
    os << "\n";
  }
  return os.str();
}

int peak_index(const std::vector<double>& values) {
  if (values.empty()) throw UsageError("peak_index: empty");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::string topomap_svg(const graph::ElectrodeLayout& layout, const std::vector<double>& values,
                        const std::string& title) {
  if (static_cast<int>(values.size()) != layout.size())
    throw DimensionError("topomap_svg: value count mismatch");
  const auto mm = minmax_view(values);

  constexpr double kSize = 420.0, kHead = 170.0;
  const double cx = kSize / 2.0, cy = kSize / 2.0 + 10.0;
  double rmax = 0.0;
  for (const auto& p : layout.pos2d) rmax = std::max(rmax, std::hypot(p[0], p[1]));
  const double scale = kHead / (rmax > 0 ? rmax : 1.0);

  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kSize << "' height='" << kSize
     << "'>\n";
  os << "<text x='" << cx << "' y='18' text-anchor='middle' font-size='14'>" << title
     << "</text>\n";
  os << "<circle cx='" << cx << "' cy='" << cy << "' r='" << kHead + 14
     << "' fill='none' stroke='black'/>\n";
  // nose marker toward +y (front/up)
  os << "<path d='M " << cx - 12 << ' ' << cy - kHead - 12 << " L " << cx << ' '
     << cy - kHead - 30 << " L " << cx + 12 << ' ' << cy - kHead - 12
     << "' fill='none' stroke='black'/>\n";
  for (int i = 0; i < layout.size(); ++i) {
    const double px = cx + layout.pos2d[i][0] * scale;
    const double py = cy - layout.pos2d[i][1] * scale;
    const double v = mm[i];
    // white -> red ramp
    const int g = static_cast<int>(255.0 * (1.0 - v));
    os << "<circle cx='" << px << "' cy='" << py << "' r='11' fill='rgb(255," << g << ',' << g
       << ")' stroke='gray'/>\n";
    os << "<text x='" << px << "' y='" << py + 3 << "' text-anchor='middle' font-size='7'>"
       << layout.names[i] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace stpam::exporter
