#include "stpam/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "stpam/parallel.hpp"

namespace stpam::pipeline {

using cd = std::complex<double>;
using nlohmann::json;

double FilterSpec::magnitude(double freq_hz) const {
  const double w = 2.0 * std::numbers::pi * freq_hz / fs;
  const cd z1 = std::exp(cd(0.0, -w));
  const cd z2 = z1 * z1;
  cd h(1.0, 0.0);
  for (const auto& s : sections)
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return std::abs(h);
}

FilterSpec design_butterworth(int order, double low_hz, double high_hz, double fs) {
  if (order < 1) throw ConfigError("design_butterworth: order must be >= 1");
  if (!(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0))
    throw ConfigError("design_butterworth: need 0 < low < high < fs/2");

  // analog low-pass prototype, unit cutoff
  std::vector<cd> proto;
  proto.reserve(order);
  for (int k = 1; k <= order; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + order - 1.0) / (2.0 * order);
    proto.emplace_back(std::cos(theta), std::sin(theta));
  }

  // pre-warped band edges for the bilinear transform
  const double fs2 = 2.0 * fs;
  const double w1 = fs2 * std::tan(std::numbers::pi * low_hz / fs);
  const double w2 = fs2 * std::tan(std::numbers::pi * high_hz / fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  // low-pass -> band-pass: each prototype pole yields a quadratic pair
  std::vector<cd> poles;
  poles.reserve(2 * order);
  for (const cd& p : proto) {
    const cd half = 0.5 * p * bw;
    const cd disc = std::sqrt(half * half - w0sq);
    poles.push_back(half + disc);
    poles.push_back(half - disc);
  }
  // zeros: `order` at s = 0 plus `order` at infinity; gain bw^order

  // bilinear transform
  std::vector<cd> zpoles;
  zpoles.reserve(poles.size());
  cd denom_prod(1.0, 0.0);
  for (const cd& p : poles) {
    zpoles.push_back((fs2 + p) / (fs2 - p));
    denom_prod *= (fs2 - p);
  }
  // zeros at s=0 map to z=1, zeros at infinity map to z=-1
  const double num_prod = std::pow(fs2, order);  // prod(fs2 - 0)
  const double gain = std::pow(bw, order) * num_prod / denom_prod.real();
  if (!(gain > 0.0) || !std::isfinite(gain))
    throw DomainError("design_butterworth: degenerate gain");

  // pair conjugate poles into biquads; numerators are (z-1)(z+1)
  std::vector<cd> upper;
  std::vector<double> reals;
  for (const cd& p : zpoles) {
    if (p.imag() > 1e-10) upper.push_back(p);
    else if (std::abs(p.imag()) <= 1e-10) reals.push_back(p.real());
  }
  std::sort(upper.begin(), upper.end(),
            [](const cd& a, const cd& b) { return std::abs(a) > std::abs(b); });
  std::sort(reals.begin(), reals.end());
  if (static_cast<int>(upper.size() + reals.size() / 2) != order || reals.size() % 2 != 0)
    throw DomainError("design_butterworth: pole pairing failed");

  FilterSpec spec;
  spec.order = order;
  spec.low_hz = low_hz;
  spec.high_hz = high_hz;
  spec.fs = fs;
  const double g = std::pow(gain, 1.0 / order);
  auto push_section = [&](double a1, double a2) {
    Biquad s;
    s.b0 = g;
    s.b1 = 0.0;
    s.b2 = -g;
    s.a1 = a1;
    s.a2 = a2;
    // stability: roots of z^2 + a1 z + a2 inside the unit circle
    if (!(std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2))
      throw DomainError("design_butterworth: unstable section");
    spec.sections.push_back(s);
  };
  for (const cd& p : upper) push_section(-2.0 * p.real(), std::norm(p));
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2)
    push_section(-(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]);
  return spec;
}

namespace {

// steady-state initial conditions for a unit-amplitude constant input
void section_zi(const Biquad& s, double& z1, double& z2) {
  const double h1 = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  z2 = s.b2 - s.a2 * h1;
  z1 = s.b1 - s.a1 * h1 + z2;
}

void run_section(const Biquad& s, std::vector<double>& x, bool with_zi) {
  double z1 = 0.0, z2 = 0.0;
  if (with_zi && !x.empty()) {
    section_zi(s, z1, z2);
    z1 *= x[0];
    z2 *= x[0];
  }
  for (double& xi : x) {
    const double y = s.b0 * xi + z1;
    z1 = s.b1 * xi - s.a1 * y + z2;
    z2 = s.b2 * xi - s.a2 * y;
    xi = y;
  }
}

}  // namespace

std::vector<double> sosfilt(const FilterSpec& spec, const std::vector<double>& x) {
  std::vector<double> y = x;
  for (const auto& s : spec.sections) run_section(s, y, false);
  return y;
}

std::vector<double> filter_zero_phase(const FilterSpec& spec, const std::vector<double>& x) {
  const int ntaps = 2 * static_cast<int>(spec.sections.size()) + 1;
  const int padlen = 3 * ntaps;
  if (static_cast<int>(x.size()) <= padlen)
    throw UsageError("filter_zero_phase: signal shorter than the reflection padding");

  // odd reflection about the end points
  std::vector<double> ext;
  ext.reserve(x.size() + 2 * padlen);
  for (int i = padlen; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  const std::size_t n = x.size();
  for (int i = 1; i <= padlen; ++i) ext.push_back(2.0 * x.back() - x[n - 1 - i]);

  for (const auto& s : spec.sections) run_section(s, ext, true);
  std::reverse(ext.begin(), ext.end());
  for (const auto& s : spec.sections) run_section(s, ext, true);
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + padlen, ext.begin() + padlen + n);
}

void filter_sample(const FilterSpec& spec, std::vector<double>& sample, int channels, int t) {
  if (sample.size() != static_cast<std::size_t>(channels) * t)
    throw DimensionError("filter_sample: extent mismatch");
  std::vector<double> chan(t);
  for (int c = 0; c < channels; ++c) {
    std::copy_n(sample.begin() + static_cast<std::size_t>(c) * t, t, chan.begin());
    const auto filtered = filter_zero_phase(spec, chan);
    std::copy_n(filtered.begin(), t, sample.begin() + static_cast<std::size_t>(c) * t);
  }
}

void zscore(std::vector<double>& sample, int channels, int t) {
  if (sample.size() != static_cast<std::size_t>(channels) * t)
    throw DimensionError("zscore: extent mismatch");
  for (int c = 0; c < channels; ++c) {
    double* x = sample.data() + static_cast<std::size_t>(c) * t;
    double mean = 0.0;
    for (int i = 0; i < t; ++i) mean += x[i];
    mean /= t;
    double var = 0.0;
    for (int i = 0; i < t; ++i) var += (x[i] - mean) * (x[i] - mean);
    const double sd = std::sqrt(var / t);  // population std
    if (sd < 1e-12) {
      for (int i = 0; i < t; ++i) x[i] = 0.0;
    } else {
      for (int i = 0; i < t; ++i) x[i] = (x[i] - mean) / sd;
    }
  }
}

std::vector<double> decimate(const std::vector<double>& sample, int channels, int t, int factor) {
  if (factor < 1) throw ConfigError("decimate: factor must be >= 1");
  if (factor == 1) return sample;
  const int t_out = t / factor;  // trailing remainder dropped
  std::vector<double> out(static_cast<std::size_t>(channels) * t_out);
  for (int c = 0; c < channels; ++c) {
    const double* src = sample.data() + static_cast<std::size_t>(c) * t;
    double* dst = out.data() + static_cast<std::size_t>(c) * t_out;
    for (int i = 0; i < t_out; ++i) dst[i] = src[static_cast<std::size_t>(i) * factor];
  }
  return out;
}

SegmentResult segment(const RawRecording& rec) {
  for (std::size_t i = 1; i < rec.events.size(); ++i) {
    if (rec.events[i].onset <= rec.events[i - 1].onset)
      throw UsageError("segment: event onsets must be strictly increasing");
  }
  SegmentResult out;
  out.window = static_cast<int>(rec.fs);  // 1 second
  for (const auto& ev : rec.events) {
    if (ev.onset < 0 || ev.onset + out.window > rec.samples) {
      ++out.skipped;
      continue;
    }
    std::vector<double> s(static_cast<std::size_t>(rec.channels) * out.window);
    for (int c = 0; c < rec.channels; ++c) {
      const double* src = rec.channel(c) + ev.onset;
      std::copy_n(src, out.window, s.begin() + static_cast<std::size_t>(c) * out.window);
    }
    out.samples.push_back(std::move(s));
    out.labels.push_back(ev.label);
  }
  return out;
}

data::Dataset preprocess(const RawRecording& rec, const PreprocessConfig& cfg) {
  if (rec.fs < cfg.target_fs)
    throw ConfigError("preprocess: recording rate below the target rate");
  const double ratio = rec.fs / cfg.target_fs;
  const int factor = static_cast<int>(ratio + 0.5);
  if (std::abs(ratio - factor) > 1e-9)
    throw ConfigError("preprocess: sampling rate must be an integer multiple of the target");

  const FilterSpec spec = design_butterworth(cfg.filter_order, cfg.low_hz, cfg.high_hz, rec.fs);
  SegmentResult seg = segment(rec);

  data::Dataset ds;
  ds.channels = rec.channels;
  ds.t = seg.window / factor;
  ds.fs = cfg.target_fs;
  ds.channel_names = rec.channel_names;
  ds.label_names = {"non-target", "target"};
  ds.labels = seg.labels;
  ds.x.resize(seg.samples.size());

  parallel_for(seg.samples.size(), [&](std::size_t i) {
    std::vector<double>& s = seg.samples[i];
    filter_sample(spec, s, rec.channels, seg.window);
    std::vector<double> d = decimate(s, rec.channels, seg.window, factor);
    zscore(d, rec.channels, ds.t);
    ds.x[i] = std::move(d);
  });
  return ds;
}

// ---- raw container -----------------------------------------------------------

void write_raw(const RawRecording& rec, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir);

  json meta;
  meta["schema_version"] = 1;
  meta["channels"] = rec.channels;
  meta["fs"] = rec.fs;
  meta["samples"] = rec.samples;
  meta["channel_names"] = rec.channel_names;
  {
    std::ofstream f(dir + "/raw_meta.json");
    if (!f) throw IoError("cannot write " + dir + "/raw_meta.json");
    f << meta.dump(2) << "\n";
  }
  {
    std::ofstream f(dir + "/signal.bin", std::ios::binary);
    if (!f) throw IoError("cannot write " + dir + "/signal.bin");
    std::vector<float> buf(rec.signal.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(rec.signal[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  {
    std::ofstream f(dir + "/events.tsv");
    if (!f) throw IoError("cannot write " + dir + "/events.tsv");
    for (const auto& ev : rec.events) f << ev.onset << '\t' << ev.label << '\n';
  }
}

RawRecording read_raw(const std::string& dir) {
  std::ifstream mf(dir + "/raw_meta.json");
  if (!mf) throw IoError("cannot open " + dir + "/raw_meta.json");
  json meta;
  try {
    mf >> meta;
  } catch (const json::exception& e) {
    throw FormatError("bad raw_meta.json: " + std::string(e.what()));
  }
  RawRecording rec;
  rec.channels = meta.at("channels").get<int>();
  rec.fs = meta.at("fs").get<double>();
  rec.samples = meta.at("samples").get<long>();
  rec.channel_names = meta.at("channel_names").get<std::vector<std::string>>();

  rec.signal.resize(static_cast<std::size_t>(rec.channels) * rec.samples);
  {
    std::ifstream f(dir + "/signal.bin", std::ios::binary);
    if (!f) throw IoError("cannot open " + dir + "/signal.bin");
    std::vector<float> buf(rec.signal.size());
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw FormatError("signal.bin truncated in " + dir);
    for (std::size_t i = 0; i < buf.size(); ++i) rec.signal[i] = buf[i];
  }
  {
    std::ifstream f(dir + "/events.tsv");
    if (!f) throw IoError("cannot open " + dir + "/events.tsv");
    long onset;
    int label;
    while (f >> onset >> label) rec.events.push_back({onset, label});
  }
  return rec;
}

}  // namespace stpam::pipeline
