#include "stpam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stpam/parallel.hpp"

namespace stpam::synth {

using cd = std::complex<double>;

void fft_inplace(std::vector<cd>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw UsageError("fft: length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const cd wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cd u = a[i + k];
        const cd v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

SynthConfig preset(const std::string& name, const graph::ElectrodeLayout& layout) {
  SynthConfig cfg;
  cfg.layout = layout;
  if (name == "public-like") {
    cfg.fs = 256.0;
    cfg.p300_amp = 1.0;
    cfg.latency_mean_ms = 400.0;
    cfg.latency_jitter_ms = 20.0;
  } else if (name == "ired-like") {
    cfg.fs = 1024.0;
    cfg.p300_amp = 0.6;
    cfg.latency_mean_ms = 450.0;
    cfg.latency_jitter_ms = 80.0;
  } else {
    throw ConfigError("unknown preset: " + name + " (expected public-like or ired-like)");
  }
  return cfg;
}

namespace {

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// unit-RMS pink noise block via spectral synthesis
std::vector<double> pink_noise(std::size_t len, double fs, double exponent, Rng& rng) {
  const std::size_t n = next_pow2(std::max<std::size_t>(len, 8));
  std::vector<cd> spec(n, cd(0.0, 0.0));
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(n);
    if (f < 0.5) continue;  // drift below the analysis band carries no power
    const double amp = std::pow(f, -exponent / 2.0);
    const cd v(rng.normal() * amp, k == n / 2 ? 0.0 : rng.normal() * amp);
    spec[k] = v;
    spec[n - k] = std::conj(v);
  }
  fft_inplace(spec, true);
  std::vector<double> out(len);
  double rms = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    out[i] = spec[i].real();
    rms += out[i] * out[i];
  }
  rms = std::sqrt(rms / static_cast<double>(len));
  if (rms > 0.0) {
    for (double& x : out) x /= rms;
  }
  return out;
}

// raised-cosine bump of the given width centered at c (seconds)
void add_bump(double* x, long len, double fs, double center_s, double width_s, double amp) {
  const long i0 = std::max(0L, static_cast<long>((center_s - width_s / 2) * fs));
  const long i1 = std::min(len - 1, static_cast<long>((center_s + width_s / 2) * fs));
  for (long i = i0; i <= i1; ++i) {
    const double t = static_cast<double>(i) / fs - center_s;
    x[i] += amp * 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * t / width_s));
  }
}

struct TrialEvents {
  std::vector<long> onsets;  // within-trial sample offsets
  std::vector<int> labels;
  std::vector<double> p300_centers_s;  // per target, within-trial seconds
};

TrialEvents place_events(const SynthConfig& cfg, Rng& rng) {
  TrialEvents ev;
  const double soa = 1.0 / cfg.rate_hz;
  const int n_targets =
      cfg.targets_min + static_cast<int>(rng.below(cfg.targets_max - cfg.targets_min + 1));

  // target positions with a minimum gap of 2 images so P300 bumps stay apart
  std::vector<int> targets;
  int guard = 0;
  while (static_cast<int>(targets.size()) < n_targets && guard++ < 10000) {
    const int pos = static_cast<int>(rng.below(cfg.images_per_trial));
    bool ok = true;
    for (int t : targets) ok = ok && std::abs(t - pos) >= 2;
    if (ok) targets.push_back(pos);
  }
  std::sort(targets.begin(), targets.end());

  for (int i = 0; i < cfg.images_per_trial; ++i) {
    const double onset_s = cfg.lead_in_s + i * soa;
    ev.onsets.push_back(static_cast<long>(onset_s * cfg.fs));
    const bool is_target = std::find(targets.begin(), targets.end(), i) != targets.end();
    ev.labels.push_back(is_target ? 1 : 0);
    if (is_target) {
      double jitter = rng.normal() * cfg.latency_jitter_ms;
      jitter = std::clamp(jitter, -3.0 * cfg.latency_jitter_ms, 3.0 * cfg.latency_jitter_ms);
      ev.p300_centers_s.push_back(onset_s + (cfg.latency_mean_ms + jitter) / 1000.0);
    }
  }
  return ev;
}

}  // namespace

pipeline::RawRecording generate(const SynthConfig& cfg) {
  const int n_ch = cfg.layout.size();
  if (n_ch < 2) throw ConfigError("generate: layout too small");
  if (cfg.trials < 1 || cfg.images_per_trial < 1) throw ConfigError("generate: empty paradigm");
  if (cfg.rate_hz <= 0.0 || cfg.fs <= 0.0) throw ConfigError("generate: bad rates");
  if (cfg.targets_min < 0 || cfg.targets_max < cfg.targets_min ||
      cfg.targets_max > cfg.images_per_trial)
    throw ConfigError("generate: bad target range");
  if (cfg.latency_mean_ms + 3.0 * cfg.latency_jitter_ms + cfg.p300_width_ms / 2.0 >= 1000.0)
    throw ConfigError("generate: P300 would leave the 1 s epoch");

  const int pz = cfg.layout.index_of("Pz");
  const int oz = cfg.layout.index_of("Oz");
  if (pz < 0 || oz < 0) throw ConfigError("generate: layout must contain Pz and Oz");

  const double trial_dur =
      cfg.lead_in_s + static_cast<double>(cfg.images_per_trial) / cfg.rate_hz + cfg.tail_s;
  const long trial_len = static_cast<long>(trial_dur * cfg.fs);

  pipeline::RawRecording rec;
  rec.channels = n_ch;
  rec.fs = cfg.fs;
  rec.samples = trial_len * cfg.trials;
  rec.channel_names = cfg.layout.names;
  rec.signal.assign(static_cast<std::size_t>(n_ch) * rec.samples, 0.0);

  // scalp weights: P300 focused at Pz, visual activity around Oz
  constexpr double kSigmaP300 = 0.6;  // radians
  constexpr double kSigmaVisual = 0.8;
  std::vector<double> w_pz(n_ch), w_oz(n_ch);
  for (int c = 0; c < n_ch; ++c) {
    const double dp = cfg.layout.arc(c, pz);
    const double dv = cfg.layout.arc(c, oz);
    w_pz[c] = std::exp(-dp * dp / (2.0 * kSigmaP300 * kSigmaP300));
    w_oz[c] = std::exp(-dv * dv / (2.0 * kSigmaVisual * kSigmaVisual));
  }

  std::vector<TrialEvents> trial_events(cfg.trials);
  parallel_for(static_cast<std::size_t>(cfg.trials), [&](std::size_t trial) {
    Rng ev_rng(seed_mix(cfg.seed, 0x4556u, trial));
    TrialEvents ev = place_events(cfg, ev_rng);

    // per-trial signal templates shared by all channels
    std::vector<double> p300(trial_len, 0.0), vep(trial_len, 0.0);
    for (double c : ev.p300_centers_s)
      add_bump(p300.data(), trial_len, cfg.fs, c, cfg.p300_width_ms / 1000.0, cfg.p300_amp);
    for (long onset : ev.onsets) {
      const double t0 = static_cast<double>(onset) / cfg.fs;
      add_bump(vep.data(), trial_len, cfg.fs, t0 + 0.120, 0.100, cfg.vep_amp);
      add_bump(vep.data(), trial_len, cfg.fs, t0 + 0.200, 0.100, -0.5 * cfg.vep_amp);
    }

    Rng alpha_rng(seed_mix(cfg.seed, 0x414cu, trial));
    const double alpha_phase = alpha_rng.uniform(0.0, 2.0 * std::numbers::pi);

    for (int c = 0; c < n_ch; ++c) {
      Rng noise_rng(seed_mix(seed_mix(cfg.seed, 0x4e4fu, trial), static_cast<std::uint64_t>(c)));
      std::vector<double> chan = pink_noise(trial_len, cfg.fs, cfg.noise_exponent, noise_rng);
      for (long i = 0; i < trial_len; ++i) {
        const double t = static_cast<double>(i) / cfg.fs;
        double v = cfg.noise_amp * chan[i];
        v += cfg.alpha_amp * w_oz[c] *
             std::sin(2.0 * std::numbers::pi * 10.0 * t + alpha_phase);
        v += w_oz[c] * vep[i];
        v += w_pz[c] * p300[i];
        rec.signal[static_cast<std::size_t>(c) * rec.samples + trial * trial_len + i] = v;
      }
    }
    trial_events[trial] = std::move(ev);
  });

  for (int trial = 0; trial < cfg.trials; ++trial) {
    const auto& ev = trial_events[trial];
    for (std::size_t i = 0; i < ev.onsets.size(); ++i)
      rec.events.push_back({trial * trial_len + ev.onsets[i], ev.labels[i]});
  }
  return rec;
}

}  // namespace stpam::synth
