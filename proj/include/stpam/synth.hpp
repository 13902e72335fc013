#pragma once

#include <complex>
#include <string>

#include "stpam/graph.hpp"
#include "stpam/pipeline.hpp"

// Seeded synthetic oddball-RSVP EEG: pink background noise plus occipital
// alpha, an early visual response on every stimulus and a parietal P300 on
// targets, with paradigm statistics (45 images at 5 Hz, 2-4 targets) and a
// configurable latency jitter regime.

namespace stpam::synth {

struct SynthConfig {
  graph::ElectrodeLayout layout;
  double fs = 256.0;
  int images_per_trial = 45;
  double rate_hz = 5.0;
  int targets_min = 2;
  int targets_max = 4;
  int trials = 40;
  double p300_amp = 1.0;          // relative to unit noise RMS
  double latency_mean_ms = 400.0;
  double latency_jitter_ms = 60.0;
  double p300_width_ms = 300.0;
  double noise_exponent = 1.0;    // 1/f^exponent power spectrum
  double noise_amp = 1.0;
  double alpha_amp = 0.3;
  double vep_amp = 0.4;
  double lead_in_s = 0.5;
  double tail_s = 1.0;
  std::uint64_t seed = 0;
};

// Paradigm presets differing in ERP latency stability; "ired-like" has high
// jitter, a late mean latency and a weaker P300.
SynthConfig preset(const std::string& name, const graph::ElectrodeLayout& layout);

pipeline::RawRecording generate(const SynthConfig& cfg);

// Iterative radix-2 FFT (length must be a power of two).
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

}  // namespace stpam::synth
