#pragma once

#include <string>
#include <vector>

#include "stpam/dataset.hpp"

// Raw-recording-to-sample preprocessing: stimulus-locked segmentation,
// zero-phase Butterworth band-pass, decimation to the working rate and
// per-channel z-scoring.

namespace stpam::pipeline {

struct StimulusEvent {
  long onset = 0;  // sample index
  int label = 0;   // 0 non-target, 1 target
};

struct RawRecording {
  int channels = 0;
  double fs = 0.0;
  long samples = 0;
  std::vector<std::string> channel_names;
  std::vector<double> signal;  // channels x samples row-major
  std::vector<StimulusEvent> events;

  double* channel(int c) { return signal.data() + static_cast<std::size_t>(c) * samples; }
  const double* channel(int c) const {
    return signal.data() + static_cast<std::size_t>(c) * samples;
  }
};

struct Biquad {
  double b0 = 0, b1 = 0, b2 = 0;  // numerator
  double a1 = 0, a2 = 0;          // denominator (a0 == 1)
};

struct FilterSpec {
  int order = 0;  // analog prototype order; the band-pass has 2*order poles
  double low_hz = 0.0, high_hz = 0.0, fs = 0.0;
  std::vector<Biquad> sections;

  // |H(e^{j 2 pi f / fs})| evaluated directly from the coefficients.
  double magnitude(double freq_hz) const;
};

// Butterworth band-pass via analog prototype, LP->BP transform and bilinear
// transform with pre-warped edges; cascaded biquads with evenly distributed
// gain. All sections are verified stable.
FilterSpec design_butterworth(int order, double low_hz, double high_hz, double fs);

// One causal pass over a single channel.
std::vector<double> sosfilt(const FilterSpec& spec, const std::vector<double>& x);

// Forward-backward application with odd-reflection padding of 3x the filter
// length; phase response cancels.
std::vector<double> filter_zero_phase(const FilterSpec& spec, const std::vector<double>& x);

// Applies zero-phase filtering to every channel of a sample matrix.
void filter_sample(const FilterSpec& spec, std::vector<double>& sample, int channels, int t);

// Per-channel (x - mean) / std with population std; channels with
// std < 1e-12 become all-zero.
void zscore(std::vector<double>& sample, int channels, int t);

// Keeps every `factor`-th sample of each channel; factor 1 is the identity.
std::vector<double> decimate(const std::vector<double>& sample, int channels, int t, int factor);

struct SegmentResult {
  std::vector<std::vector<double>> samples;  // each channels x window
  std::vector<int> labels;
  int window = 0;
  int skipped = 0;  // events too close to the recording end
};

// One 1-second window per stimulus event, starting at the onset.
SegmentResult segment(const RawRecording& rec);

struct PreprocessConfig {
  int filter_order = 6;
  double low_hz = 1.0;
  double high_hz = 40.0;
  double target_fs = 256.0;
};

// segment -> band-pass -> decimate -> z-score, emitting a model-ready dataset.
data::Dataset preprocess(const RawRecording& rec, const PreprocessConfig& cfg = {});

// Raw recording container: directory with raw_meta.json, signal.bin
// (float32 LE, channels x samples) and events.tsv (onset <TAB> label).
void write_raw(const RawRecording& rec, const std::string& dir);
RawRecording read_raw(const std::string& dir);

}  // namespace stpam::pipeline
