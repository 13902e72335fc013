#pragma once

#include <string>
#include <vector>

#include "stpam/common.hpp"

// In-memory dataset plus the on-disk container: a directory holding
// meta.json, data.bin (float32 LE, N x C x T row-major) and labels.bin
// (N uint8 labels).

namespace stpam::data {

struct Dataset {
  int channels = 0;
  int t = 0;
  double fs = 0.0;
  std::vector<std::string> channel_names;
  std::vector<std::string> label_names;  // index = class id
  std::vector<std::vector<double>> x;    // each channels x t row-major
  std::vector<int> labels;
  std::string notes;

  int size() const { return static_cast<int>(x.size()); }
  int count_label(int z) const;
};

void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

// Stratified split: keeps `train_frac` of each class (rounded down, at least
// one when the class is non-empty) in the first part. Order within parts
// follows a seeded shuffle.
struct Split {
  Dataset train;
  Dataset test;
};
Split split_stratified(const Dataset& ds, double train_frac, std::uint64_t seed);

// First n / remaining samples without reshuffling.
Split split_head(const Dataset& ds, int n_head);

}  // namespace stpam::data
