#pragma once

#include <functional>
#include <string>

#include "stpam/dataset.hpp"
#include "stpam/loss.hpp"

namespace stpam::optim {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  LossBreakdown loss;
  double train_acc = 0.0;
  double val_acc = 0.0;  // NaN when no validation split
};

// Tab-separated: epoch total Lc LS LT LKL_S LKL_T train-acc val-acc,
// doubles at full precision.
std::string format_epoch_log(const EpochLog& e);
std::string epoch_log_header();

struct TrainResult {
  std::vector<EpochLog> log;
};

// Mini-batch Adam training. Sample order is shuffled per epoch from
// (seed, epoch) only, so parallel variants see identical data order.
TrainResult train(model::ModelState& state, const data::Dataset& train_set,
                  const data::Dataset* val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = nullptr);

// Inference-mode accuracy of the model on a dataset.
double accuracy(const model::ModelState& state, const data::Dataset& set);

}  // namespace stpam::optim
