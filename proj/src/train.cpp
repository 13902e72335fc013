#include "stpam/train.hpp"

#include <cmath>
#include <cstdio>

#include "stpam/parallel.hpp"

namespace stpam::optim {

std::string epoch_log_header() {
  return "epoch\ttotal\tLc\tLS\tLT\tLKL_S\tLKL_T\ttrain_acc\tval_acc";
}

std::string format_epoch_log(const EpochLog& e) {
  char buf[320];
  std::snprintf(buf, sizeof(buf), "%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g",
                e.epoch, e.loss.total, e.loss.lc, e.loss.ls, e.loss.lt, e.loss.kl_s, e.loss.kl_t,
                e.train_acc, e.val_acc);
  return buf;
}

double accuracy(const model::ModelState& state, const data::Dataset& set) {
  if (set.size() == 0) throw UsageError("accuracy: empty dataset");
  std::vector<char> hit(set.size(), 0);
  parallel_for(set.size(), [&](std::size_t i) {
    const auto pred = model::predict(state, set.x[i], set.t);
    hit[i] = pred.cls == set.labels[i];
  });
  int n = 0;
  for (char h : hit) n += h;
  return static_cast<double>(n) / set.size();
}

TrainResult train(model::ModelState& state, const data::Dataset& train_set,
                  const data::Dataset* val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  if (train_set.size() == 0) throw UsageError("train: empty dataset");
  if (train_set.channels != state.cfg.channels)
    throw ConfigError("train: dataset has " + std::to_string(train_set.channels) +
                      " channels, model expects " + std::to_string(state.cfg.channels));
  if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");

  AdamState adam(state, cfg.adam);
  TrainResult result;
  const int n = train_set.size();
  std::vector<int> order(n);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng shuffle(seed_mix(cfg.seed, 0x45504f43ull, static_cast<std::uint64_t>(epoch)));
    for (int i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double lc = 0, ls = 0, lt = 0, kls = 0, klt = 0;
    long hits = 0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      Batch batch;
      batch.t = train_set.t;
      for (int i = start; i < stop; ++i) {
        batch.x.push_back(train_set.x[order[i]].data());
        batch.labels.push_back(train_set.labels[order[i]]);
      }
      BatchResult res = batch_pass(state, batch);
      adam.step(res.grads);
      lc += res.loss.lc;
      ls += res.loss.ls;
      lt += res.loss.lt;
      kls += res.loss.kl_s;
      klt += res.loss.kl_t;
      ++batches;
      for (std::size_t i = 0; i < res.predicted.size(); ++i)
        hits += res.predicted[i] == batch.labels[i];
    }

    EpochLog log;
    log.epoch = epoch;
    log.loss = LossBreakdown::assemble(lc / batches, ls / batches, lt / batches, kls / batches,
                                       klt / batches, state.cfg.gamma);
    log.train_acc = static_cast<double>(hits) / n;
    log.val_acc = val_set ? accuracy(state, *val_set) : std::nan("");
    if (on_epoch) on_epoch(log);
    result.log.push_back(log);
  }
  return result;
}

}  // namespace stpam::optim
