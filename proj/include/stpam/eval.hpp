#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stpam/dataset.hpp"
#include "stpam/model.hpp"
#include "stpam/train.hpp"

// Metrics, the shrinkage-LDA reference baseline, the paired t-test and the
// expert-count ablation sweep.

namespace stpam::eval {

struct EvalReport {
  int n = 0;
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  std::vector<std::vector<long>> confusion;  // [true][predicted]
  std::vector<double> precision;             // per class
  std::vector<double> recall;
  double runtime_s = 0.0;

  std::string to_text() const;
  std::string to_json() const;
};

using Predictor = std::function<int(std::span<const double>)>;

EvalReport evaluate(const Predictor& predict, const data::Dataset& ds, int classes);
EvalReport evaluate_model(const model::ModelState& state, const data::Dataset& ds);

// Binary LDA with a Ledoit-Wolf-style shrinkage covariance
// S* = (1-lambda) S + lambda (tr S / p) I. Works in the Gram domain when the
// feature dimension exceeds the sample count.
struct RldaModel {
  std::vector<double> w;
  double threshold = 0.0;
  double lambda = 0.0;

  // class 1 iff w.x > threshold; ties go to class 0
  int predict(std::span<const double> x) const;
};

RldaModel rlda_fit(const data::Dataset& train,
                   std::optional<double> fixed_lambda = std::nullopt);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  bool degenerate = false;
};

// Two-tailed paired t-test on equal-length score vectors (n >= 2). A zero
// variance of differences is flagged: p = 1 when the mean difference is also
// zero, p = 0 otherwise.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

// Significance markers used in reports: "*" p<=0.05, "†" p<=0.005,
// "‡" p<=0.001, "" otherwise.
std::string significance_marker(double p);

struct AblationResult {
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> acc;  // [variant][seed]
  std::vector<double> medians;           // per variant
  bool ordered_within_slack = false;     // medians non-decreasing within 1 point
  int seeds_fully_ordered = 0;           // seeds with stm <= stam <= stpam

  std::string to_text() const;
};

// Trains STM / STAM / STPAM per seed with identical data order and reports
// test accuracies. Needs >= 3 seeds.
AblationResult ablation_sweep(const data::Dataset& train, const data::Dataset& test,
                              const graph::ElectrodeLayout& layout,
                              const model::ModelConfig& base, const optim::TrainConfig& tc,
                              std::span<const std::uint64_t> seeds);

double median(std::vector<double> v);

}  // namespace stpam::eval
