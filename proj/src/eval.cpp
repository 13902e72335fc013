#include "stpam/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "stpam/parallel.hpp"

namespace stpam::eval {

// ---- metrics -------------------------------------------------------------

EvalReport evaluate(const Predictor& predict, const data::Dataset& ds, int classes) {
  if (ds.size() == 0) throw UsageError("evaluate: empty split");
  const auto start = std::chrono::steady_clock::now();

  std::vector<int> pred(ds.size());
  parallel_for(ds.size(), [&](std::size_t i) { pred[i] = predict(ds.x[i]); });

  EvalReport rep;
  rep.n = ds.size();
  rep.confusion.assign(classes, std::vector<long>(classes, 0));
  for (int i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0 || ds.labels[i] >= classes || pred[i] < 0 || pred[i] >= classes)
      throw UsageError("evaluate: class index out of range");
    ++rep.confusion[ds.labels[i]][pred[i]];
  }

  long diag = 0;
  rep.precision.assign(classes, 0.0);
  rep.recall.assign(classes, 0.0);
  double recall_sum = 0.0;
  for (int z = 0; z < classes; ++z) {
    diag += rep.confusion[z][z];
    long row = 0, col = 0;
    for (int j = 0; j < classes; ++j) {
      row += rep.confusion[z][j];
      col += rep.confusion[j][z];
    }
    rep.recall[z] = row > 0 ? static_cast<double>(rep.confusion[z][z]) / row : 0.0;
    rep.precision[z] = col > 0 ? static_cast<double>(rep.confusion[z][z]) / col : 0.0;
    recall_sum += rep.recall[z];
  }
  rep.accuracy = static_cast<double>(diag) / rep.n;
  rep.balanced_accuracy = recall_sum / classes;
  rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

EvalReport evaluate_model(const model::ModelState& state, const data::Dataset& ds) {
  if (ds.channels != state.cfg.channels)
    throw ConfigError("evaluate_model: channel count mismatch");
  const int t = ds.t;
  return evaluate(
      [&state, t](std::span<const double> x) { return model::predict(state, x, t).cls; }, ds,
      state.cfg.classes);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "samples " << n << "\n";
  os << "accuracy " << accuracy << "\n";
  os << "balanced_accuracy " << balanced_accuracy << "\n";
  for (std::size_t z = 0; z < recall.size(); ++z)
    os << "class " << z << " precision " << precision[z] << " recall " << recall[z] << "\n";
  os << "confusion";
  for (const auto& row : confusion)
    for (long v : row) os << ' ' << v;
  os << "\nruntime_s " << runtime_s << "\n";
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["samples"] = n;
  j["accuracy"] = accuracy;
  j["balanced_accuracy"] = balanced_accuracy;
  j["precision"] = precision;
  j["recall"] = recall;
  j["confusion"] = confusion;
  j["runtime_s"] = runtime_s;
  return j.dump(2);
}

// ---- shrinkage LDA ---------------------------------------------------------

int RldaModel::predict(std::span<const double> x) const {
  if (x.size() != w.size()) throw DimensionError("rlda: feature size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s > threshold ? 1 : 0;
}

namespace {

// Solves A y = rhs for symmetric positive definite A (in place Cholesky).
std::vector<double> spd_solve(std::vector<double> a, int n, std::vector<double> rhs) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        s -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
      if (i == j) {
        if (s <= 0.0) throw DomainError("spd_solve: matrix not positive definite");
        a[static_cast<std::size_t>(i) * n + i] = std::sqrt(s);
      } else {
        a[static_cast<std::size_t>(i) * n + j] = s / a[static_cast<std::size_t>(j) * n + j];
      }
    }
  }
  for (int i = 0; i < n; ++i) {  // forward
    double s = rhs[i];
    for (int k = 0; k < i; ++k) s -= a[static_cast<std::size_t>(i) * n + k] * rhs[k];
    rhs[i] = s / a[static_cast<std::size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {  // backward
    double s = rhs[i];
    for (int k = i + 1; k < n; ++k) s -= a[static_cast<std::size_t>(k) * n + i] * rhs[k];
    rhs[i] = s / a[static_cast<std::size_t>(i) * n + i];
  }
  return rhs;
}

}  // namespace

RldaModel rlda_fit(const data::Dataset& train, std::optional<double> fixed_lambda) {
  const int n = train.size();
  const std::size_t p = static_cast<std::size_t>(train.channels) * train.t;
  if (n < 2) throw UsageError("rlda_fit: need at least two samples");

  std::vector<double> mu0(p, 0.0), mu1(p, 0.0);
  long n0 = 0, n1 = 0;
  for (int i = 0; i < n; ++i) {
    const auto& x = train.x[i];
    if (train.labels[i] == 0) {
      ++n0;
      for (std::size_t j = 0; j < p; ++j) mu0[j] += x[j];
    } else if (train.labels[i] == 1) {
      ++n1;
      for (std::size_t j = 0; j < p; ++j) mu1[j] += x[j];
    } else {
      throw UsageError("rlda_fit: labels must be binary");
    }
  }
  if (n0 == 0 || n1 == 0) throw UsageError("rlda_fit: single-class training set");
  for (double& v : mu0) v /= n0;
  for (double& v : mu1) v /= n1;

  // class-centered rows
  std::vector<double> xc(static_cast<std::size_t>(n) * p);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const auto& x = train.x[i];
    const auto& mu = train.labels[i] == 0 ? mu0 : mu1;
    double* dst = xc.data() + i * p;
    for (std::size_t j = 0; j < p; ++j) dst[j] = x[j] - mu[j];
  });

  // Gram matrix G = Xc Xc^T
  std::vector<double> gram(static_cast<std::size_t>(n) * n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const double* xi = xc.data() + i * p;
    for (std::size_t j = 0; j <= i; ++j) {
      const double* xj = xc.data() + j * p;
      double s = 0.0;
      for (std::size_t k = 0; k < p; ++k) s += xi[k] * xj[k];
      gram[i * n + j] = s;
      gram[j * n + i] = s;
    }
  });

  // Ledoit-Wolf intensity from Gram-domain statistics
  double tr_s = 0.0, fro2 = 0.0, diag2 = 0.0;
  for (int i = 0; i < n; ++i) tr_s += gram[static_cast<std::size_t>(i) * n + i];
  tr_s /= n;
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * n; ++i) fro2 += gram[i] * gram[i];
  fro2 /= static_cast<double>(n) * n;  // |S|_F^2
  for (int i = 0; i < n; ++i) {
    const double gii = gram[static_cast<std::size_t>(i) * n + i];
    diag2 += gii * gii;
  }
  const double m = tr_s / static_cast<double>(p);
  const double d2 = fro2 / static_cast<double>(p) - m * m;
  double b2 = (diag2 - fro2 * n) / (static_cast<double>(n) * n) / static_cast<double>(p);
  b2 = std::max(0.0, std::min(b2, d2));
  double lambda = fixed_lambda ? *fixed_lambda : (d2 > 0.0 ? b2 / d2 : 1.0);
  lambda = std::max(0.0, std::min(1.0, lambda));
  if (m <= 0.0) throw DomainError("rlda_fit: degenerate (all-zero) features");

  std::vector<double> v(p);
  for (std::size_t j = 0; j < p; ++j) v[j] = mu1[j] - mu0[j];

  RldaModel out;
  out.lambda = lambda;
  const double a = lambda * m;
  const double b = (1.0 - lambda) / static_cast<double>(n);
  if (b == 0.0) {
    out.w = v;
    for (double& x : out.w) x /= a;
  } else if (a == 0.0) {
    throw DomainError("rlda_fit: lambda 0 with singular covariance");
  } else {
    // Woodbury: (aI + b Xc^T Xc)^{-1} v = v/a - (1/a^2) Xc^T M^{-1} (Xc v),
    // M = (1/b) I + G / a
    std::vector<double> xv(n, 0.0);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
      const double* xi = xc.data() + i * p;
      double s = 0.0;
      for (std::size_t k = 0; k < p; ++k) s += xi[k] * v[k];
      xv[i] = s;
    });
    std::vector<double> msys(static_cast<std::size_t>(n) * n);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * n; ++i) msys[i] = gram[i] / a;
    for (int i = 0; i < n; ++i) msys[static_cast<std::size_t>(i) * n + i] += 1.0 / b;
    const std::vector<double> y = spd_solve(std::move(msys), n, std::move(xv));
    out.w.assign(p, 0.0);
    for (int i = 0; i < n; ++i) {
      const double* xi = xc.data() + static_cast<std::size_t>(i) * p;
      const double yi = y[i];
      for (std::size_t k = 0; k < p; ++k) out.w[k] -= yi * xi[k] / (a * a);
    }
    for (std::size_t k = 0; k < p; ++k) out.w[k] += v[k] / a;
  }

  double wm = 0.0;
  for (std::size_t j = 0; j < p; ++j) wm += out.w[j] * (mu0[j] + mu1[j]);
  out.threshold = 0.5 * wm - std::log(static_cast<double>(n1) / n0);
  return out;
}

// ---- paired t-test ----------------------------------------------------------

namespace {

double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) +
                        b * std::log(1.0 - x) + a * std::log(x)) *
                   beta_cf(b, a, 1.0 - x) / b;
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("paired_ttest: length mismatch");
  const int n = static_cast<int>(a.size());
  if (n < 2) throw UsageError("paired_ttest: need at least two pairs");

  double mean = 0.0;
  for (int i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1));  // sample sd

  TTestResult out;
  if (sd == 0.0) {
    out.degenerate = true;
    if (mean == 0.0) {
      out.t = 0.0;
      out.p = 1.0;
    } else {
      out.t = mean > 0.0 ? HUGE_VAL : -HUGE_VAL;
      out.p = 0.0;
    }
    return out;
  }
  out.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double nu = n - 1;
  out.p = incomplete_beta(nu / 2.0, 0.5, nu / (nu + out.t * out.t));
  return out;
}

std::string significance_marker(double p) {
  if (p <= 0.001) return "‡";  // double dagger
  if (p <= 0.005) return "†";  // dagger
  if (p <= 0.05) return "*";
  return "";
}

// ---- ablation ----------------------------------------------------------------

double median(std::vector<double> v) {
  if (v.empty()) throw UsageError("median: empty");
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

AblationResult ablation_sweep(const data::Dataset& train_set, const data::Dataset& test_set,
                              const graph::ElectrodeLayout& layout,
                              const model::ModelConfig& base, const optim::TrainConfig& tc,
                              std::span<const std::uint64_t> seeds) {
  if (seeds.size() < 3) throw UsageError("ablation_sweep: need at least 3 seeds");
  AblationResult out;
  out.seeds.assign(seeds.begin(), seeds.end());
  out.variants = {"stm", "stam", "stpam"};
  out.acc.assign(3, std::vector<double>(seeds.size(), 0.0));

  const model::Variant variants[3] = {model::Variant::kStm, model::Variant::kStam,
                                      model::Variant::kStpam};
  for (int v = 0; v < 3; ++v) {
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      model::ModelConfig cfg = base;
      cfg.variant = variants[v];
      model::ModelState st = model::ModelState::build(cfg, layout, seeds[s]);
      optim::TrainConfig run = tc;
      run.seed = seeds[s];  // same data order across variants for this seed
      optim::train(st, train_set, nullptr, run);
      out.acc[v][s] = evaluate_model(st, test_set).accuracy;
    }
  }
  for (int v = 0; v < 3; ++v) out.medians.push_back(median(out.acc[v]));
  const double slack = 0.01;  // one accuracy point
  out.ordered_within_slack =
      out.medians[0] <= out.medians[1] + slack && out.medians[1] <= out.medians[2] + slack;
  for (std::size_t s = 0; s < seeds.size(); ++s)
    out.seeds_fully_ordered +=
        out.acc[0][s] <= out.acc[1][s] && out.acc[1][s] <= out.acc[2][s];
  return out;
}

std::string AblationResult::to_text() const {
  std::ostringstream os;
  os << "variant";
  for (auto s : seeds) os << "\tseed" << s;
  os << "\tmedian\n";
  for (std::size_t v = 0; v < variants.size(); ++v) {
    os << variants[v];
    for (double a : acc[v]) os << '\t' << a;
    os << '\t' << medians[v] << "\n";
  }
  os << "identical_seeds_across_variants\ttrue\n";
  os << "ordered_within_slack\t" << (ordered_within_slack ? "true" : "false") << "\n";
  os << "seeds_fully_ordered\t" << seeds_fully_ordered << "/" << seeds.size() << "\n";
  return os.str();
}

}  // namespace stpam::eval
