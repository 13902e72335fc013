// Command-line front end: synthetic data generation, preprocessing, training,
// evaluation, attention export, the expert-count ablation and a paired t-test
// utility. Exit codes: 0 success, 1 runtime/data error, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stpam/checkpoint.hpp"
#include "stpam/eval.hpp"
#include "stpam/export.hpp"
#include "stpam/parallel.hpp"
#include "stpam/pipeline.hpp"
#include "stpam/synth.hpp"
#include "stpam/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stpam;

namespace {

graph::ElectrodeLayout resolve_layout(const std::string& spec) {
  if (spec.empty() || spec == "builtin") return graph::builtin_biosemi64();
  return graph::layout_from_file(spec);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << text;
}

std::vector<double> read_scores(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open score file: " + path);
  std::vector<double> out;
  double v;
  while (f >> v) out.push_back(v);
  return out;
}

struct CommonModelFlags {
  std::string variant = "stpam";
  int t_window = 32, m_slices = 16, k_spatial = 2, d_spatial = 32;
  int k_temporal = 3, d_temporal = 8, d_reduced = 64;
  double epsilon = 0.2, gamma = 0.01;
  bool fixed_lambda2 = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--variant", variant, "Model variant: stm, stam or stpam")
        ->check(CLI::IsMember({"stm", "stam", "stpam"}));
    cmd->add_option("--t-window", t_window, "Slice length T_M");
    cmd->add_option("--m-slices", m_slices, "Slice count M");
    cmd->add_option("--k-spatial", k_spatial, "Chebyshev order, electrode graph");
    cmd->add_option("--d-spatial", d_spatial, "Spatial filter count d");
    cmd->add_option("--k-temporal", k_temporal, "Chebyshev order, slice graph");
    cmd->add_option("--d-temporal", d_temporal, "Temporal filter count d''");
    cmd->add_option("--d-reduced", d_reduced, "Reduced feature size d'");
    cmd->add_option("--epsilon", epsilon, "Attention threshold");
    cmd->add_option("--gamma", gamma, "Diversity loss weight");
    cmd->add_flag("--fixed-lambda2", fixed_lambda2, "Fix lambda_max = 2 instead of power iteration");
  }

  model::ModelConfig to_config(int channels) const {
    model::ModelConfig cfg;
    cfg.variant = *model::variant_from_name(variant);
    cfg.channels = channels;
    cfg.t_window = t_window;
    cfg.m_slices = m_slices;
    cfg.k_spatial = k_spatial;
    cfg.d_spatial = d_spatial;
    cfg.k_temporal = k_temporal;
    cfg.d_temporal = d_temporal;
    cfg.d_reduced = d_reduced;
    cfg.epsilon = epsilon;
    cfg.gamma = gamma;
    cfg.fixed_lambda2 = fixed_lambda2;
    return cfg;
  }
};

std::uint64_t effective_seed(std::uint64_t flag_seed) {
  if (const char* s = std::getenv("STPAM_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end && *end == '\0') return v;
    throw ConfigError("STPAM_SEED is not an integer");
  }
  return flag_seed;
}

// ---- commands ---------------------------------------------------------------

int cmd_synth(const std::string& preset_name, int trials, std::uint64_t seed,
              const std::string& out, const std::string& layout_spec, const std::string& raw_out,
              double noise_amp, double alpha_amp) {
  const auto layout = resolve_layout(layout_spec);
  synth::SynthConfig cfg = synth::preset(preset_name, layout);
  cfg.trials = trials;
  cfg.seed = seed;
  cfg.noise_amp = noise_amp;
  cfg.alpha_amp = alpha_amp;

  const auto rec = synth::generate(cfg);
  if (!raw_out.empty()) pipeline::write_raw(rec, raw_out);
  const auto ds = pipeline::preprocess(rec);
  data::Dataset out_ds = ds;
  out_ds.notes = "synthetic preset=" + preset_name + " trials=" + std::to_string(trials) +
                 " seed=" + std::to_string(seed);
  data::write_dataset(out_ds, out);

  std::cout << "samples " << out_ds.size() << "\n";
  for (std::size_t z = 0; z < out_ds.label_names.size(); ++z)
    std::cout << out_ds.label_names[z] << " " << out_ds.count_label(static_cast<int>(z)) << "\n";
  std::cout << "written " << out << "\n";
  return 0;
}

int cmd_preprocess(const std::string& raw_dir, const std::string& out, int order, double low,
                   double high, double target_fs) {
  const auto rec = pipeline::read_raw(raw_dir);
  pipeline::PreprocessConfig cfg;
  cfg.filter_order = order;
  cfg.low_hz = low;
  cfg.high_hz = high;
  cfg.target_fs = target_fs;
  const auto ds = pipeline::preprocess(rec, cfg);
  data::write_dataset(ds, out);
  std::cout << "samples " << ds.size() << " channels " << ds.channels << " t " << ds.t << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out, const CommonModelFlags& mf,
              int epochs, int batch, double lr, double clip, double val_frac,
              std::uint64_t seed, const std::string& layout_spec) {
  const auto ds = data::read_dataset(data_dir);
  const auto layout = resolve_layout(layout_spec);
  if (layout.size() != ds.channels)
    throw ConfigError("dataset has " + std::to_string(ds.channels) + " channels but layout has " +
                      std::to_string(layout.size()));
  if (ds.t < mf.t_window)
    throw ConfigError("dataset T " + std::to_string(ds.t) + " is shorter than the slice window");

  model::ModelState state = model::ModelState::build(mf.to_config(ds.channels), layout, seed);

  data::Dataset train_set = ds;
  data::Dataset val_set;
  const data::Dataset* val_ptr = nullptr;
  if (val_frac > 0.0) {
    auto split = data::split_stratified(ds, 1.0 - val_frac, seed);
    train_set = std::move(split.train);
    val_set = std::move(split.test);
    val_ptr = &val_set;
  }

  optim::TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch;
  tc.adam.lr = lr;
  tc.adam.clip_norm = clip;
  tc.seed = seed;

  fs::create_directories(out);
  std::ofstream log(out + "/train_log.tsv");
  if (!log) throw IoError("cannot write training log");
  log << "# " << optim::epoch_log_header() << "\n";
  const auto result = optim::train(state, train_set, val_ptr, tc, [&](const optim::EpochLog& e) {
    log << optim::format_epoch_log(e) << "\n";
    log.flush();
  });

  model::save_checkpoint(state, out + "/checkpoint.stpm");

  json metrics;
  metrics["epochs"] = static_cast<int>(result.log.size());
  metrics["train_samples"] = train_set.size();
  metrics["parameters"] = state.param_count();
  if (!result.log.empty()) {
    metrics["final_total_loss"] = result.log.back().loss.total;
    metrics["final_train_acc"] = result.log.back().train_acc;
    if (val_ptr) metrics["final_val_acc"] = result.log.back().val_acc;
  }
  write_text(out + "/metrics.json", metrics.dump(2) + "\n");
  std::cout << "checkpoint " << out << "/checkpoint.stpm\n";
  if (!result.log.empty())
    std::cout << "final train acc " << result.log.back().train_acc << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out) {
  const auto state = model::load_checkpoint(ckpt);
  const auto ds = data::read_dataset(data_dir);
  if (ds.channels != state.cfg.channels || ds.t < state.cfg.t_window)
    throw ConfigError("checkpoint/dataset mismatch: C " + std::to_string(state.cfg.channels) +
                      " vs " + std::to_string(ds.channels));
  const auto rep = eval::evaluate_model(state, ds);
  std::cout << rep.to_text();
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(out + "/eval.txt", rep.to_text());
    write_text(out + "/eval.json", rep.to_json() + "\n");
  }
  return 0;
}

int cmd_attn_export(const std::string& ckpt, const std::string& data_dir, int n_samples,
                    const std::string& out, bool svg, const std::string& class_filter) {
  const auto state = model::load_checkpoint(ckpt);
  const auto ds = data::read_dataset(data_dir);
  int filter = -1;
  if (class_filter == "target") filter = 1;
  else if (class_filter == "non-target") filter = 0;
  else if (class_filter != "all") throw ConfigError("--class must be all, target or non-target");

  const auto maps = exporter::average_maps(state, ds, n_samples, filter);
  fs::create_directories(out);
  write_text(out + "/attention.tsv", exporter::maps_to_text(maps, *state.layout));
  if (svg) {
    for (std::size_t e = 0; e < maps.spatial.size(); ++e) {
      const std::string title = "spatial expert " + std::to_string(e + 1);
      write_text(out + "/spatial_expert" + std::to_string(e + 1) + ".svg",
                 exporter::topomap_svg(*state.layout, maps.spatial[e], title));
    }
  }
  std::cout << "maps over " << maps.samples_used << " samples written to " << out << "\n";
  return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& out, const CommonModelFlags& mf,
               int epochs, int batch, double lr, double train_frac,
               std::vector<std::uint64_t> seeds, std::uint64_t split_seed,
               const std::string& layout_spec) {
  const auto ds = data::read_dataset(data_dir);
  const auto layout = resolve_layout(layout_spec);
  const auto split = data::split_stratified(ds, train_frac, split_seed);

  optim::TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch;
  tc.adam.lr = lr;

  const auto res = eval::ablation_sweep(split.train, split.test, layout,
                                        mf.to_config(ds.channels), tc, seeds);
  std::cout << res.to_text();
  if (!out.empty()) {
    fs::create_directories(out);
    write_text(out + "/ablation.tsv", res.to_text());
  }
  return 0;
}

int cmd_ttest(const std::string& file_a, const std::string& file_b) {
  const auto a = read_scores(file_a);
  const auto b = read_scores(file_b);
  const auto r = eval::paired_ttest(a, b);
  std::cout << "t " << r.t << "\n";
  std::cout << "p " << r.p << " " << eval::significance_marker(r.p) << "\n";
  if (r.degenerate) std::cout << "degenerate true\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive spatio-temporal attention for RSVP EEG classification"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI config file; command-line flags win");
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all, 1 = serial)");

  // -- synth -------------------------------------------------------------
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic RSVP dataset");
  std::string preset = "public-like", synth_out, synth_layout = "builtin", raw_out;
  int trials = 40;
  std::uint64_t seed = 0;
  double noise_amp = 1.0, alpha_amp = 0.3;
  c_synth->add_option("--preset", preset, "public-like or ired-like")
      ->check(CLI::IsMember({"public-like", "ired-like"}));
  c_synth->add_option("--trials", trials, "Trial count (45 images each)");
  c_synth->add_option("--seed", seed, "RNG seed");
  c_synth->add_option("--out", synth_out, "Output dataset directory")->required();
  c_synth->add_option("--layout", synth_layout, "Electrode layout file or 'builtin'");
  c_synth->add_option("--raw-out", raw_out, "Also write the raw recording container here");
  c_synth->add_option("--noise-amp", noise_amp, "Background noise amplitude");
  c_synth->add_option("--alpha-amp", alpha_amp, "Alpha rhythm amplitude");

  // -- preprocess ---------------------------------------------------------
  auto* c_pre = app.add_subcommand("preprocess", "Raw recording container -> dataset");
  std::string pre_raw, pre_out;
  int pre_order = 6;
  double pre_low = 1.0, pre_high = 40.0, pre_target_fs = 256.0;
  c_pre->add_option("--raw", pre_raw, "Raw recording directory")->required();
  c_pre->add_option("--out", pre_out, "Output dataset directory")->required();
  c_pre->add_option("--order", pre_order, "Butterworth prototype order");
  c_pre->add_option("--low", pre_low, "Low cutoff (Hz)");
  c_pre->add_option("--high", pre_high, "High cutoff (Hz)");
  c_pre->add_option("--target-fs", pre_target_fs, "Output sampling rate (Hz)");

  // -- train ----------------------------------------------------------------
  auto* c_train = app.add_subcommand("train", "Train a model on a dataset");
  std::string train_data, train_out, train_layout = "builtin";
  CommonModelFlags train_mf;
  int epochs = 100, batch = 32;
  double lr = 0.003, clip = 0.0, val_frac = 0.0;
  std::uint64_t train_seed = 0;
  c_train->add_option("--data", train_data, "Dataset directory")->required();
  c_train->add_option("--out", train_out, "Output directory")->required();
  c_train->add_option("--layout", train_layout, "Electrode layout file or 'builtin'");
  train_mf.attach(c_train);
  c_train->add_option("--epochs", epochs, "Training epochs");
  c_train->add_option("--batch", batch, "Mini-batch size");
  c_train->add_option("--lr", lr, "Adam learning rate");
  c_train->add_option("--clip", clip, "Max gradient norm (0 = off)");
  c_train->add_option("--val-frac", val_frac, "Validation fraction (0 = none)");
  c_train->add_option("--seed", train_seed, "RNG seed");

  // -- eval --------------------------------------------------------------
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_out;
  c_eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  c_eval->add_option("--data", eval_data, "Dataset directory")->required();
  c_eval->add_option("--out", eval_out, "Report output directory (optional)");

  // -- attn-export ----------------------------------------------------------
  auto* c_attn = app.add_subcommand("attn-export", "Export averaged attention maps");
  std::string attn_ckpt, attn_data, attn_out, attn_class = "all";
  int attn_n = 100;
  bool attn_svg = false;
  c_attn->add_option("--checkpoint", attn_ckpt, "Checkpoint file")->required();
  c_attn->add_option("--data", attn_data, "Dataset directory")->required();
  c_attn->add_option("--out", attn_out, "Output directory")->required();
  c_attn->add_option("--n-samples", attn_n, "Sample budget");
  c_attn->add_option("--class", attn_class, "all, target or non-target");
  c_attn->add_flag("--svg", attn_svg, "Also write scalp SVG plots");

  // -- ablate -----------------------------------------------------------------
  auto* c_abl = app.add_subcommand("ablate", "STM/STAM/STPAM sweep over seeds");
  std::string abl_data, abl_out, abl_layout = "builtin";
  CommonModelFlags abl_mf;
  int abl_epochs = 30, abl_batch = 32;
  double abl_lr = 0.003, abl_train_frac = 0.75;
  std::vector<std::uint64_t> abl_seeds{1, 2, 3, 4, 5};
  std::uint64_t abl_split_seed = 0;
  c_abl->add_option("--data", abl_data, "Dataset directory")->required();
  c_abl->add_option("--out", abl_out, "Output directory (optional)");
  c_abl->add_option("--layout", abl_layout, "Electrode layout file or 'builtin'");
  abl_mf.attach(c_abl);
  c_abl->add_option("--epochs", abl_epochs, "Epochs per run");
  c_abl->add_option("--batch", abl_batch, "Mini-batch size");
  c_abl->add_option("--lr", abl_lr, "Adam learning rate");
  c_abl->add_option("--train-frac", abl_train_frac, "Stratified train fraction");
  c_abl->add_option("--seeds", abl_seeds, "Seeds (>= 3)");
  c_abl->add_option("--split-seed", abl_split_seed, "Seed for the train/test split");

  // -- ttest ----------------------------------------------------------------
  auto* c_tt = app.add_subcommand("ttest", "Paired t-test between two score files");
  std::string tt_a, tt_b;
  c_tt->add_option("--a", tt_a, "Scores A, one per line")->required();
  c_tt->add_option("--b", tt_b, "Scores B, one per line")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    set_thread_count(threads);
    seed = effective_seed(seed);
    train_seed = effective_seed(train_seed);

    if (c_synth->parsed())
      return cmd_synth(preset, trials, seed, synth_out, synth_layout, raw_out, noise_amp,
                       alpha_amp);
    if (c_pre->parsed())
      return cmd_preprocess(pre_raw, pre_out, pre_order, pre_low, pre_high, pre_target_fs);
    if (c_train->parsed())
      return cmd_train(train_data, train_out, train_mf, epochs, batch, lr, clip, val_frac,
                       train_seed, train_layout);
    if (c_eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_out);
    if (c_attn->parsed())
      return cmd_attn_export(attn_ckpt, attn_data, attn_n, attn_out, attn_svg, attn_class);
    if (c_abl->parsed())
      return cmd_ablate(abl_data, abl_out, abl_mf, abl_epochs, abl_batch, abl_lr, abl_train_frac,
                        abl_seeds, abl_split_seed, abl_layout);
    if (c_tt->parsed()) return cmd_ttest(tt_a, tt_b);
    std::cerr << "no command\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
