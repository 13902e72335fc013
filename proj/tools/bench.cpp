// Times the OpenMP kernels against the serial reference: batch
// gradient computation, synthetic trial generation and dataset evaluation.

#include <chrono>
#include <iostream>

#include "stpam/eval.hpp"
#include "stpam/loss.hpp"
#include "stpam/parallel.hpp"
#include "stpam/synth.hpp"
#include "stpam/train.hpp"

using namespace stpam;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename Fn>
double time_once(Fn&& fn) {
  const double t0 = now_s();
  fn();
  return now_s() - t0;
}

void report(const char* name, double serial_s, double parallel_s) {
  std::cout << name << "\tserial " << serial_s << " s\tparallel " << parallel_s << " s\tspeedup "
            << serial_s / parallel_s << "x\n";
}

}  // namespace

int main(int argc, char** argv) {
  int batch_size = 32;
  int trials = 8;
  if (argc > 1) batch_size = std::atoi(argv[1]);
  if (argc > 2) trials = std::atoi(argv[2]);

  const auto& layout = graph::builtin_biosemi64();

  // data
  synth::SynthConfig scfg = synth::preset("public-like", layout);
  scfg.trials = trials;
  scfg.seed = 99;
  set_thread_count(1);
  pipeline::RawRecording rec_serial;
  const double synth_serial = time_once([&] { rec_serial = synth::generate(scfg); });
  set_thread_count(0);
  pipeline::RawRecording rec_parallel;
  const double synth_parallel = time_once([&] { rec_parallel = synth::generate(scfg); });
  if (rec_serial.signal != rec_parallel.signal) {
    std::cerr << "serial / parallel synthesis mismatch\n";
    return 1;
  }
  const auto ds = pipeline::preprocess(rec_parallel);

  model::ModelConfig mcfg;
  mcfg.channels = ds.channels;
  model::ModelState state = model::ModelState::build(mcfg, layout, 1);

  optim::Batch batch;
  batch.t = ds.t;
  for (int i = 0; i < std::min(batch_size, ds.size()); ++i) {
    batch.x.push_back(ds.x[i].data());
    batch.labels.push_back(ds.labels[i]);
  }

  optim::BatchResult ser, par;
  const double grad_serial = time_once([&] { ser = optim::batch_pass_serial(state, batch); });
  const double grad_parallel = time_once([&] { par = optim::batch_pass(state, batch); });
  if (ser.grads != par.grads || ser.loss.total != par.loss.total) {
    std::cerr << "serial / parallel gradient mismatch\n";
    return 1;
  }

  set_thread_count(1);
  double eval_serial = 0, eval_parallel = 0;
  eval_serial = time_once([&] { (void)optim::accuracy(state, ds); });
  set_thread_count(0);
  eval_parallel = time_once([&] { (void)optim::accuracy(state, ds); });

  std::cout << "threads " << thread_count() << " (0 = OpenMP default)\n";
  std::cout << "batch " << batch.x.size() << " samples, dataset " << ds.size() << " samples\n";
  report("synth", synth_serial, synth_parallel);
  report("batch-grad", grad_serial, grad_parallel);
  report("eval", eval_serial, eval_parallel);
  std::cout << "per-sample grad time " << grad_parallel / batch.x.size() << " s\n";
  return 0;
}
