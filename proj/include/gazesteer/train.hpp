#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gazesteer/bundle.hpp"
#include "gazesteer/evalrun.hpp"

namespace gazesteer {

struct OptimCfg {
  double lr = 3e-4;
  double wd = 1e-2;      // decoupled; matrices only
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int warmup = 20;       // linear ramp in optimizer steps, then constant
  int accum = 8;         // items per optimizer step, gradients summed
};

double lr_at(const OptimCfg& cfg, int step);

// Decoupled weight decay: p -= lr_t * mhat/(sqrt(vhat)+eps) + lr_t * wd * p,
// the decay term applied only to slots flagged for it.
class AdamW {
 public:
  AdamW(OptimCfg cfg, std::vector<int> slots, const TensorStore& store);
  void step(TensorStore& store, const std::map<int, Mat>& grads);
  int steps_done() const { return t_; }

 private:
  OptimCfg cfg_;
  std::vector<int> slots_;
  std::map<int, std::pair<Mat, Mat>> moments_;
  int t_ = 0;
};

struct TrainCfg {
  int stage = 1;
  int max_epochs = 20;
  int patience = 5;          // epochs without a new best val accuracy
  std::uint64_t seed = 0;    // item order shuffling
  OptimCfg optim;
  std::string log_path;      // metrics log file; empty disables
  bool verbose = false;
};

struct TrainResult {
  double best_val_acc = 0;
  double best_val_loss = 0;
  int best_epoch = -1;
  int epochs_run = 0;
  bool early_stopped = false;
  int steps = 0;
};

// Stage 1 trains resamplers + injection gains (+ the heatmap decay constant);
// stage 2 additionally trains the adapters. Ends with the best-validation
// parameters restored in place.
TrainResult run_stage(Bundle& bundle, const Runtime& rt, const TrainCfg& cfg);

struct GradCheckResult {
  double max_rel_err = 0;
  std::map<std::string, double> per_tensor;
};

// Central finite differences against the tape's gradients on one item,
// sampling a few coordinates of every tensor trained at the given stage.
GradCheckResult grad_check(Bundle& bundle, const Runtime& rt, const Item& item,
                           int stage, double h = 1e-5, int samples_per_tensor = 6,
                           std::uint64_t seed = 123);

}  // namespace gazesteer
