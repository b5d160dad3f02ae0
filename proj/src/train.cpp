#include "gazesteer/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gazesteer/rng.hpp"

namespace gazesteer {

double lr_at(const OptimCfg& cfg, int step) {
  double ramp = static_cast<double>(step) / static_cast<double>(std::max(1, cfg.warmup));
  return cfg.lr * std::min(1.0, ramp);
}

AdamW::AdamW(OptimCfg cfg, std::vector<int> slots, const TensorStore& store)
    : cfg_(cfg), slots_(std::move(slots)) {
  for (int s : slots_) {
    const Mat& v = store.at(s).value;
    moments_[s] = {Mat::Zero(v.rows(), v.cols()), Mat::Zero(v.rows(), v.cols())};
  }
}

void AdamW::step(TensorStore& store, const std::map<int, Mat>& grads) {
  ++t_;
  double lr = lr_at(cfg_, t_);
  double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (int s : slots_) {
    Tensor& t = store.at(s);
    auto& [m, v] = moments_.at(s);
    auto git = grads.find(s);
    if (git != grads.end()) {
      const Mat& g = git->second;
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    } else {
      m *= cfg_.beta1;
      v *= cfg_.beta2;
    }
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    t.value.array() -= lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps));
    if (t.decay) t.value -= lr * cfg_.wd * t.value;
  }
}

namespace {

void log_line(std::ofstream* log, bool verbose, int step, int epoch, const char* split,
              double loss, double acc, double lr) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "step=%d epoch=%d split=%s loss=%.17g acc=%.17g lr=%.17g",
                step, epoch, split, loss, acc, lr);
  if (log && log->is_open()) *log << buf << "\n";
  if (verbose) std::fprintf(stderr, "%s\n", buf);
}

}  // namespace

TrainResult run_stage(Bundle& bundle, const Runtime& rt, const TrainCfg& cfg) {
  std::vector<int> slots = bundle.trainable_slots(cfg.stage);
  if (slots.empty()) throw std::invalid_argument("run_stage: nothing to train");
  AdamW opt(cfg.optim, slots, bundle.store());

  auto train_items = rt.dataset().items_in(Split::kTrain);
  auto val_items = rt.dataset().items_in(Split::kVal);
  if (train_items.empty()) throw std::invalid_argument("run_stage: empty train split");

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open metrics log: " + cfg.log_path);
  }

  TrainResult res;
  res.best_val_acc = -1.0;
  std::vector<Mat> best_values;
  auto snapshot = [&] {
    best_values.clear();
    for (int s : slots) best_values.push_back(bundle.store().at(s).value);
  };
  auto restore = [&] {
    for (std::size_t i = 0; i < slots.size(); ++i)
      bundle.store().at(slots[i]).value = best_values[i];
  };

  int tau = bundle.tau_slot();
  bool train_tau = tau >= 0 && std::find(slots.begin(), slots.end(), tau) != slots.end();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train_items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng erng(derive_seed(cfg.seed, "epoch" + std::to_string(epoch) + "s" + std::to_string(cfg.stage)));
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      auto j = i + static_cast<std::size_t>(erng.below(order.size() - i));
      std::swap(order[i], order[j]);
    }

    std::map<int, Mat> gsum;
    int in_group = 0;
    double loss_sum = 0;
    Index correct = 0;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
      const Item& item = *train_items[order[oi]];
      ag::Tape tape;
      ItemGraph g = bundle.build_item(tape, item, rt.features(item.video_id),
                                      rt.scanpath(item.video_id), rt.frame_dt(), true);
      double loss = tape.val(g.loss)(0, 0);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite loss at step " << opt.steps_done() + 1 << " epoch " << epoch
           << " item " << item.id;
        throw std::runtime_error(os.str());
      }
      loss_sum += loss;
      if (argmax_row(tape.val(g.answer)) == item.correct_pos) ++correct;
      tape.backward(g.loss);
      for (const auto& [slot, grad] : tape.slot_grads()) {
        auto it = gsum.find(slot);
        if (it == gsum.end())
          gsum.emplace(slot, grad);
        else
          it->second += grad;
      }
      if (train_tau) {
        double tg = bundle.take_tau_grad();
        if (tg != 0.0) {
          auto it = gsum.find(tau);
          if (it == gsum.end())
            gsum.emplace(tau, Mat::Constant(1, 1, tg));
          else
            it->second(0, 0) += tg;
        }
      } else {
        bundle.take_tau_grad();  // discard
      }
      if (++in_group == cfg.optim.accum || oi + 1 == order.size()) {
        opt.step(bundle.store(), gsum);
        gsum.clear();
        in_group = 0;
      }
    }
    res.epochs_run = epoch;
    double train_loss = loss_sum / static_cast<double>(order.size());
    double train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    log_line(&log, cfg.verbose, opt.steps_done(), epoch, "train", train_loss, train_acc,
             lr_at(cfg.optim, opt.steps_done()));

    EvalResult ev = evaluate(bundle, rt, val_items);
    log_line(&log, cfg.verbose, opt.steps_done(), epoch, "val", ev.mean_loss, ev.micro_acc,
             lr_at(cfg.optim, opt.steps_done()));

    if (ev.micro_acc > res.best_val_acc) {
      res.best_val_acc = ev.micro_acc;
      res.best_val_loss = ev.mean_loss;
      res.best_epoch = epoch;
      since_best = 0;
      snapshot();
    } else if (++since_best >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  res.steps = opt.steps_done();
  if (!best_values.empty()) restore();
  return res;
}

GradCheckResult grad_check(Bundle& bundle, const Runtime& rt, const Item& item,
                           int stage, double h, int samples_per_tensor,
                           std::uint64_t seed) {
  const std::vector<Mat>& feats = rt.features(item.video_id);
  const Scanpath& sp = rt.scanpath(item.video_id);
  double dt = rt.frame_dt();

  auto loss_value = [&]() {
    ag::Tape tape;
    ItemGraph g = bundle.build_item(tape, item, feats, sp, dt, true);
    return tape.val(g.loss)(0, 0);
  };

  // analytic pass
  std::map<int, Mat> grads;
  double tau_g = 0;
  {
    ag::Tape tape;
    ItemGraph g = bundle.build_item(tape, item, feats, sp, dt, true);
    tape.backward(g.loss);
    grads = tape.slot_grads();
    tau_g = bundle.take_tau_grad();
  }
  int tau = bundle.tau_slot();

  GradCheckResult res;
  Rng rng(seed);
  for (int slot : bundle.trainable_slots(stage)) {
    Tensor& t = bundle.store().at(slot);
    Index n = t.value.size();
    double worst = 0;
    for (int s = 0; s < samples_per_tensor; ++s) {
      Index flat = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
      Index r = flat % t.value.rows(), c = flat / t.value.rows();
      double saved = t.value(r, c);
      t.value(r, c) = saved + h;
      double lp = loss_value();
      t.value(r, c) = saved - h;
      double lm = loss_value();
      t.value(r, c) = saved;
      bundle.take_tau_grad();  // clear anything heatmap pullbacks accumulated
      double fd = (lp - lm) / (2.0 * h);
      double an;
      if (slot == tau) {
        an = tau_g;
      } else {
        auto it = grads.find(slot);
        an = it == grads.end() ? 0.0 : it->second(r, c);
      }
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      worst = std::max(worst, rel);
    }
    res.per_tensor[t.name] = worst;
    res.max_rel_err = std::max(res.max_rel_err, worst);
  }
  return res;
}

}  // namespace gazesteer
