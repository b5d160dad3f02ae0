#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gazesteer/rng.hpp"
#include "gazesteer/train.hpp"

using namespace gazesteer;

namespace {

GenCfg tiny_data() {
  GenCfg cfg;
  cfg.seed = 21;
  cfg.n_videos = 5;
  cfg.items_per_video = 4;
  cfg.task_mix = {TaskKind::kFixatedNow};
  cfg.scene.T = 2;
  cfg.scene.H = 3;
  cfg.scene.W = 3;
  cfg.scene.n_objects = 4;
  cfg.features.d_v = 8;
  cfg.n_fixated = 2;
  return cfg;
}

BundleCfg tiny_bundle(GazeScheme scheme = GazeScheme::kCoordPe,
                      AdapterKind adapter = AdapterKind::kNone) {
  BundleCfg bc;
  bc.host.n_layers = 2;
  bc.host.d_model = 16;
  bc.host.n_heads = 2;
  bc.host.max_seq = 32;
  bc.host.d_v = 8;
  bc.resampler.d_v = 8;
  bc.resampler.d_l = 8;
  bc.resampler.d_llm = 16;
  bc.resampler.n_latents = 4;
  bc.resampler.n_blocks = 1;
  bc.resampler.scheme = scheme;
  bc.gaze.scheme = scheme;
  bc.gaze.grid_h = 3;
  bc.gaze.grid_w = 3;
  bc.inject.layers = {0, 1};
  bc.adapter.kind = adapter;
  bc.adapter.lora.rank = 2;
  bc.adapter.lora.alpha = 4.0;
  return bc;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("learning rate ramps linearly through warmup then holds") {
  OptimCfg cfg;
  cfg.lr = 3e-4;
  cfg.warmup = 20;
  CHECK(lr_at(cfg, 10) == doctest::Approx(1.5e-4));
  CHECK(lr_at(cfg, 20) == doctest::Approx(3e-4));
  CHECK(lr_at(cfg, 100) == doctest::Approx(3e-4));
  cfg.warmup = 0;
  CHECK(lr_at(cfg, 1) == doctest::Approx(3e-4));
}

TEST_CASE("first optimizer step matches the closed form") {
  OptimCfg cfg;
  cfg.lr = 3e-4;
  cfg.wd = 1e-2;
  cfg.warmup = 1;
  TensorStore store;
  int plain = store.add("p", Mat::Ones(1, 1), true, false);
  int decayed = store.add("w", Mat::Ones(1, 1), true, true);
  AdamW opt(cfg, {plain, decayed}, store);

  std::map<int, Mat> grads;
  grads[plain] = Mat::Ones(1, 1);
  grads[decayed] = Mat::Ones(1, 1);
  opt.step(store, grads);

  // bias-corrected moments of a first step cancel, leaving lr * g/(|g|+eps)
  double base = 1.0 - 3e-4 * (1.0 / (1.0 + 1e-8));
  CHECK(store.at(plain).value(0, 0) == doctest::Approx(base).epsilon(1e-12));
  double with_decay = base - 3e-4 * 1e-2 * base;
  CHECK(store.at(decayed).value(0, 0) == doctest::Approx(with_decay).epsilon(1e-12));
  CHECK(opt.steps_done() == 1);
}

TEST_CASE("slots without gradients decay their moments but keep their value") {
  OptimCfg cfg;
  cfg.warmup = 1;
  TensorStore store;
  int a = store.add("a", Mat::Ones(1, 1), true, false);
  int b = store.add("b", Mat::Ones(1, 1), true, false);
  AdamW opt(cfg, {a, b}, store);
  std::map<int, Mat> grads;
  grads[a] = Mat::Ones(1, 1);
  opt.step(store, grads);
  CHECK(store.at(a).value(0, 0) < 1.0);
  CHECK(store.at(b).value(0, 0) == 1.0);  // zero moments stay zero, update is 0/eps
}

TEST_CASE("summing per-item gradients equals one combined backward pass") {
  Runtime rt(gen_dataset(tiny_data()));
  Bundle bundle(tiny_bundle());
  const Item& i1 = rt.dataset().items[0];
  const Item& i2 = rt.dataset().items[1];

  std::map<int, Mat> summed;
  for (const Item* it : {&i1, &i2}) {
    ag::Tape tape;
    ItemGraph g = bundle.build_item(tape, *it, rt.features(it->video_id),
                                    rt.scanpath(it->video_id), rt.frame_dt(), true);
    tape.backward(g.loss);
    for (const auto& [slot, grad] : tape.slot_grads()) {
      auto f = summed.find(slot);
      if (f == summed.end()) summed.emplace(slot, grad);
      else f->second += grad;
    }
  }

  ag::Tape tape;
  ItemGraph g1 = bundle.build_item(tape, i1, rt.features(i1.video_id),
                                   rt.scanpath(i1.video_id), rt.frame_dt(), true);
  ItemGraph g2 = bundle.build_item(tape, i2, rt.features(i2.video_id),
                                   rt.scanpath(i2.video_id), rt.frame_dt(), true);
  tape.backward(tape.add(g1.loss, g2.loss));

  REQUIRE(tape.slot_grads().size() == summed.size());
  for (const auto& [slot, grad] : tape.slot_grads()) {
    REQUIRE(summed.count(slot) == 1);
    double denom = std::max(1.0, grad.cwiseAbs().maxCoeff());
    CHECK((grad - summed.at(slot)).cwiseAbs().maxCoeff() / denom < 1e-10);
  }
}

TEST_CASE("stage one trains the injection path and nothing else") {
  Runtime rt(gen_dataset(tiny_data()));
  Bundle trained(tiny_bundle(GazeScheme::kCoordPe, AdapterKind::kLora));
  Bundle fresh(tiny_bundle(GazeScheme::kCoordPe, AdapterKind::kLora));

  TrainCfg tc;
  tc.stage = 1;
  tc.max_epochs = 2;
  tc.patience = 10;
  tc.optim.warmup = 2;
  run_stage(trained, rt, tc);

  bool resampler_moved = false;
  REQUIRE(trained.store().size() == fresh.store().size());
  for (int i = 0; i < static_cast<int>(trained.store().size()); ++i) {
    const Tensor& a = trained.store().at(i);
    const Tensor& b = fresh.store().at(i);
    REQUIRE(a.name == b.name);
    bool frozen_family = a.name.rfind("host.", 0) == 0 || a.name.rfind("lora.", 0) == 0;
    if (frozen_family) {
      CHECK(a.value == b.value);
    } else if (a.value != b.value) {
      resampler_moved = true;
    }
  }
  CHECK(resampler_moved);
}

TEST_CASE("stage two slots add the adapters on top of stage one") {
  Bundle bundle(tiny_bundle(GazeScheme::kHeatmapTau, AdapterKind::kLora));
  auto s1 = bundle.trainable_slots(1);
  auto s2 = bundle.trainable_slots(2);
  CHECK(s2.size() == s1.size() + 4 * 2);  // q/v pairs of A and B per layer
  bool tau_in = false, alpha_in = false;
  for (int s : s1) {
    const std::string& n = bundle.store().at(s).name;
    if (n == "gaze.tau") tau_in = true;
    if (n.rfind("inject.alpha.", 0) == 0) alpha_in = true;
    CHECK(n.rfind("lora.", 0) != 0);
    CHECK(n.rfind("host.", 0) != 0);
  }
  CHECK(tau_in);
  CHECK(alpha_in);

  Bundle no_tau(tiny_bundle(GazeScheme::kHeatmapDur, AdapterKind::kNone));
  CHECK(no_tau.tau_slot() == -1);
  for (int s : no_tau.trainable_slots(2))
    CHECK(no_tau.store().at(s).name.rfind("lora.", 0) != 0);
}

TEST_CASE("a model with an untrained head starts at chance loss") {
  GenCfg gc;
  gc.seed = 31;
  gc.n_videos = 3;
  gc.items_per_video = 4;
  gc.task_mix = {TaskKind::kFixatedNow};
  Runtime rt(gen_dataset(gc));
  BundleCfg bc;  // full-size defaults
  fit_host_cfg(bc.host, gc);
  Bundle bundle(bc);
  std::vector<const Item*> all;
  for (const auto& it : rt.dataset().items) all.push_back(&it);
  EvalResult ev = evaluate(bundle, rt, all);
  CHECK(std::abs(ev.mean_loss - 1.3862943611198906) <= 0.15);
}

TEST_CASE("training runs are reproducible to the logged digit") {
  namespace fs = std::filesystem;
  std::string log1 = (fs::temp_directory_path() / "trainlog_a.txt").string();
  std::string log2 = (fs::temp_directory_path() / "trainlog_b.txt").string();
  fs::remove(log1);
  fs::remove(log2);

  for (const std::string& path : {log1, log2}) {
    Runtime rt(gen_dataset(tiny_data()));
    Bundle bundle(tiny_bundle());
    TrainCfg tc;
    tc.stage = 1;
    tc.max_epochs = 2;
    tc.patience = 10;
    tc.seed = 9;
    tc.optim.warmup = 2;
    tc.log_path = path;
    TrainResult r = run_stage(bundle, rt, tc);
    CHECK(r.epochs_run == 2);
    CHECK(r.steps == 4);  // 12 train items, accum 8 -> 2 steps per epoch
  }
  std::string a = slurp(log1), b = slurp(log2);
  CHECK(!a.empty());
  CHECK(a == b);
  // each epoch logs one train line and one val line in a fixed format
  int train_lines = 0, val_lines = 0;
  std::stringstream ss(a);
  std::string line;
  while (std::getline(ss, line)) {
    CHECK(line.rfind("step=", 0) == 0);
    if (line.find("split=train") != std::string::npos) ++train_lines;
    if (line.find("split=val") != std::string::npos) ++val_lines;
    CHECK(line.find("loss=") != std::string::npos);
    CHECK(line.find("acc=") != std::string::npos);
    CHECK(line.find("lr=") != std::string::npos);
  }
  CHECK(train_lines == 2);
  CHECK(val_lines == 2);
  fs::remove(log1);
  fs::remove(log2);
}

TEST_CASE("patience stops a run that cannot improve") {
  Runtime rt(gen_dataset(tiny_data()));
  Bundle bundle(tiny_bundle());
  TrainCfg tc;
  tc.stage = 1;
  tc.max_epochs = 6;
  tc.patience = 1;
  tc.optim.lr = 0.0;  // parameters cannot move, so epoch 1 stays the best
  TrainResult r = run_stage(bundle, rt, tc);
  CHECK(r.early_stopped);
  CHECK(r.epochs_run == 2);
  CHECK(r.best_epoch == 1);
}

TEST_CASE("finite difference agreement on every trained tensor") {
  GenCfg gc = tiny_data();
  Runtime rt(gen_dataset(gc));
  Bundle bundle(tiny_bundle(GazeScheme::kHeatmapTau, AdapterKind::kLora));
  // move off the zero point so the output path has gradients
  for (const auto& rs : bundle.resampler_slots()) {
    Mat& w = bundle.store().at(rs.w_out).value;
    Rng wr(55);
    for (Index r = 0; r < w.rows(); ++r)
      for (Index c = 0; c < w.cols(); ++c) w(r, c) = 0.05 * wr.normal();
  }
  const Item& item = rt.dataset().items[0];
  GradCheckResult res = grad_check(bundle, rt, item, 2, 1e-5, 4, 77);
  CHECK(res.max_rel_err < 1e-4);
  CHECK(!res.per_tensor.empty());
}
