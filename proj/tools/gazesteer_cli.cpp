#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "gazesteer/checkpoint.hpp"
#include "gazesteer/evalrun.hpp"
#include "gazesteer/taskgen.hpp"
#include "gazesteer/train.hpp"

using namespace gazesteer;

namespace {

struct DataOpts {
  std::string dir;
};

struct ModelOpts {
  std::string scheme = "coord_pe";
  Index d_l = 64;
  Index n_latents = 32;
  Index n_blocks = 2;
  std::string inject_layers = "1,3,5,7";
  bool share = false;
  std::string adapter = "none";
  Index lora_rank = 8;
  double lora_alpha = 16.0;
  double sigma = 0.08;
  double tau_init = 1.0;
  std::uint64_t init_seed = 11;
  bool gaze_off = false;
};

BundleCfg make_bundle_cfg(const ModelOpts& m, const GenCfg& data) {
  BundleCfg bc;
  fit_host_cfg(bc.host, data);
  bc.resampler.d_v = data.features.d_v;
  bc.resampler.d_llm = bc.host.d_model;
  bc.resampler.d_l = m.d_l;
  bc.resampler.n_latents = m.n_latents;
  bc.resampler.n_blocks = m.n_blocks;
  bc.resampler.scheme = scheme_from_label(m.scheme);
  bc.gaze.scheme = bc.resampler.scheme;
  bc.gaze.sigma = m.sigma;
  bc.gaze.tau_init = m.tau_init;
  bc.gaze.grid_h = data.scene.H;
  bc.gaze.grid_w = data.scene.W;
  bc.inject.layers.clear();
  std::stringstream ss(m.inject_layers);
  std::string tok;
  while (std::getline(ss, tok, ',')) bc.inject.layers.push_back(std::stol(tok));
  bc.inject.share = m.share;
  bc.adapter.kind = m.adapter == "lora" ? AdapterKind::kLora : AdapterKind::kNone;
  bc.adapter.lora.rank = m.lora_rank;
  bc.adapter.lora.alpha = m.lora_alpha;
  bc.init_seed = m.init_seed;
  bc.gaze_enabled = !m.gaze_off;
  return bc;
}

void print_eval(const EvalResult& ev) {
  std::printf("items=%lld loss=%.6f micro_acc=%.4f mean_acc=%.4f\n",
              static_cast<long long>(ev.n), ev.mean_loss, ev.micro_acc, ev.mean_acc);
  for (const auto& [t, a] : ev.task_acc) std::printf("  %s=%.4f\n", t.c_str(), a);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaze-conditioned resampler workbench"};
  app.require_subcommand(1);
  app.set_config("--config")->envname("GAZESTEER_CONFIG");
  // tolerate config keys meant for other subcommands, but keep unknown
  // command-line flags an error (allow_config_extras(true) would allow both)
  app.allow_config_extras(CLI::config_extras_mode::ignore);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  GenCfg gcfg;
  std::string gen_out, gen_mix = "fixated_now";
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gcfg.seed, "dataset seed");
  gen->add_option("--videos", gcfg.n_videos, "number of videos");
  gen->add_option("--items-per-video", gcfg.items_per_video, "items per video");
  gen->add_option("--task-mix", gen_mix, "comma list: fixated_now,fixated_first,never_fixated");
  gen->add_option("--objects", gcfg.scene.n_objects, "objects per scene");
  gen->add_option("--n-fixated", gcfg.n_fixated, "distinct fixated objects (one per frame)");
  gen->add_option("--frames", gcfg.scene.T, "frames per video");
  gen->add_option("--grid-h", gcfg.scene.H, "grid rows");
  gen->add_option("--grid-w", gcfg.scene.W, "grid cols");
  gen->add_option("--step", gcfg.scene.step, "random-walk step");
  gen->add_option("--d-v", gcfg.features.d_v, "feature width");
  gen->add_option("--feature-seed", gcfg.features.feature_seed, "feature embedding seed");
  std::string gen_mode = "temporal";
  gen->add_option("--feature-mode", gen_mode, "temporal|static");
  gen->add_option("--noise-scale", gcfg.features.noise_scale, "per-cell signature scale");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train the resampler (stage 1) or adapters too (stage 2)");
  DataOpts tr_data;
  ModelOpts tr_model;
  TrainCfg tr_cfg;
  std::string tr_out, tr_from;
  bool tr_from_scratch = false;
  tr->add_option("--data", tr_data.dir, "dataset directory")->required();
  tr->add_option("--out", tr_out, "output directory (checkpoint.bin, metrics.log)")->required();
  tr->add_option("--stage", tr_cfg.stage, "1 or 2")->check(CLI::Range(1, 2));
  tr->add_option("--epochs", tr_cfg.max_epochs, "epoch cap");
  tr->add_option("--patience", tr_cfg.patience, "early-stop patience");
  tr->add_option("--seed", tr_cfg.seed, "training seed");
  tr->add_option("--lr", tr_cfg.optim.lr, "peak learning rate");
  tr->add_option("--weight-decay", tr_cfg.optim.wd, "decoupled weight decay");
  tr->add_option("--warmup", tr_cfg.optim.warmup, "warmup steps");
  tr->add_option("--accum", tr_cfg.optim.accum, "gradient accumulation");
  tr->add_flag("--verbose", tr_cfg.verbose, "log to stderr too");
  tr->add_option("--from", tr_from, "checkpoint to start from (required for stage 2)");
  tr->add_flag("--from-scratch", tr_from_scratch, "allow stage 2 without a stage-1 checkpoint");
  tr->add_option("--scheme", tr_model.scheme, "coord_pe|heatmap_tau|heatmap_dur");
  tr->add_option("--d-latent", tr_model.d_l, "latent width");
  tr->add_option("--latents", tr_model.n_latents, "latent count");
  tr->add_option("--blocks", tr_model.n_blocks, "cross-attention blocks");
  tr->add_option("--inject-layers", tr_model.inject_layers, "comma list of decoder layers");
  tr->add_flag("--share", tr_model.share, "one resampler for all layers");
  tr->add_option("--adapter", tr_model.adapter, "none|lora");
  tr->add_option("--lora-rank", tr_model.lora_rank, "adapter rank");
  tr->add_option("--lora-alpha", tr_model.lora_alpha, "adapter alpha");
  tr->add_option("--sigma", tr_model.sigma, "heatmap width");
  tr->add_option("--tau-init", tr_model.tau_init, "heatmap recency init");
  tr->add_option("--init-seed", tr_model.init_seed, "model init seed");
  tr->add_flag("--gaze-off", tr_model.gaze_off, "train the gaze-free control");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_split = "val";
  DataOpts ev_data;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data.dir, "dataset directory")->required();
  ev->add_option("--split", ev_split, "train|val|test");

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "factorial ablation on a small preset");
  AblationCfg abcfg;
  std::string ab_out;
  abcfg.data.n_videos = 12;
  abcfg.data.items_per_video = 12;
  abcfg.data.task_mix = {TaskKind::kFixatedNow, TaskKind::kFixatedFirst, TaskKind::kNeverFixated};
  // first-fixated needs 4 fixated objects and one fixation per frame
  abcfg.data.scene.T = 4;
  abcfg.data.scene.H = 5;
  abcfg.data.scene.W = 5;
  abcfg.data.n_fixated = 4;
  ab->add_option("--out", ab_out, "report file (stdout always)");
  ab->add_option("--seed", abcfg.seed, "base seed");
  ab->add_option("--replicates", abcfg.replicates, "scheme-axis replicates");
  ab->add_option("--epochs-per-cell", abcfg.epochs_per_cell, "budget per cell");
  ab->add_option("--videos", abcfg.data.n_videos, "videos in the preset");
  ab->add_option("--items-per-video", abcfg.data.items_per_video, "items per video");
  ab->add_flag("--verbose", abcfg.verbose, "progress to stderr");

  // ---- grad-check ----
  auto* gc = app.add_subcommand("grad-check", "finite-difference audit on a tiny config");
  std::string gc_scheme = "coord_pe";
  int gc_stage = 2;
  gc->add_option("--scheme", gc_scheme, "gaze scheme to audit");
  gc->add_option("--stage", gc_stage, "trainable set to audit (1|2)")->check(CLI::Range(1, 2));

  // ---- attach-demo ----
  auto* ad = app.add_subcommand("attach-demo", "show attach/detach leaving the host intact");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      gcfg.task_mix.clear();
      std::stringstream ss(gen_mix);
      std::string t;
      while (std::getline(ss, t, ',')) gcfg.task_mix.push_back(task_from_name(t));
      gcfg.features.mode = gen_mode == "static" ? FeatureMode::kStatic : FeatureMode::kTemporal;
      Dataset ds = gen_dataset(gcfg);
      save_dataset(gen_out, ds);
      auto counts = split_counts(gcfg.n_videos);
      std::printf("wrote %s: %zu items, %d videos (train/val/test = %d/%d/%d)\n",
                  gen_out.c_str(), ds.items.size(), gcfg.n_videos, counts[0], counts[1], counts[2]);
      std::printf("manifest hash: %016llx\n",
                  static_cast<unsigned long long>(manifest_hash(gen_out)));
      return 0;
    }

    if (*tr) {
      if (tr_cfg.stage == 2 && tr_from.empty() && !tr_from_scratch) {
        std::fprintf(stderr,
                     "train: stage 2 needs --from <stage-1 checkpoint> "
                     "(or --from-scratch to start cold)\n");
        return 2;
      }
      Runtime rt(load_dataset(tr_data.dir));
      // stage 2 adds adapters unless the user explicitly said otherwise
      if (tr_cfg.stage == 2 && tr->count("--adapter") == 0) tr_model.adapter = "lora";
      BundleCfg bc;
      if (!tr_from.empty()) {
        CheckpointMeta meta = peek_checkpoint(tr_from);
        bc = bundle_cfg_from_kv(meta.config);
        if (tr_cfg.stage == 2 && tr_model.adapter == "lora") {
          bc.adapter.kind = AdapterKind::kLora;
          bc.adapter.lora.rank = tr_model.lora_rank;
          bc.adapter.lora.alpha = tr_model.lora_alpha;
        }
      } else {
        bc = make_bundle_cfg(tr_model, rt.dataset().cfg);
      }
      Bundle bundle(bc);
      if (!tr_from.empty()) load_checkpoint(tr_from, bundle.store(), true);

      std::filesystem::create_directories(tr_out);
      tr_cfg.log_path = tr_out + "/metrics.log";
      TrainResult res = run_stage(bundle, rt, tr_cfg);

      CheckpointMeta meta;
      meta.stage = tr_cfg.stage;
      meta.seed = tr_cfg.seed;
      meta.config = bundle_cfg_to_kv(bundle.cfg());
      std::ostringstream ms;
      ms.precision(17);
      ms << "best_val_acc=" << res.best_val_acc << "\n";
      ms << "best_epoch=" << res.best_epoch << "\n";
      ms << "epochs_run=" << res.epochs_run << "\n";
      ms << "early_stopped=" << (res.early_stopped ? 1 : 0) << "\n";
      ms << "manifest_hash=" << manifest_hash(tr_data.dir) << "\n";
      meta.metrics = ms.str();
      save_checkpoint(tr_out + "/checkpoint.bin", bundle.store(), meta);
      std::printf("stage %d done: best val acc %.4f (epoch %d of %d)%s\n", tr_cfg.stage,
                  res.best_val_acc, res.best_epoch, res.epochs_run,
                  res.early_stopped ? ", stopped early" : "");
      std::printf("checkpoint: %s/checkpoint.bin\n", tr_out.c_str());
      return 0;
    }

    if (*ev) {
      Runtime rt(load_dataset(ev_data.dir));
      CheckpointMeta meta = peek_checkpoint(ev_ckpt);
      Bundle bundle(bundle_cfg_from_kv(meta.config));
      load_checkpoint(ev_ckpt, bundle.store());
      Split sp = ev_split == "train" ? Split::kTrain : ev_split == "test" ? Split::kTest : Split::kVal;
      EvalResult res = evaluate(bundle, rt, rt.dataset().items_in(sp));
      std::printf("split=%s manifest=%016llx\n", ev_split.c_str(),
                  static_cast<unsigned long long>(manifest_hash(ev_data.dir)));
      print_eval(res);
      return 0;
    }

    if (*ab) {
      AblationReport rep = run_ablation(abcfg);
      std::string text = render_report(rep);
      std::fputs(text.c_str(), stdout);
      if (!ab_out.empty()) {
        std::ofstream f(ab_out);
        f << text;
      }
      return rep.n_failed > 0 ? 1 : 0;
    }

    if (*gc) {
      GenCfg small;
      small.n_videos = 7;
      small.items_per_video = 2;
      small.scene.T = 2;
      small.scene.H = 3;
      small.scene.W = 3;
      small.scene.n_objects = 5;
      small.features.d_v = 8;
      small.task_mix = {TaskKind::kFixatedNow};
      small.n_fixated = 2;
      Runtime rt(gen_dataset(small));

      ModelOpts m;
      m.scheme = gc_scheme;
      m.d_l = 8;
      m.n_latents = 4;
      m.n_blocks = 2;
      m.inject_layers = "0,1";
      m.adapter = gc_stage == 2 ? "lora" : "none";
      m.lora_rank = 2;
      m.lora_alpha = 4;
      BundleCfg bc = make_bundle_cfg(m, small);
      bc.host.n_layers = 2;
      bc.host.d_model = 16;
      bc.host.n_heads = 2;
      bc.resampler.d_llm = bc.host.d_model;
      Bundle bundle(bc);
      const Item& item = *rt.dataset().items_in(Split::kTrain).at(0);
      GradCheckResult res = grad_check(bundle, rt, item, gc_stage);
      std::printf("max rel err: %.3e over %zu tensors\n", res.max_rel_err,
                  res.per_tensor.size());
      for (const auto& [n, e] : res.per_tensor)
        if (e > 1e-6) std::printf("  %s: %.3e\n", n.c_str(), e);
      return res.max_rel_err < 1e-4 ? 0 : 1;
    }

    if (*ad) {
      GenCfg small;
      small.n_videos = 4;
      small.items_per_video = 2;
      small.scene.T = 3;
      small.scene.H = 4;
      small.scene.W = 4;
      small.n_fixated = 3;
      small.features.d_v = 16;
      Runtime rt(gen_dataset(small));
      ModelOpts m;
      m.d_l = 16;
      m.n_latents = 8;
      BundleCfg bc = make_bundle_cfg(m, small);
      Bundle bundle(bc);
      const Item& item = *rt.dataset().items_in(Split::kTrain).at(0);
      auto logits = [&]() {
        ag::Tape tape;
        ItemGraph g = bundle.build_item(tape, item, rt.features(item.video_id),
                                        rt.scanpath(item.video_id), rt.frame_dt(), false);
        return Mat(tape.val(g.answer));
      };
      // nudge the resampler output weights so the injection actually does something
      for (const auto& rs : bundle.resampler_slots())
        bundle.store().at(rs.w_out).value.setConstant(0.01);
      auto row_str = [](const Mat& m) {
        std::ostringstream os;
        os.precision(6);
        os << m;
        return os.str();
      };
      Mat attached = logits();
      bundle.detach();
      Mat detached = logits();
      bundle.attach();
      Mat reattached = logits();
      std::printf("attached:   %s\n", row_str(attached).c_str());
      std::printf("detached:   %s\n", row_str(detached).c_str());
      std::printf("reattached: %s\n", row_str(reattached).c_str());
      bool same = (attached - reattached).cwiseAbs().maxCoeff() == 0.0;
      bool differs = (attached - detached).cwiseAbs().maxCoeff() > 0.0;
      std::printf("reattach reproduces attached exactly: %s\n", same ? "yes" : "no");
      std::printf("injection changes the answer logits: %s\n", differs ? "yes" : "no");
      return same && differs ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
