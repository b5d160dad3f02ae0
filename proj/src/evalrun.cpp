#include "gazesteer/evalrun.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "gazesteer/checkpoint.hpp"
#include "gazesteer/train.hpp"

namespace gazesteer {

const std::vector<Mat>& Runtime::features(const std::string& video_id) const {
  auto it = cache_.find(video_id);
  if (it != cache_.end()) return it->second;
  const VideoEntry& ve = ds_.video(video_id);
  SceneCfg sc = ds_.cfg.scene;
  sc.seed = ve.scene_seed;
  Scene scene = gen_scene(sc);
  auto [ins, ok] = cache_.emplace(video_id, render_features(scene, ds_.cfg.features));
  return ins->second;
}

const Scanpath& Runtime::scanpath(const std::string& video_id) const {
  return ds_.video(video_id).scanpath;
}

Index argmax_row(const Mat& row) {
  Index best = 0;
  for (Index i = 1; i < row.cols(); ++i)
    if (row(0, i) > row(0, best)) best = i;
  return best;
}

EvalResult evaluate(const Bundle& bundle, const Runtime& rt,
                    const std::vector<const Item*>& items) {
  EvalResult res;
  std::map<std::string, std::pair<Index, Index>> per_task;  // correct, total
  double loss_sum = 0;
  Index correct_total = 0;
  for (const Item* it : items) {
    ag::Tape tape;
    ItemGraph g = bundle.build_item(tape, *it, rt.features(it->video_id),
                                    rt.scanpath(it->video_id), rt.frame_dt(), true);
    loss_sum += tape.val(g.loss)(0, 0);
    bool ok = argmax_row(tape.val(g.answer)) == it->correct_pos;
    auto& [c, n] = per_task[task_name(it->task)];
    n += 1;
    if (ok) {
      c += 1;
      ++correct_total;
    }
  }
  res.n = static_cast<Index>(items.size());
  if (res.n == 0) return res;
  res.mean_loss = loss_sum / static_cast<double>(res.n);
  res.micro_acc = static_cast<double>(correct_total) / static_cast<double>(res.n);
  double acc_sum = 0;
  for (const auto& [name, cn] : per_task) {
    double a = static_cast<double>(cn.first) / static_cast<double>(cn.second);
    res.task_acc[name] = a;
    acc_sum += a;
  }
  res.mean_acc = acc_sum / static_cast<double>(per_task.size());
  return res;
}

namespace {

std::string scheme_name(GazeScheme s) { return scheme_label(s); }

std::string adapter_name(AdapterKind a) {
  return a == AdapterKind::kLora ? "lora" : "none";
}

// Train one cell and return its validation metrics.
EvalResult run_cell(const AblationCfg& cfg, const Runtime& rt, GazeScheme scheme,
                    Index n_latents, bool share, AdapterKind adapter,
                    std::uint64_t seed) {
  BundleCfg bc;
  fit_host_cfg(bc.host, cfg.data);
  bc.resampler.d_v = cfg.data.features.d_v;
  bc.resampler.n_latents = n_latents;
  bc.resampler.scheme = scheme;
  bc.gaze.scheme = scheme;
  bc.gaze.grid_h = cfg.data.scene.H;
  bc.gaze.grid_w = cfg.data.scene.W;
  bc.inject.share = share;
  bc.adapter.kind = adapter;
  bc.init_seed = seed;
  Bundle bundle(bc);

  TrainCfg tc;
  tc.seed = seed;
  tc.patience = cfg.epochs_per_cell;  // cells are too short for early stopping
  if (adapter == AdapterKind::kLora) {
    // same total budget as the plain cells, split across the stages (5 -> 3+2)
    int s1 = std::max(1, (cfg.epochs_per_cell * 3) / 5);
    int s2 = std::max(1, cfg.epochs_per_cell - s1);
    tc.stage = 1;
    tc.max_epochs = s1;
    run_stage(bundle, rt, tc);
    tc.stage = 2;
    tc.max_epochs = s2;
    run_stage(bundle, rt, tc);
  } else {
    tc.stage = 1;
    tc.max_epochs = cfg.epochs_per_cell;
    run_stage(bundle, rt, tc);
  }
  return evaluate(bundle, rt, rt.dataset().items_in(Split::kVal));
}

}  // namespace

AblationReport run_ablation(const AblationCfg& cfg) {
  AblationReport rep;
  Runtime rt(gen_dataset(cfg.data));

  auto add_cell = [&](GazeScheme sch, Index nl, bool sh, AdapterKind ad, int replicate) {
    AblationCell cell;
    cell.scheme = sch;
    cell.n_latents = nl;
    cell.share = sh;
    cell.adapter = ad;
    cell.replicate = replicate;
    try {
      cell.val = run_cell(cfg, rt, sch, nl, sh, ad,
                          cfg.seed + static_cast<std::uint64_t>(replicate) * 1000003ULL);
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.error = e.what();
      ++rep.n_failed;
    }
    rep.cells.push_back(std::move(cell));
  };

  // replicate 0: the full grid
  for (GazeScheme sch : cfg.schemes)
    for (Index nl : cfg.latent_counts)
      for (bool sh : cfg.share_opts)
        for (AdapterKind ad : cfg.adapters) add_cell(sch, nl, sh, ad, 0);
  // extra replicates: scheme axis at the default corner of the other axes
  for (int r = 1; r < cfg.replicates; ++r)
    for (GazeScheme sch : cfg.schemes)
      add_cell(sch, cfg.latent_counts.front(), cfg.share_opts.front(),
               cfg.adapters.front(), r);

  // axis summaries over the replicate-0 grid
  auto summarize = [&](const std::string& axis, auto option_of, auto name_of) {
    AxisSummary s;
    s.axis = axis;
    std::map<std::string, std::vector<const AblationCell*>> groups;
    for (const auto& c : rep.cells)
      if (c.replicate == 0 && !c.failed) groups[name_of(option_of(c))].push_back(&c);
    s.single_option = groups.size() <= 1;
    std::map<std::string, double> opt_mean;
    std::map<std::string, std::map<std::string, double>> opt_task;  // option -> task -> mean acc
    for (const auto& [opt, cells] : groups) {
      double sum = 0;
      std::map<std::string, std::pair<double, int>> task_sums;
      for (const AblationCell* c : cells) {
        sum += c->val.mean_acc;
        for (const auto& [t, a] : c->val.task_acc) {
          task_sums[t].first += a;
          task_sums[t].second += 1;
        }
      }
      opt_mean[opt] = cells.empty() ? 0 : sum / static_cast<double>(cells.size());
      for (const auto& [t, sn] : task_sums)
        opt_task[opt][t] = sn.first / static_cast<double>(sn.second);
    }
    for (const auto& [opt, m] : opt_mean)
      if (s.best_option.empty() || m > s.best_mean) {
        s.best_option = opt;
        s.best_mean = m;
      }
    if (!s.single_option) {
      std::set<std::string> tasks;
      for (const auto& [opt, tm] : opt_task)
        for (const auto& [t, a] : tm) tasks.insert(t);
      for (const std::string& t : tasks) {
        double lo = 2, hi = -1;
        for (const auto& [opt, tm] : opt_task) {
          auto it = tm.find(t);
          if (it == tm.end()) continue;
          lo = std::min(lo, it->second);
          hi = std::max(hi, it->second);
        }
        if (hi >= lo) s.max_task_spread = std::max(s.max_task_spread, hi - lo);
      }
    }
    rep.axes.push_back(std::move(s));
  };

  summarize("gaze_scheme", [](const AblationCell& c) { return c.scheme; },
            [](GazeScheme s) { return scheme_name(s); });
  summarize("latent_count", [](const AblationCell& c) { return c.n_latents; },
            [](Index n) { return std::to_string(n); });
  summarize("share_resampler", [](const AblationCell& c) { return c.share; },
            [](bool b) { return std::string(b ? "shared" : "per_layer"); });
  summarize("adapter", [](const AblationCell& c) { return c.adapter; },
            [](AdapterKind a) { return std::string(adapter_name(a)); });

  // never-fixated comparison per replicate, at the default corner
  for (int r = 0; r < cfg.replicates; ++r) {
    std::map<GazeScheme, double> nfi;
    for (const auto& c : rep.cells) {
      if (c.failed || c.replicate != r) continue;
      if (c.n_latents != cfg.latent_counts.front() || c.share != cfg.share_opts.front() ||
          c.adapter != cfg.adapters.front())
        continue;
      auto it = c.val.task_acc.find(task_name(TaskKind::kNeverFixated));
      if (it != c.val.task_acc.end()) nfi[c.scheme] = it->second;
    }
    if (nfi.count(GazeScheme::kCoordPe) && nfi.count(GazeScheme::kHeatmapTau) &&
        nfi.count(GazeScheme::kHeatmapDur)) {
      double c = nfi[GazeScheme::kCoordPe];
      rep.coord_wins_nfi.push_back(c >= nfi[GazeScheme::kHeatmapTau] &&
                                   c >= nfi[GazeScheme::kHeatmapDur]);
    }
  }
  return rep;
}

std::string render_report(const AblationReport& rep) {
  std::ostringstream os;
  os.precision(4);
  os << "cells (replicate 0 = full grid):\n";
  for (const auto& c : rep.cells) {
    os << "  r" << c.replicate << " scheme=" << scheme_name(c.scheme)
       << " latents=" << c.n_latents << " resampler=" << (c.share ? "shared" : "per_layer")
       << " adapter=" << adapter_name(c.adapter);
    if (c.failed) {
      os << " FAILED: " << c.error << "\n";
      continue;
    }
    os << " val_mean_acc=" << c.val.mean_acc;
    for (const auto& [t, a] : c.val.task_acc) os << " " << t << "=" << a;
    os << "\n";
  }
  os << "axes:\n";
  for (const auto& a : rep.axes) {
    os << "  " << a.axis << ": best=" << a.best_option << " (mean acc " << a.best_mean << ")";
    if (a.single_option)
      os << " spread=n/a\n";
    else
      os << " max task spread=" << a.max_task_spread << "\n";
  }
  os << "never_fixated, coord_pe >= both heatmaps per replicate:";
  for (bool b : rep.coord_wins_nfi) os << ' ' << (b ? "yes" : "no");
  os << "\n";
  if (rep.n_failed) os << "failed cells: " << rep.n_failed << "\n";
  return os.str();
}

}  // namespace gazesteer
