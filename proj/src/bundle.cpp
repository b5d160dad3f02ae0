#include "gazesteer/bundle.hpp"

#include <algorithm>
#include <stdexcept>

#include "gazesteer/rng.hpp"

namespace gazesteer {

Bundle::Bundle(const BundleCfg& cfg) : cfg_(cfg) {
  if (cfg_.inject.layers.empty()) throw std::invalid_argument("bundle: no injection layers");
  for (Index l : cfg_.inject.layers)
    if (l < 0 || l >= cfg_.host.n_layers)
      throw std::invalid_argument("bundle: injection layer out of range");
  if (cfg_.resampler.d_llm != cfg_.host.d_model)
    throw std::invalid_argument("bundle: resampler output width must match host width");

  host_ = register_host(store_, cfg_.host);
  std::size_t n_res = cfg_.inject.share ? 1 : cfg_.inject.layers.size();
  for (std::size_t i = 0; i < n_res; ++i) {
    std::string prefix = cfg_.inject.share
                             ? std::string("resampler.shared")
                             : "resampler." + std::to_string(cfg_.inject.layers[i]);
    resamplers_.push_back(register_resampler(store_, cfg_.resampler, prefix,
                                             derive_seed(cfg_.init_seed, prefix)));
  }
  for (Index l : cfg_.inject.layers) {
    alphas_.push_back(store_.add("inject.alpha." + std::to_string(l), Mat::Ones(1, 1),
                                 true, false));
  }
  if (cfg_.gaze.scheme == GazeScheme::kHeatmapTau) {
    Mat tau(1, 1);
    tau(0, 0) = cfg_.gaze.tau_init;
    tau_slot_ = store_.add("gaze.tau", tau, true, false);
  }
  if (cfg_.adapter.kind == AdapterKind::kLora)
    lora_ = register_lora(store_, cfg_.host, cfg_.adapter.lora,
                          derive_seed(cfg_.init_seed, "lora"));
}

void Bundle::attach() {
  if (attached_) throw std::runtime_error("bundle: already attached");
  attached_ = true;
}

void Bundle::detach() {
  if (!attached_) throw std::runtime_error("bundle: already detached");
  attached_ = false;
}

const ResamplerSlots& Bundle::resampler_for(std::size_t inject_idx) const {
  return cfg_.inject.share ? resamplers_[0] : resamplers_[inject_idx];
}

GazeInput Bundle::gaze_for_frame(const Scanpath& sp, double t, Index HW) const {
  GazeInput g;
  if (!cfg_.gaze_enabled) return g;  // kNone: the model never sees gaze
  Index H = cfg_.gaze.grid_h, W = cfg_.gaze.grid_w;
  if (H * W != HW) throw std::invalid_argument("bundle: gaze grid does not match features");
  switch (cfg_.gaze.scheme) {
    case GazeScheme::kCoordPe:
      g.kind = GazeInput::Kind::kCoordVec;
      g.coord = gaze_coord_pe(sp, t, cfg_.resampler.d_l);
      break;
    case GazeScheme::kHeatmapTau: {
      g.kind = GazeInput::Kind::kHeatmap;
      double tau = store_.at(tau_slot_).value(0, 0);
      Vec dh;
      g.heat = gaze_heatmap(sp, t, H, W, cfg_.gaze.sigma, HeatScheme::kTau, tau, &dh);
      g.dheat_dtau = dh;
      g.tau_grad = &tau_grad_;
      break;
    }
    case GazeScheme::kHeatmapDur:
      g.kind = GazeInput::Kind::kHeatmap;
      g.heat = gaze_heatmap(sp, t, H, W, cfg_.gaze.sigma, HeatScheme::kDur, 1.0);
      break;
  }
  return g;
}

ItemGraph Bundle::build_item(ag::Tape& tape, const Item& item,
                             const std::vector<Mat>& features, const Scanpath& scanpath,
                             double frame_dt, bool need_loss) const {
  if (features.empty()) throw std::invalid_argument("build_item: no frames");
  Index HW = features[0].rows();
  int T = static_cast<int>(features.size());

  // frozen embedding of the full prompt
  std::vector<int> tokens = item_tokens(item, T, static_cast<int>(HW));
  Mat vis(static_cast<Index>(T) * HW, cfg_.host.d_v);
  for (int f = 0; f < T; ++f) vis.middleRows(static_cast<Index>(f) * HW, HW) = features[static_cast<std::size_t>(f)];
  int h = tape.input(host_embed(store_, host_, cfg_.host, tokens, vis));

  // per-frame residuals for each injection site, computed once up front
  std::vector<int> residual_cat(cfg_.inject.layers.size(), -1);
  if (attached_) {
    for (std::size_t ii = 0; ii < cfg_.inject.layers.size(); ++ii) {
      const ResamplerSlots& rs = resampler_for(ii);
      int cat = -1;
      for (int f = 0; f < T; ++f) {
        double t = (static_cast<double>(f) + 0.5) * frame_dt;
        GazeInput g = gaze_for_frame(scanpath, t, HW);
        int r = resampler_forward(tape, rs, store_, cfg_.resampler,
                                  features[static_cast<std::size_t>(f)], g);
        cat = cat < 0 ? r : tape.concat_rows(cat, r);
      }
      residual_cat[ii] = cat;
    }
  }

  const LoraSlots* lora = cfg_.adapter.kind == AdapterKind::kLora ? &lora_ : nullptr;
  double scaling = cfg_.adapter.lora.scaling();

  auto post_layer = [&](ag::Tape& tp, Index layer, int hidden) -> int {
    if (!attached_) return hidden;
    for (std::size_t ii = 0; ii < cfg_.inject.layers.size(); ++ii) {
      if (cfg_.inject.layers[ii] != layer) continue;
      int alpha = tp.param(alphas_[ii], &store_.at(alphas_[ii]).value);
      int scaled = tp.mul_scalar(residual_cat[ii], alpha);
      hidden = tp.add_rows_at(hidden, scaled, 0);
    }
    return hidden;
  };

  int hf = host_forward(tape, host_, store_, cfg_.host, h, lora, scaling,
                        attached_ ? std::function<int(ag::Tape&, Index, int)>(post_layer)
                                  : nullptr);
  ItemGraph out;
  out.logits = host_logits_last(tape, host_, store_, hf);
  out.answer = tape.slice_cols(out.logits, vocab::kAnswerBase, vocab::kAnswerCount);
  if (need_loss) {
    int lse = tape.logsumexp(out.answer);
    int corr = tape.pick(out.answer, 0, item.correct_pos);
    out.loss = tape.sub(lse, corr);
  }
  return out;
}

double Bundle::take_tau_grad() const {
  double g = tau_grad_;
  tau_grad_ = 0.0;
  return g;
}

std::vector<int> Bundle::trainable_slots(int stage) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(store_.size()); ++i) {
    const Tensor& t = store_.at(i);
    if (!t.trainable) continue;
    bool is_lora = t.name.rfind("lora.", 0) == 0;
    if (is_lora && stage < 2) continue;
    out.push_back(i);
  }
  return out;
}

}  // namespace gazesteer
