#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gazesteer/host.hpp"
#include "gazesteer/resampler.hpp"
#include "gazesteer/scanpath.hpp"
#include "gazesteer/taskgen.hpp"

namespace gazesteer {

struct GazeCfg {
  GazeScheme scheme = GazeScheme::kCoordPe;
  double sigma = 0.08;       // heatmap bump width, normalized units
  double tau_init = 1.0;     // recency constant, seconds (learnable in kHeatmapTau)
  Index grid_h = 8, grid_w = 8;  // video grid the heatmap is rasterized on
};

struct InjectCfg {
  std::vector<Index> layers = {1, 3, 5, 7};  // residual added after these layers
  bool share = false;                        // one resampler for all layers
};

enum class AdapterKind { kNone, kLora };

struct AdapterCfg {
  AdapterKind kind = AdapterKind::kNone;
  LoraCfg lora;
};

struct BundleCfg {
  HostCfg host;
  ResamplerCfg resampler;
  GazeCfg gaze;
  InjectCfg inject;
  AdapterCfg adapter;
  std::uint64_t init_seed = 11;
  bool gaze_enabled = true;  // false trains/runs the same model with gaze zeroed
};

struct ItemGraph {
  int loss = -1;    // 1x1, only when requested
  int answer = -1;  // 1x4 answer-token logits at the last position
  int logits = -1;  // 1xvocab
};

// One model: frozen host, per-layer (or shared) resamplers feeding residual
// injections, optional LoRA. Owns every tensor in a flat ordered store, which
// is what checkpoints serialize.
class Bundle {
 public:
  explicit Bundle(const BundleCfg& cfg);

  const BundleCfg& cfg() const { return cfg_; }
  TensorStore& store() { return store_; }
  const TensorStore& store() const { return store_; }

  // Injection registry. Detached, the decoder runs the base computation with
  // no gaze arithmetic at all; re-attaching restores it exactly. Attaching an
  // attached bundle (or detaching a detached one) is a caller bug.
  void attach();
  void detach();
  bool attached() const { return attached_; }

  // Builds the whole forward graph for one item. features: per-frame HW x d_v;
  // frame_dt gives the capture instants the scanpath times refer to.
  ItemGraph build_item(ag::Tape& tape, const Item& item,
                       const std::vector<Mat>& features, const Scanpath& scanpath,
                       double frame_dt, bool need_loss) const;

  // d(loss)/d(tau) accumulated by heatmap back-passes since the last call.
  double take_tau_grad() const;

  // Slots trained in a stage: 1 = resamplers + injection gains (+ tau),
  // 2 = those plus LoRA.
  std::vector<int> trainable_slots(int stage) const;

  int tau_slot() const { return tau_slot_; }
  const std::vector<ResamplerSlots>& resampler_slots() const { return resamplers_; }
  const HostSlots& host_slots() const { return host_; }
  const std::vector<int>& alpha_slots() const { return alphas_; }

 private:
  const ResamplerSlots& resampler_for(std::size_t inject_idx) const;
  GazeInput gaze_for_frame(const Scanpath& sp, double t, Index HW) const;

  BundleCfg cfg_;
  TensorStore store_;
  HostSlots host_;
  std::vector<ResamplerSlots> resamplers_;
  std::vector<int> alphas_;
  LoraSlots lora_;
  int tau_slot_ = -1;
  bool attached_ = true;
  mutable double tau_grad_ = 0.0;
};

}  // namespace gazesteer
