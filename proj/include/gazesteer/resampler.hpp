#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gazesteer/autodiff.hpp"
#include "gazesteer/types.hpp"

namespace gazesteer {

enum class GazeScheme { kCoordPe, kHeatmapTau, kHeatmapDur };

struct ResamplerCfg {
  Index d_v = 32;    // input feature width
  Index d_l = 64;    // latent width, multiple of 4
  Index d_llm = 64;  // output width (host hidden size)
  Index n_latents = 32;
  Index n_blocks = 2;
  GazeScheme scheme = GazeScheme::kCoordPe;
};

// Slot indices of one resampler's tensors inside a TensorStore.
struct ResamplerSlots {
  int w_in = -1;
  int latents = -1;
  struct Block {
    int w_q = -1, w_k = -1, w_v = -1, w_g = -1;
    int ln_g = -1, ln_b = -1;
    int ffn_w1 = -1, ffn_b1 = -1, ffn_w2 = -1, ffn_b2 = -1;
  };
  std::vector<Block> blocks;
  int rev_w_q = -1, rev_w_k = -1, rev_w_v = -1;
  int w_out = -1;
  int heat_lift = -1;  // 1 x d_l, heatmap schemes only
};

// Per-frame gaze conditioning input, already encoded by the scanpath module.
struct GazeInput {
  enum class Kind { kNone, kCoordVec, kHeatmap } kind = Kind::kNone;
  Vec coord;            // d_l (kCoordVec)
  Vec heat;             // HW (kHeatmap)
  Vec dheat_dtau;       // HW; empty when tau is not learnable
  double* tau_grad = nullptr;  // accumulates d(loss)/d(tau) when non-null
};

// Register tensors under "{prefix}." and initialize them from rng_seed.
// w_out starts at zero so the module's output is exactly zero before training.
ResamplerSlots register_resampler(TensorStore& store, const ResamplerCfg& cfg,
                                  const std::string& prefix, std::uint64_t rng_seed);

std::int64_t resampler_param_count(const ResamplerCfg& cfg);

// Optional introspection hooks for tests.
struct ResamplerProbe {
  std::vector<int> block_scores;  // pre-softmax attention scores per block
  int latents_out = -1;           // final latent node
};

// Build the forward graph on the tape: features (HW x d_v) -> residual
// (HW x d_llm). Latents cross-attend to [features; latents] with the gaze
// bias added to spatial keys only, then spatial tokens read the latents back
// out. No intermediate couples spatial positions with each other.
int resampler_forward(ag::Tape& tape, const ResamplerSlots& slots,
                      const TensorStore& store, const ResamplerCfg& cfg,
                      const Mat& features, const GazeInput& gaze,
                      ResamplerProbe* probe = nullptr);

}  // namespace gazesteer
