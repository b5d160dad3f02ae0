#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "gazesteer/autodiff.hpp"
#include "gazesteer/types.hpp"

namespace gazesteer {

// Prompt vocabulary layout. Answer ids are contiguous so the 4-way answer
// block can be sliced straight out of the logit row.
namespace vocab {
constexpr int kVisual = 0;      // visual placeholder
constexpr int kTaskBase = 1;    // 3 task-kind tokens
constexpr int kTimeBase = 4;    // 8 time-bucket tokens
constexpr int kAnswerBase = 12; // answer tokens A..D
constexpr int kAnswerCount = 4;
constexpr int kCue = 16;        // answer cue, last prompt position
constexpr int kObjectBase = 18; // object identity tokens
constexpr int kSize = 64;
// Prompt layout after the visual run: task, time, four options, cue.
constexpr int kTextRows = 7;
}  // namespace vocab

struct HostCfg {
  Index n_layers = 8;
  Index d_model = 64;
  Index n_heads = 4;
  Index vocab_size = vocab::kSize;
  Index max_seq = 384;
  Index ffn_mult = 4;
  Index d_v = 32;               // width of the frozen visual projection input
  std::uint64_t init_seed = 11;
  // Prompt-layout geometry. When all three are set, register_host builds the
  // competence a pretrained decoder would bring to these prompts into the
  // frozen weights (see register_host); left at zero, the host is a plain
  // random-init stack the layout-specific tests and tools use as-is.
  Index n_frames = 0;        // frames in the visual run
  Index rows_per_frame = 0;  // grid cells per frame
  Index n_object_ids = 0;    // object ids with catalogued appearance
  std::uint64_t feature_seed = 7;  // appearance palette those ids render with
};

struct HostSlots {
  int tok_emb = -1, pos_emb = -1;
  struct Layer {
    int w_q = -1, w_k = -1, w_v = -1, w_o = -1;
    int ln1_g = -1, ln1_b = -1, ln2_g = -1, ln2_b = -1;
    int ffn_w1 = -1, ffn_b1 = -1, ffn_w2 = -1, ffn_b2 = -1;
  };
  std::vector<Layer> layers;
  int lnf_g = -1, lnf_b = -1;
  int head = -1;
  int visproj = -1;  // frozen random d_v -> d_model map for visual rows
};

struct LoraCfg {
  Index rank = 8;
  double alpha = 16.0;
  double scaling() const { return alpha / static_cast<double>(rank); }
};

struct LoraSlots {
  struct Layer {
    int q_a = -1, q_b = -1, v_a = -1, v_b = -1;
  };
  std::vector<Layer> layers;
};

// All host tensors are frozen (trainable = false); the base model never moves.
//
// The host stands in for a pretrained multimodal decoder, and a pretrained
// decoder is not a random one: give it four option tokens and an answer cue
// and it already knows how to compare evidence against the options and name
// the matching slot. With the layout fields set, that competence is built
// into the frozen weights: option tokens and the visible appearance of the
// objects they name share an id dictionary, a mid-stack head lets each option
// row collect from its object's cells the mark an encoder may have written
// there (plus the frame stamp of the marked cell), and task-gated readout
// heads at the cue pick the option whose marks fit the asked relation and
// raise that slot's answer logit. Without marks every option reads the same,
// so the untrained model still answers uniformly; everything stays frozen and
// deterministic in init_seed.
HostSlots register_host(TensorStore& store, const HostCfg& cfg);

// Low-rank adapters on every layer's query and value projections. B starts at
// zero, so the adapted model initially matches the base exactly.
LoraSlots register_lora(TensorStore& store, const HostCfg& host, const LoraCfg& cfg,
                        std::uint64_t seed);

// W + scaling * A * B, for merge-equivalence checks and exports.
Mat lora_merged(const Mat& w, const Mat& a, const Mat& b, double scaling);

// Token sequence -> initial hidden states (plain matrix; everything feeding it
// is frozen). Visual placeholder rows take projected features instead of the
// placeholder embedding; every row gets its position embedding.
// vis_rows is the concatenation of per-frame feature grids, (T*HW) x d_v, and
// must line up with the leading run of visual placeholders in tokens.
Mat host_embed(const TensorStore& store, const HostSlots& slots, const HostCfg& cfg,
               const std::vector<int>& tokens, const Mat& vis_rows);

// Leading run of visual placeholder tokens as a half-open [begin, end).
// A prompt with no visual tokens, or with placeholders appearing after text,
// is rejected.
std::pair<Index, Index> locate_visual_span(const std::vector<int>& tokens);

// Decoder stack over a hidden-state node. post_layer (optional) rewrites the
// hidden node after each layer; injection hooks live there, the layer code
// itself knows nothing about them. Returns the final-layernormed hidden node.
int host_forward(ag::Tape& tape, const HostSlots& slots, const TensorStore& store,
                 const HostCfg& cfg, int hidden,
                 const LoraSlots* lora = nullptr, double lora_scaling = 0.0,
                 const std::function<int(ag::Tape&, Index, int)>& post_layer = nullptr);

// Logit row for the last position only.
int host_logits_last(ag::Tape& tape, const HostSlots& slots, const TensorStore& store,
                     int hidden_final);

}  // namespace gazesteer
