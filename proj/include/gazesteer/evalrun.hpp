#pragma once

#include <map>
#include <string>
#include <vector>

#include "gazesteer/bundle.hpp"
#include "gazesteer/taskgen.hpp"

namespace gazesteer {

// Dataset plus lazily rendered per-video feature cache. Rendering is
// deterministic, so cached frames are identical to fresh ones.
class Runtime {
 public:
  explicit Runtime(Dataset ds) : ds_(std::move(ds)) {}

  const Dataset& dataset() const { return ds_; }
  double frame_dt() const { return ds_.cfg.scene.frame_dt; }
  const std::vector<Mat>& features(const std::string& video_id) const;
  const Scanpath& scanpath(const std::string& video_id) const;

 private:
  Dataset ds_;
  mutable std::map<std::string, std::vector<Mat>> cache_;
};

// First maximum wins, so ties resolve to the lowest index.
Index argmax_row(const Mat& row);

struct EvalResult {
  std::map<std::string, double> task_acc;
  double mean_acc = 0;   // unweighted mean over task kinds present
  double micro_acc = 0;  // plain fraction correct
  double mean_loss = 0;
  Index n = 0;
};

// Batch size 1 throughout: one forward per item, answer = argmax over the
// four answer-token logits at the last position.
EvalResult evaluate(const Bundle& bundle, const Runtime& rt,
                    const std::vector<const Item*>& items);

// ---------------------------------------------------------------------------
// Ablation harness: a full factorial over gaze scheme x latent count x
// resampler sharing x adapter, on a small preset, plus extra replicates of
// the scheme axis for the never-fixated comparison.

struct AblationCfg {
  GenCfg data;                 // small preset; callers override as needed
  std::vector<GazeScheme> schemes = {GazeScheme::kCoordPe, GazeScheme::kHeatmapTau,
                                     GazeScheme::kHeatmapDur};
  std::vector<Index> latent_counts = {32, 8};
  std::vector<bool> share_opts = {false, true};
  std::vector<AdapterKind> adapters = {AdapterKind::kNone, AdapterKind::kLora};
  int epochs_per_cell = 5;     // lora cells split this between the two stages
  int replicates = 3;          // scheme-axis reruns at shifted seeds
  std::uint64_t seed = 5;
  bool verbose = false;
};

struct AblationCell {
  GazeScheme scheme{};
  Index n_latents = 0;
  bool share = false;
  AdapterKind adapter{};
  int replicate = 0;
  bool failed = false;
  std::string error;
  EvalResult val;
};

struct AxisSummary {
  std::string axis;
  std::string best_option;
  double best_mean = 0;
  double max_task_spread = 0;  // max over tasks of (best - worst option accuracy)
  bool single_option = false;  // spread reported as n/a
};

struct AblationReport {
  std::vector<AblationCell> cells;       // replicate 0: full grid; r>0: scheme axis only
  std::vector<AxisSummary> axes;
  // per replicate: coord_pe never-fixated accuracy >= both heatmap schemes'
  std::vector<bool> coord_wins_nfi;
  int n_failed = 0;
};

AblationReport run_ablation(const AblationCfg& cfg);
std::string render_report(const AblationReport& rep);

}  // namespace gazesteer
