#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gazesteer/host.hpp"
#include "gazesteer/scanpath.hpp"
#include "gazesteer/synthvideo.hpp"

namespace gazesteer {

// Task kinds: which object is fixated now / which was fixated first / which
// was never fixated. Fixed ids so prompts and files agree forever.
enum class TaskKind : int { kFixatedNow = 0, kFixatedFirst = 1, kNeverFixated = 2 };

const char* task_name(TaskKind k);
TaskKind task_from_name(const std::string& name);

struct Item {
  int id = 0;
  std::string video_id;
  TaskKind task = TaskKind::kFixatedNow;
  int time_bucket = 0;
  std::array<int, 4> options{};  // object ids in presented order
  int correct_pos = 0;           // 0..3
};

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);

struct GenCfg {
  std::uint64_t seed = 1;
  int n_videos = 20;
  int items_per_video = 10;
  std::vector<TaskKind> task_mix = {TaskKind::kFixatedNow};
  SceneCfg scene;       // per-video seed is derived from seed and video index
  FeatureCfg features;
  int n_fixated = 4;    // distinct objects receiving fixations (one per frame)
  double fix_time_jitter = 0.1;
  double fix_pos_jitter = 0.01;
};

struct VideoEntry {
  std::string id;
  std::uint64_t scene_seed = 0;
  Scanpath scanpath;
};

struct Dataset {
  GenCfg cfg;
  std::vector<VideoEntry> videos;
  std::vector<Item> items;
  std::map<std::string, Split> split;

  std::vector<const Item*> items_in(Split s) const;
  const VideoEntry& video(const std::string& id) const;
};

// Deterministic generation: scenes, one fixation per frame on distinct
// objects, items whose correct answer is a pure function of the scanpath.
// Answer position is uniform; prompts never encode it.
Dataset gen_dataset(const GenCfg& cfg);

// 70/15/15 by video, largest-remainder rounding (ties favor train, then val).
std::array<int, 3> split_counts(int n_videos);

// Prompt token sequence: visual placeholders for every frame cell, then task
// token, time bucket, the four option tokens, and the answer cue.
std::vector<int> item_tokens(const Item& item, int T, int HW);
constexpr int kTextTokens = vocab::kTextRows;

// Points a host config at this data: prompt capacity, visual-row geometry,
// and the appearance palette its embeddings are organized around.
void fit_host_cfg(HostCfg& host, const GenCfg& data);

// On-disk layout under a directory: manifest.txt, scanpaths.txt, items.txt.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

// FNV-1a over the manifest bytes; recorded by eval runs so results can be
// matched to the exact dataset that produced them.
std::uint64_t manifest_hash(const std::string& dir);

}  // namespace gazesteer
