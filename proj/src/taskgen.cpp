#include "gazesteer/taskgen.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gazesteer/host.hpp"
#include "gazesteer/rng.hpp"

namespace gazesteer {

const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::kFixatedNow: return "fixated_now";
    case TaskKind::kFixatedFirst: return "fixated_first";
    case TaskKind::kNeverFixated: return "never_fixated";
  }
  return "?";
}

TaskKind task_from_name(const std::string& name) {
  if (name == "fixated_now") return TaskKind::kFixatedNow;
  if (name == "fixated_first") return TaskKind::kFixatedFirst;
  if (name == "never_fixated") return TaskKind::kNeverFixated;
  throw std::invalid_argument("unknown task kind: " + name);
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

static Split split_from_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split: " + s);
}

std::vector<const Item*> Dataset::items_in(Split s) const {
  std::vector<const Item*> out;
  for (const auto& it : items) {
    auto f = split.find(it.video_id);
    if (f != split.end() && f->second == s) out.push_back(&it);
  }
  return out;
}

const VideoEntry& Dataset::video(const std::string& id) const {
  for (const auto& v : videos)
    if (v.id == id) return v;
  throw std::runtime_error("unknown video id: " + id);
}

std::array<int, 3> split_counts(int n_videos) {
  double props[3] = {0.70, 0.15, 0.15};
  std::array<int, 3> counts{};
  double fracs[3];
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    double exact = props[i] * n_videos;
    counts[static_cast<std::size_t>(i)] = static_cast<int>(exact);
    fracs[i] = exact - counts[static_cast<std::size_t>(i)];
    assigned += counts[static_cast<std::size_t>(i)];
  }
  int left = n_videos - assigned;
  // largest remainder; ties resolved in train, val, test order
  while (left > 0) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (fracs[i] > fracs[best]) best = i;
    counts[static_cast<std::size_t>(best)] += 1;
    fracs[best] = -1;
    --left;
  }
  return counts;
}

std::vector<int> item_tokens(const Item& item, int T, int HW) {
  std::vector<int> toks(static_cast<std::size_t>(T) * static_cast<std::size_t>(HW), vocab::kVisual);
  toks.push_back(vocab::kTaskBase + static_cast<int>(item.task));
  toks.push_back(vocab::kTimeBase + item.time_bucket);
  for (int o : item.options) toks.push_back(vocab::kObjectBase + o);
  toks.push_back(vocab::kCue);
  return toks;
}

void fit_host_cfg(HostCfg& host, const GenCfg& data) {
  host.d_v = data.features.d_v;
  host.feature_seed = data.features.feature_seed;
  host.n_frames = data.scene.T;
  host.rows_per_frame = static_cast<Index>(data.scene.H) * data.scene.W;
  host.n_object_ids = data.scene.n_objects;
  host.max_seq = static_cast<Index>(data.scene.T) * data.scene.H * data.scene.W + kTextTokens + 1;
}

namespace {

std::vector<int> sample_distinct(Rng& rng, const std::vector<int>& pool, int k) {
  if (static_cast<int>(pool.size()) < k)
    throw std::invalid_argument("sample_distinct: pool too small");
  std::vector<int> p = pool;
  for (int i = 0; i < k; ++i) {
    auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(p.size() - static_cast<std::size_t>(i))));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  p.resize(static_cast<std::size_t>(k));
  return p;
}

std::string video_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "v%03d", i);
  return buf;
}

}  // namespace

Dataset gen_dataset(const GenCfg& cfg) {
  if (cfg.n_videos <= 0) throw std::invalid_argument("gen_dataset: need videos");
  if (cfg.task_mix.empty()) throw std::invalid_argument("gen_dataset: empty task mix");
  if (cfg.n_fixated < 1 || cfg.n_fixated > cfg.scene.n_objects)
    throw std::invalid_argument("gen_dataset: fixated objects out of range");
  if (cfg.n_fixated > cfg.scene.T)
    throw std::invalid_argument("gen_dataset: more fixations than frames (one per frame)");
  if (cfg.scene.T > 8) throw std::invalid_argument("gen_dataset: time buckets cover at most 8 frames");
  for (TaskKind t : cfg.task_mix) {
    switch (t) {
      case TaskKind::kFixatedNow:
        if (cfg.scene.n_objects < 4)
          throw std::invalid_argument("gen_dataset: fixated_now needs 4 co-visible objects");
        break;
      case TaskKind::kFixatedFirst:
        if (cfg.n_fixated < 4)
          throw std::invalid_argument("gen_dataset: fixated_first needs 4 fixated objects");
        break;
      case TaskKind::kNeverFixated:
        if (cfg.n_fixated < 3 || cfg.scene.n_objects < cfg.n_fixated + 1)
          throw std::invalid_argument(
              "gen_dataset: never_fixated needs 3 fixated and a never-fixated object");
        break;
    }
  }

  Dataset ds;
  ds.cfg = cfg;
  int item_id = 0;
  for (int vi = 0; vi < cfg.n_videos; ++vi) {
    VideoEntry ve;
    ve.id = video_name(vi);
    ve.scene_seed = derive_seed(cfg.seed, "scene" + std::to_string(vi));
    SceneCfg sc = cfg.scene;
    sc.seed = ve.scene_seed;
    Scene scene = gen_scene(sc);

    Rng rng(derive_seed(cfg.seed, "video" + std::to_string(vi)));
    std::vector<int> all_ids;
    for (const auto& o : scene.objects) all_ids.push_back(o.id);
    std::vector<int> fixated = sample_distinct(rng, all_ids, cfg.n_fixated);

    ve.scanpath.video_id = ve.id;
    for (int j = 0; j < cfg.n_fixated; ++j) {
      const auto& obj = scene.objects[static_cast<std::size_t>(fixated[static_cast<std::size_t>(j)])];
      Fixation f;
      double ft = frame_time(scene, j);
      f.t = ft + rng.uniform(-cfg.fix_time_jitter, cfg.fix_time_jitter);
      f.dur = scene.frame_dt * rng.uniform(0.8, 0.99);
      f.x = std::clamp(obj.x[static_cast<std::size_t>(j)] + rng.uniform(-cfg.fix_pos_jitter, cfg.fix_pos_jitter), 0.0, 1.0);
      f.y = std::clamp(obj.y[static_cast<std::size_t>(j)] + rng.uniform(-cfg.fix_pos_jitter, cfg.fix_pos_jitter), 0.0, 1.0);
      ve.scanpath.fixations.push_back(f);
    }

    std::vector<int> never;
    for (int id : all_ids)
      if (std::find(fixated.begin(), fixated.end(), id) == fixated.end()) never.push_back(id);

    for (int k = 0; k < cfg.items_per_video; ++k) {
      TaskKind task = cfg.task_mix[static_cast<std::size_t>(k) % cfg.task_mix.size()];
      int correct;
      std::vector<int> distractors;
      switch (task) {
        case TaskKind::kFixatedNow: {
          correct = fixated.back();
          std::vector<int> pool;
          for (int id : all_ids)
            if (id != correct) pool.push_back(id);
          distractors = sample_distinct(rng, pool, 3);
          break;
        }
        case TaskKind::kFixatedFirst: {
          correct = fixated.front();
          std::vector<int> pool(fixated.begin() + 1, fixated.end());
          distractors = sample_distinct(rng, pool, 3);
          break;
        }
        case TaskKind::kNeverFixated: {
          correct = never[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(never.size())))];
          distractors = sample_distinct(rng, fixated, 3);
          break;
        }
        default:
          throw std::logic_error("unreachable task kind");
      }
      Item it;
      it.id = item_id++;
      it.video_id = ve.id;
      it.task = task;
      it.time_bucket = scene.T - 1;
      it.correct_pos = static_cast<int>(rng.below(4));
      int di = 0;
      for (int slot = 0; slot < 4; ++slot) {
        if (slot == it.correct_pos)
          it.options[static_cast<std::size_t>(slot)] = correct;
        else
          it.options[static_cast<std::size_t>(slot)] = distractors[static_cast<std::size_t>(di++)];
      }
      ds.items.push_back(it);
    }
    ds.videos.push_back(std::move(ve));
  }

  // split assignment: shuffled video order sliced by the 70/15/15 counts
  auto counts = split_counts(cfg.n_videos);
  std::vector<int> order(static_cast<std::size_t>(cfg.n_videos));
  for (int i = 0; i < cfg.n_videos; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng srng(derive_seed(cfg.seed, "split"));
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    auto j = i + static_cast<std::size_t>(srng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  for (int i = 0; i < cfg.n_videos; ++i) {
    Split s = i < counts[0] ? Split::kTrain
              : i < counts[0] + counts[1] ? Split::kVal
                                          : Split::kTest;
    ds.split[video_name(order[static_cast<std::size_t>(i)])] = s;
  }
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream m(dir + "/manifest.txt");
    if (!m) throw std::runtime_error("cannot write manifest: " + dir);
    m.precision(17);
    const GenCfg& c = ds.cfg;
    m << "seed=" << c.seed << "\n";
    m << "n_videos=" << c.n_videos << "\n";
    m << "items_per_video=" << c.items_per_video << "\n";
    m << "task_mix=";
    for (std::size_t i = 0; i < c.task_mix.size(); ++i)
      m << (i ? "," : "") << task_name(c.task_mix[i]);
    m << "\n";
    m << "n_objects=" << c.scene.n_objects << "\n";
    m << "T=" << c.scene.T << "\n";
    m << "H=" << c.scene.H << "\n";
    m << "W=" << c.scene.W << "\n";
    m << "step=" << c.scene.step << "\n";
    m << "frame_dt=" << c.scene.frame_dt << "\n";
    m << "d_v=" << c.features.d_v << "\n";
    m << "feature_seed=" << c.features.feature_seed << "\n";
    m << "feature_mode=" << (c.features.mode == FeatureMode::kTemporal ? "temporal" : "static") << "\n";
    m << "noise_scale=" << c.features.noise_scale << "\n";
    m << "n_fixated=" << c.n_fixated << "\n";
    m << "fix_time_jitter=" << c.fix_time_jitter << "\n";
    m << "fix_pos_jitter=" << c.fix_pos_jitter << "\n";
    for (const auto& [vid, sp] : ds.split) m << "split." << vid << "=" << split_name(sp) << "\n";
    if (!m) throw std::runtime_error("manifest write failed");
  }
  {
    std::map<std::string, Scanpath> sps;
    for (const auto& v : ds.videos) sps[v.id] = v.scanpath;
    save_scanpaths(dir + "/scanpaths.txt", sps);
  }
  {
    std::ofstream f(dir + "/items.txt");
    if (!f) throw std::runtime_error("cannot write items: " + dir);
    f << "# id video task time_bucket opt0 opt1 opt2 opt3 correct_pos\n";
    for (const auto& it : ds.items) {
      f << it.id << ' ' << it.video_id << ' ' << task_name(it.task) << ' ' << it.time_bucket;
      for (int o : it.options) f << ' ' << o;
      f << ' ' << it.correct_pos << "\n";
    }
    if (!f) throw std::runtime_error("items write failed");
  }
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream m(dir + "/manifest.txt");
  if (!m) throw std::runtime_error("cannot open manifest: " + dir);
  GenCfg cfg;
  std::map<std::string, Split> split;
  std::string line;
  while (std::getline(m, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("manifest: bad line: " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "n_videos") cfg.n_videos = std::stoi(val);
    else if (key == "items_per_video") cfg.items_per_video = std::stoi(val);
    else if (key == "task_mix") {
      cfg.task_mix.clear();
      std::stringstream ss(val);
      std::string t;
      while (std::getline(ss, t, ',')) cfg.task_mix.push_back(task_from_name(t));
    } else if (key == "n_objects") cfg.scene.n_objects = std::stoi(val);
    else if (key == "T") cfg.scene.T = std::stoi(val);
    else if (key == "H") cfg.scene.H = std::stoi(val);
    else if (key == "W") cfg.scene.W = std::stoi(val);
    else if (key == "step") cfg.scene.step = std::stod(val);
    else if (key == "frame_dt") cfg.scene.frame_dt = std::stod(val);
    else if (key == "d_v") cfg.features.d_v = std::stoi(val);
    else if (key == "feature_seed") cfg.features.feature_seed = std::stoull(val);
    else if (key == "feature_mode") cfg.features.mode = val == "temporal" ? FeatureMode::kTemporal : FeatureMode::kStatic;
    else if (key == "noise_scale") cfg.features.noise_scale = std::stod(val);
    else if (key == "n_fixated") cfg.n_fixated = std::stoi(val);
    else if (key == "fix_time_jitter") cfg.fix_time_jitter = std::stod(val);
    else if (key == "fix_pos_jitter") cfg.fix_pos_jitter = std::stod(val);
    else if (key.rfind("split.", 0) == 0) split[key.substr(6)] = split_from_name(val);
    // unknown keys are tolerated so the format can grow
  }

  Dataset ds;
  ds.cfg = cfg;
  ds.split = std::move(split);
  auto sps = load_scanpaths(dir + "/scanpaths.txt");
  for (int vi = 0; vi < cfg.n_videos; ++vi) {
    VideoEntry ve;
    ve.id = video_name(vi);
    ve.scene_seed = derive_seed(cfg.seed, "scene" + std::to_string(vi));
    auto it = sps.find(ve.id);
    if (it == sps.end()) throw std::runtime_error("scanpaths.txt missing video " + ve.id);
    ve.scanpath = it->second;
    ds.videos.push_back(std::move(ve));
  }

  std::ifstream f(dir + "/items.txt");
  if (!f) throw std::runtime_error("cannot open items: " + dir);
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    Item it;
    std::string task;
    ss >> it.id >> it.video_id >> task >> it.time_bucket;
    it.task = task_from_name(task);
    for (auto& o : it.options) ss >> o;
    ss >> it.correct_pos;
    if (!ss) throw std::runtime_error("items.txt: bad line: " + line);
    ds.items.push_back(it);
  }
  return ds;
}

std::uint64_t manifest_hash(const std::string& dir) {
  std::ifstream f(dir + "/manifest.txt", std::ios::binary);
  if (!f) throw std::runtime_error("cannot open manifest: " + dir);
  std::uint64_t h = 1469598103934665603ULL;
  char c;
  while (f.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace gazesteer
