#include "gazesteer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace gazesteer {

namespace {

constexpr char kMagic[8] = {'G', 'Z', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_str(std::ofstream& f, const std::string& s) {
  put<std::uint64_t>(f, s.size());
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::ifstream& f) {
  auto n = get<std::uint64_t>(f);
  if (n > (1ULL << 30)) throw std::runtime_error("checkpoint: oversized string");
  std::string s(n, '\0');
  f.read(s.data(), static_cast<std::streamsize>(n));
  if (!f) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

CheckpointMeta read_header(std::ifstream& f, const std::string& path) {
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  CheckpointMeta meta;
  meta.version = get<std::uint32_t>(f);
  if (meta.version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(meta.version));
  meta.stage = get<std::int32_t>(f);
  meta.seed = get<std::uint64_t>(f);
  meta.config = get_str(f);
  meta.metrics = get_str(f);
  return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, const TensorStore& store,
                     const CheckpointMeta& meta) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  put<std::uint32_t>(f, kVersion);
  put<std::int32_t>(f, meta.stage);
  put<std::uint64_t>(f, meta.seed);
  put_str(f, meta.config);
  put_str(f, meta.metrics);
  put<std::uint64_t>(f, static_cast<std::uint64_t>(store.size()));
  for (const Tensor& t : store.all()) {
    put_str(f, t.name);
    put<std::uint64_t>(f, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(f, static_cast<std::uint64_t>(t.value.cols()));
    f.write(reinterpret_cast<const char*>(t.value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.value.size())));
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  return read_header(f, path);
}

CheckpointMeta load_checkpoint(const std::string& path, TensorStore& store,
                               bool allow_missing) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  CheckpointMeta meta = read_header(f, path);
  auto n = get<std::uint64_t>(f);
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = get_str(f);
    auto rows = static_cast<Index>(get<std::uint64_t>(f));
    auto cols = static_cast<Index>(get<std::uint64_t>(f));
    int slot = store.find(name);
    if (slot < 0) throw std::runtime_error("checkpoint tensor unknown to this model: " + name);
    Tensor& t = store.at(slot);
    if (t.value.rows() != rows || t.value.cols() != cols) {
      std::ostringstream os;
      os << "checkpoint shape mismatch for " << name << ": file " << rows << "x" << cols
         << ", model " << t.value.rows() << "x" << t.value.cols();
      throw std::runtime_error(os.str());
    }
    f.read(reinterpret_cast<char*>(t.value.data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.value.size())));
    if (!f) throw std::runtime_error("checkpoint: truncated tensor payload");
    seen.insert(name);
  }
  if (!allow_missing) {
    for (const Tensor& t : store.all())
      if (!seen.count(t.name))
        throw std::runtime_error("checkpoint missing tensor: " + t.name);
  }
  return meta;
}

const char* scheme_label(GazeScheme s) {
  switch (s) {
    case GazeScheme::kCoordPe: return "coord_pe";
    case GazeScheme::kHeatmapTau: return "heatmap_tau";
    case GazeScheme::kHeatmapDur: return "heatmap_dur";
  }
  return "?";
}

GazeScheme scheme_from_label(const std::string& s) {
  if (s == "coord_pe") return GazeScheme::kCoordPe;
  if (s == "heatmap_tau") return GazeScheme::kHeatmapTau;
  if (s == "heatmap_dur") return GazeScheme::kHeatmapDur;
  throw std::invalid_argument("unknown gaze scheme: " + s);
}

std::string bundle_cfg_to_kv(const BundleCfg& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "host.n_layers=" << cfg.host.n_layers << "\n";
  os << "host.d_model=" << cfg.host.d_model << "\n";
  os << "host.n_heads=" << cfg.host.n_heads << "\n";
  os << "host.vocab=" << cfg.host.vocab_size << "\n";
  os << "host.max_seq=" << cfg.host.max_seq << "\n";
  os << "host.ffn_mult=" << cfg.host.ffn_mult << "\n";
  os << "host.d_v=" << cfg.host.d_v << "\n";
  os << "host.init_seed=" << cfg.host.init_seed << "\n";
  os << "host.n_frames=" << cfg.host.n_frames << "\n";
  os << "host.rows_per_frame=" << cfg.host.rows_per_frame << "\n";
  os << "host.n_object_ids=" << cfg.host.n_object_ids << "\n";
  os << "host.feature_seed=" << cfg.host.feature_seed << "\n";
  os << "resampler.d_v=" << cfg.resampler.d_v << "\n";
  os << "resampler.d_l=" << cfg.resampler.d_l << "\n";
  os << "resampler.d_llm=" << cfg.resampler.d_llm << "\n";
  os << "resampler.n_latents=" << cfg.resampler.n_latents << "\n";
  os << "resampler.n_blocks=" << cfg.resampler.n_blocks << "\n";
  os << "gaze.scheme=" << scheme_label(cfg.gaze.scheme) << "\n";
  os << "gaze.sigma=" << cfg.gaze.sigma << "\n";
  os << "gaze.tau_init=" << cfg.gaze.tau_init << "\n";
  os << "gaze.grid_h=" << cfg.gaze.grid_h << "\n";
  os << "gaze.grid_w=" << cfg.gaze.grid_w << "\n";
  os << "inject.layers=";
  for (std::size_t i = 0; i < cfg.inject.layers.size(); ++i)
    os << (i ? "," : "") << cfg.inject.layers[i];
  os << "\n";
  os << "inject.share=" << (cfg.inject.share ? 1 : 0) << "\n";
  os << "adapter=" << (cfg.adapter.kind == AdapterKind::kLora ? "lora" : "none") << "\n";
  os << "lora.rank=" << cfg.adapter.lora.rank << "\n";
  os << "lora.alpha=" << cfg.adapter.lora.alpha << "\n";
  os << "init_seed=" << cfg.init_seed << "\n";
  os << "gaze_enabled=" << (cfg.gaze_enabled ? 1 : 0) << "\n";
  return os.str();
}

BundleCfg bundle_cfg_from_kv(const std::string& kv) {
  BundleCfg cfg;
  std::istringstream is(kv);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bundle config: bad line: " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "host.n_layers") cfg.host.n_layers = std::stol(val);
    else if (key == "host.d_model") cfg.host.d_model = std::stol(val);
    else if (key == "host.n_heads") cfg.host.n_heads = std::stol(val);
    else if (key == "host.vocab") cfg.host.vocab_size = std::stol(val);
    else if (key == "host.max_seq") cfg.host.max_seq = std::stol(val);
    else if (key == "host.ffn_mult") cfg.host.ffn_mult = std::stol(val);
    else if (key == "host.d_v") cfg.host.d_v = std::stol(val);
    else if (key == "host.init_seed") cfg.host.init_seed = std::stoull(val);
    else if (key == "resampler.d_v") cfg.resampler.d_v = std::stol(val);
    else if (key == "resampler.d_l") cfg.resampler.d_l = std::stol(val);
    else if (key == "resampler.d_llm") cfg.resampler.d_llm = std::stol(val);
    else if (key == "resampler.n_latents") cfg.resampler.n_latents = std::stol(val);
    else if (key == "resampler.n_blocks") cfg.resampler.n_blocks = std::stol(val);
    else if (key == "gaze.scheme") {
      cfg.gaze.scheme = scheme_from_label(val);
      cfg.resampler.scheme = cfg.gaze.scheme;
    } else if (key == "gaze.sigma") cfg.gaze.sigma = std::stod(val);
    else if (key == "gaze.tau_init") cfg.gaze.tau_init = std::stod(val);
    else if (key == "gaze.grid_h") cfg.gaze.grid_h = std::stol(val);
    else if (key == "gaze.grid_w") cfg.gaze.grid_w = std::stol(val);
    else if (key == "inject.layers") {
      cfg.inject.layers.clear();
      std::stringstream ss(val);
      std::string tok;
      while (std::getline(ss, tok, ',')) cfg.inject.layers.push_back(std::stol(tok));
    } else if (key == "inject.share") cfg.inject.share = val == "1";
    else if (key == "adapter") cfg.adapter.kind = val == "lora" ? AdapterKind::kLora : AdapterKind::kNone;
    else if (key == "lora.rank") cfg.adapter.lora.rank = std::stol(val);
    else if (key == "lora.alpha") cfg.adapter.lora.alpha = std::stod(val);
    else if (key == "init_seed") cfg.init_seed = std::stoull(val);
    else if (key == "gaze_enabled") cfg.gaze_enabled = val == "1";
    // unknown keys are tolerated
  }
  return cfg;
}

}  // namespace gazesteer
