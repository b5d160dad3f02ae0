#pragma once

#include <cstdint>
#include <string>

#include "gazesteer/bundle.hpp"

namespace gazesteer {

struct CheckpointMeta {
  std::uint32_t version = 1;
  std::int32_t stage = 0;
  std::uint64_t seed = 0;
  std::string config;   // key=value lines; enough to rebuild the bundle
  std::string metrics;  // key=value summary of the run that produced it
};

// Single binary container: magic, version, meta, then every tensor as a
// length-prefixed (name, rows, cols, float64 column-major payload) record in
// store order. Values round-trip bit-exactly.
void save_checkpoint(const std::string& path, const TensorStore& store,
                     const CheckpointMeta& meta);

// Meta only; no tensor data is read.
CheckpointMeta peek_checkpoint(const std::string& path);

// Loads values into an existing store. Every file tensor must match a store
// tensor by name and shape. With allow_missing, store tensors absent from the
// file keep their current values (stage-2 adapters starting fresh on top of a
// stage-1 file); otherwise the file must cover the store exactly.
CheckpointMeta load_checkpoint(const std::string& path, TensorStore& store,
                               bool allow_missing = false);

// Bundle config <-> key=value text used inside checkpoint meta.
std::string bundle_cfg_to_kv(const BundleCfg& cfg);
BundleCfg bundle_cfg_from_kv(const std::string& kv);

const char* scheme_label(GazeScheme s);
GazeScheme scheme_from_label(const std::string& s);

}  // namespace gazesteer
