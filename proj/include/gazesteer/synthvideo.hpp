#pragma once

#include <cstdint>
#include <vector>

#include "gazesteer/types.hpp"

namespace gazesteer {

struct SceneCfg {
  std::uint64_t seed = 0;
  int n_objects = 6;
  int T = 4;
  int H = 8, W = 8;
  double step = 0.12;      // random-walk step bound per frame, normalized units
  double frame_dt = 1.0;   // seconds between frames
};

struct SceneObject {
  int id = 0;                  // global object identity (token-aligned)
  std::vector<double> x, y;    // position per frame, in [0,1]
};

struct Scene {
  int T = 0, H = 0, W = 0;
  double frame_dt = 1.0;
  std::vector<SceneObject> objects;
};

// Frame capture instants sit mid-interval: frame f is taken at (f + 0.5)*dt.
double frame_time(const Scene& s, int f);

// Grid cell (row, col) containing a normalized coordinate.
Index cell_row(double y, Index H);
Index cell_col(double x, Index W);
Index cell_index(double x, double y, Index H, Index W);  // row-major

// Objects do a clipped random walk; no two objects ever share a cell in any
// frame. n_objects > H*W is a configuration error.
Scene gen_scene(const SceneCfg& cfg);

enum class FeatureMode { kStatic, kTemporal };

struct FeatureCfg {
  Index d_v = 32;
  std::uint64_t feature_seed = 7;  // global: object embeddings are stable across scenes
  FeatureMode mode = FeatureMode::kTemporal;
  double noise_scale = 0.1;  // random per-cell part of the signature
  double pos_scale = 0.75;   // positional-code part of the signature
};

// Fixed unit-norm embedding for an object id. The last two feature dims are
// reserved for the motion slice and stay zero here.
Vec object_embedding(int object_id, const FeatureCfg& cfg);

// The shared empty-cell vector, same conventions as object_embedding.
Vec background_embedding(const FeatureCfg& cfg);

// Per-frame feature grids, each HW x d_v (row-major cells). Object cells carry
// the object's embedding, empty cells a shared background vector; every cell
// additionally gets a fixed signature (same in every frame and scene): the
// sin/cos code of the cell center plus a little per-cell noise, so location is
// linearly decodable from content the way it is in patch features from a real
// backbone. In temporal mode the last two dims of an object's cell hold its
// displacement since the previous frame; in static mode that slice is zero.
std::vector<Mat> render_features(const Scene& scene, const FeatureCfg& cfg);

// Resample a feature volume to a new grid / frame count. Bilinear over the
// spatial grid, linear over frames, align-corners at both ends.
std::vector<Mat> interp_align(const std::vector<Mat>& frames, Index H, Index W,
                              Index H2, Index W2, Index T2);

}  // namespace gazesteer
