#include "gazesteer/synthvideo.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "gazesteer/rng.hpp"
#include "gazesteer/scanpath.hpp"

namespace gazesteer {

double frame_time(const Scene& s, int f) {
  return (static_cast<double>(f) + 0.5) * s.frame_dt;
}

Index cell_row(double y, Index H) {
  auto r = static_cast<Index>(std::floor(y * static_cast<double>(H)));
  return std::clamp<Index>(r, 0, H - 1);
}

Index cell_col(double x, Index W) {
  auto c = static_cast<Index>(std::floor(x * static_cast<double>(W)));
  return std::clamp<Index>(c, 0, W - 1);
}

Index cell_index(double x, double y, Index H, Index W) {
  return cell_row(y, H) * W + cell_col(x, W);
}

Scene gen_scene(const SceneCfg& cfg) {
  if (cfg.n_objects <= 0) throw std::invalid_argument("gen_scene: need at least one object");
  if (cfg.T <= 0 || cfg.H <= 0 || cfg.W <= 0) throw std::invalid_argument("gen_scene: bad grid");
  Index cells = static_cast<Index>(cfg.H) * cfg.W;
  if (cfg.n_objects > cells)
    throw std::invalid_argument("gen_scene: more objects than grid cells");

  Rng rng(derive_seed(cfg.seed, "scene"));
  Scene s;
  s.T = cfg.T;
  s.H = cfg.H;
  s.W = cfg.W;
  s.frame_dt = cfg.frame_dt;
  s.objects.resize(static_cast<std::size_t>(cfg.n_objects));

  // initial placement: distinct cells, position near the cell center
  std::set<Index> occ;
  for (int i = 0; i < cfg.n_objects; ++i) {
    SceneObject& o = s.objects[static_cast<std::size_t>(i)];
    o.id = i;
    Index cell;
    do {
      cell = static_cast<Index>(rng.below(static_cast<std::uint64_t>(cells)));
    } while (occ.count(cell));
    occ.insert(cell);
    Index r = cell / cfg.W, c = cell % cfg.W;
    double jx = rng.uniform(-0.3, 0.3), jy = rng.uniform(-0.3, 0.3);
    o.x.push_back((static_cast<double>(c) + 0.5 + jx) / cfg.W);
    o.y.push_back((static_cast<double>(r) + 0.5 + jy) / cfg.H);
  }

  for (int f = 1; f < cfg.T; ++f) {
    std::set<Index> claimed;
    for (int i = 0; i < cfg.n_objects; ++i) {
      SceneObject& o = s.objects[static_cast<std::size_t>(i)];
      double px = o.x.back(), py = o.y.back();
      double nx = px, ny = py;
      bool placed = false;
      for (int attempt = 0; attempt < 24; ++attempt) {
        double tx = std::clamp(px + rng.uniform(-cfg.step, cfg.step), 0.0, 1.0 - 1e-9);
        double ty = std::clamp(py + rng.uniform(-cfg.step, cfg.step), 0.0, 1.0 - 1e-9);
        Index cell = cell_index(tx, ty, cfg.H, cfg.W);
        bool taken = claimed.count(cell) > 0;
        // objects not yet moved this frame still hold their previous cells
        for (int j = i + 1; j < cfg.n_objects && !taken; ++j) {
          const SceneObject& other = s.objects[static_cast<std::size_t>(j)];
          taken = cell == cell_index(other.x.back(), other.y.back(), cfg.H, cfg.W);
        }
        if (!taken) {
          nx = tx;
          ny = ty;
          claimed.insert(cell);
          placed = true;
          break;
        }
      }
      if (!placed) {
        // stay put if possible, otherwise take any free cell
        Index cell = cell_index(px, py, cfg.H, cfg.W);
        bool taken = claimed.count(cell) > 0;
        if (!taken) {
          claimed.insert(cell);
        } else {
          for (Index cand = 0; cand < cells; ++cand) {
            bool free = !claimed.count(cand);
            for (int j = i + 1; j < cfg.n_objects && free; ++j) {
              const SceneObject& other = s.objects[static_cast<std::size_t>(j)];
              free = cand != cell_index(other.x.back(), other.y.back(), cfg.H, cfg.W);
            }
            if (free) {
              claimed.insert(cand);
              Index r = cand / cfg.W, c = cand % cfg.W;
              nx = (static_cast<double>(c) + 0.5) / cfg.W;
              ny = (static_cast<double>(r) + 0.5) / cfg.H;
              break;
            }
          }
        }
      }
      o.x.push_back(nx);
      o.y.push_back(ny);
    }
  }
  return s;
}

Vec object_embedding(int object_id, const FeatureCfg& cfg) {
  Rng rng(derive_seed(cfg.feature_seed, "obj" + std::to_string(object_id)));
  Vec e = Vec::Zero(cfg.d_v);
  for (Index i = 0; i < cfg.d_v - 2; ++i) e(i) = rng.normal();
  double n = e.norm();
  if (n > 0) e /= n;
  return e;
}

Vec background_embedding(const FeatureCfg& cfg) {
  Rng rng(derive_seed(cfg.feature_seed, "background"));
  Vec e = Vec::Zero(cfg.d_v);
  for (Index i = 0; i < cfg.d_v - 2; ++i) e(i) = rng.normal();
  double n = e.norm();
  if (n > 0) e /= n;
  return e;
}

static Mat cell_signatures(Index H, Index W, const FeatureCfg& cfg) {
  Mat sig(H * W, cfg.d_v);
  bool pe_ok = cfg.d_v >= 8 && cfg.d_v % 4 == 0;
  // the motion slice stays zero, which drops exactly one sin/cos pair, so the
  // truncated code still has the same norm at every cell
  double pe_norm = std::sqrt(static_cast<double>(cfg.d_v) / 2.0 - 1.0);
  for (Index p = 0; p < H * W; ++p) {
    Rng rng(derive_seed(cfg.feature_seed, "cell" + std::to_string(p)));
    Vec row = Vec::Zero(cfg.d_v);
    if (pe_ok) {
      double cx = (static_cast<double>(p % W) + 0.5) / static_cast<double>(W);
      double cy = (static_cast<double>(p / W) + 0.5) / static_cast<double>(H);
      row = coord_pe(cx, cy, cfg.d_v);
      row(cfg.d_v - 2) = 0.0;
      row(cfg.d_v - 1) = 0.0;
      row *= cfg.pos_scale / pe_norm;
    }
    for (Index i = 0; i < cfg.d_v - 2; ++i) row(i) += cfg.noise_scale * rng.normal();
    sig.row(p) = row.transpose();
  }
  return sig;
}

std::vector<Mat> render_features(const Scene& scene, const FeatureCfg& cfg) {
  if (cfg.d_v < 4) throw std::invalid_argument("render_features: d_v too small");
  Index H = scene.H, W = scene.W, P = H * W;
  Vec bg = background_embedding(cfg);
  Mat sig = cell_signatures(H, W, cfg);

  std::vector<Mat> out;
  out.reserve(static_cast<std::size_t>(scene.T));
  for (int f = 0; f < scene.T; ++f) {
    Mat fr(P, cfg.d_v);
    for (Index p = 0; p < P; ++p) fr.row(p) = bg.transpose() + sig.row(p);
    for (const auto& o : scene.objects) {
      auto uf = static_cast<std::size_t>(f);
      Index p = cell_index(o.x[uf], o.y[uf], H, W);
      fr.row(p) = object_embedding(o.id, cfg).transpose() + sig.row(p);
      if (cfg.mode == FeatureMode::kTemporal && f > 0) {
        fr(p, cfg.d_v - 2) = o.x[uf] - o.x[uf - 1];
        fr(p, cfg.d_v - 1) = o.y[uf] - o.y[uf - 1];
      }
    }
    out.push_back(std::move(fr));
  }
  return out;
}

namespace {

// align-corners source coordinate for destination index i
double src_coord(Index i, Index dst_len, Index src_len) {
  if (dst_len <= 1 || src_len <= 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(src_len - 1) /
         static_cast<double>(dst_len - 1);
}

Mat bilinear_frame(const Mat& in, Index H, Index W, Index H2, Index W2) {
  Mat out(H2 * W2, in.cols());
  for (Index r = 0; r < H2; ++r) {
    double sy = src_coord(r, H2, H);
    Index y0 = static_cast<Index>(std::floor(sy));
    Index y1 = std::min(y0 + 1, H - 1);
    double wy = sy - static_cast<double>(y0);
    for (Index c = 0; c < W2; ++c) {
      double sx = src_coord(c, W2, W);
      Index x0 = static_cast<Index>(std::floor(sx));
      Index x1 = std::min(x0 + 1, W - 1);
      double wx = sx - static_cast<double>(x0);
      out.row(r * W2 + c) = (1 - wy) * ((1 - wx) * in.row(y0 * W + x0) + wx * in.row(y0 * W + x1)) +
                            wy * ((1 - wx) * in.row(y1 * W + x0) + wx * in.row(y1 * W + x1));
    }
  }
  return out;
}

}  // namespace

std::vector<Mat> interp_align(const std::vector<Mat>& frames, Index H, Index W,
                              Index H2, Index W2, Index T2) {
  if (frames.empty()) throw std::invalid_argument("interp_align: empty input");
  auto T = static_cast<Index>(frames.size());
  for (const auto& f : frames)
    if (f.rows() != H * W) throw std::invalid_argument("interp_align: frame shape mismatch");

  std::vector<Mat> spatial;
  spatial.reserve(frames.size());
  for (const auto& f : frames) spatial.push_back(bilinear_frame(f, H, W, H2, W2));

  std::vector<Mat> out;
  out.reserve(static_cast<std::size_t>(T2));
  for (Index t = 0; t < T2; ++t) {
    double st = src_coord(t, T2, T);
    Index t0 = static_cast<Index>(std::floor(st));
    Index t1 = std::min(t0 + 1, T - 1);
    double wt = st - static_cast<double>(t0);
    out.push_back((1 - wt) * spatial[static_cast<std::size_t>(t0)] +
                  wt * spatial[static_cast<std::size_t>(t1)]);
  }
  return out;
}

}  // namespace gazesteer
