#pragma once

#include <map>
#include <string>
#include <vector>

#include "gazesteer/types.hpp"

namespace gazesteer {

struct Fixation {
  double x = 0, y = 0;  // normalized [0,1] screen coordinates
  double t = 0;         // onset-centered time, seconds
  double dur = 0;       // duration, seconds
};

struct Scanpath {
  std::string video_id;
  std::vector<Fixation> fixations;  // kept sorted by t
};

// A fixation is active at frame_time when |frame_time - t| <= dur/2 (inclusive
// on both edges).
bool fixation_active(const Fixation& f, double frame_time);

// Sinusoidal coordinate encoding, d must be a multiple of 4. First half
// encodes x, second half y; within a half, pair k is
// (sin(2*pi*c / 10000^(2k/(d/2))), cos(same)). Norm^2 is exactly d/2.
Vec coord_pe(double x, double y, Index d);

// Per-frame gaze vector under the coordinate scheme: encodings of all active
// fixations averaged; the zero vector when none is active.
Vec gaze_coord_pe(const Scanpath& sp, double frame_time, Index d);

enum class HeatScheme { kTau, kDur };

// Fixation heatmap over an H x W grid of cell centers, flattened row-major.
// Sums Gaussian bumps from fixations with onset at or before frame_time,
// weighted by recency exp(-(frame_time - t)/tau) or by duration, then scaled
// so the peak is 1 (all-zero when no past fixation). If dh_dtau is non-null
// (kTau only) it receives the elementwise derivative of the normalized map
// with respect to tau, holding the peak's location fixed.
Vec gaze_heatmap(const Scanpath& sp, double frame_time, Index H, Index W,
                 double sigma, HeatScheme scheme, double tau,
                 Vec* dh_dtau = nullptr);

// Scanpath file: one line per video, "video_id<TAB>x y t dur;x y t dur;...".
// '#' starts a comment, blank lines are skipped. Repeated video_id lines merge
// into one scanpath (fixations pooled, re-sorted by onset). Malformed lines
// raise std::runtime_error naming the 1-based line number.
std::map<std::string, Scanpath> load_scanpaths(const std::string& path);
void save_scanpaths(const std::string& path,
                    const std::map<std::string, Scanpath>& paths);

}  // namespace gazesteer
