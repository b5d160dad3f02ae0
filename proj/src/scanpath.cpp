#include "gazesteer/scanpath.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gazesteer {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

bool fixation_active(const Fixation& f, double frame_time) {
  return std::abs(frame_time - f.t) <= f.dur / 2.0;
}

Vec coord_pe(double x, double y, Index d) {
  if (d <= 0 || d % 4 != 0) throw std::invalid_argument("coord_pe: d must be a positive multiple of 4");
  Vec out(d);
  Index half = d / 2, pairs = d / 4;
  double coords[2] = {x, y};
  for (int ci = 0; ci < 2; ++ci) {
    for (Index k = 0; k < pairs; ++k) {
      double div = std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(half));
      double a = kTwoPi * coords[ci] / div;
      out(ci * half + 2 * k) = std::sin(a);
      out(ci * half + 2 * k + 1) = std::cos(a);
    }
  }
  return out;
}

Vec gaze_coord_pe(const Scanpath& sp, double frame_time, Index d) {
  Vec acc = Vec::Zero(d);
  int n = 0;
  for (const auto& f : sp.fixations) {
    if (fixation_active(f, frame_time)) {
      acc += coord_pe(f.x, f.y, d);
      ++n;
    }
  }
  if (n > 0) acc /= static_cast<double>(n);
  return acc;
}

Vec gaze_heatmap(const Scanpath& sp, double frame_time, Index H, Index W,
                 double sigma, HeatScheme scheme, double tau, Vec* dh_dtau) {
  if (sigma <= 0) throw std::invalid_argument("gaze_heatmap: sigma must be positive");
  if (scheme == HeatScheme::kTau && tau <= 0)
    throw std::invalid_argument("gaze_heatmap: tau must be positive");
  Index P = H * W;
  Vec h = Vec::Zero(P);
  Vec dh = Vec::Zero(P);  // d(raw)/d(tau)
  bool any = false;
  for (const auto& f : sp.fixations) {
    if (f.t > frame_time) continue;
    any = true;
    double w, dw = 0;
    if (scheme == HeatScheme::kTau) {
      double age = frame_time - f.t;
      w = std::exp(-age / tau);
      dw = w * age / (tau * tau);
    } else {
      w = f.dur;
    }
    for (Index r = 0; r < H; ++r) {
      double cy = (static_cast<double>(r) + 0.5) / static_cast<double>(H);
      for (Index c = 0; c < W; ++c) {
        double cx = (static_cast<double>(c) + 0.5) / static_cast<double>(W);
        double d2 = (cx - f.x) * (cx - f.x) + (cy - f.y) * (cy - f.y);
        double k = std::exp(-d2 / (2.0 * sigma * sigma));
        h(r * W + c) += w * k;
        dh(r * W + c) += dw * k;
      }
    }
  }
  if (dh_dtau) dh_dtau->setZero(P);
  if (!any) return h;
  Index peak;
  double m = h.maxCoeff(&peak);
  if (m <= 0) return Vec::Zero(P);
  if (dh_dtau && scheme == HeatScheme::kTau) {
    // quotient rule on h/h[peak]; the argmax is treated as locally constant
    double dm = dh(peak);
    *dh_dtau = (dh * m - h * dm) / (m * m);
  }
  return h / m;
}

namespace {

void fail_line(std::size_t lineno, const std::string& why) {
  std::ostringstream os;
  os << "scanpath file line " << lineno << ": " << why;
  throw std::runtime_error(os.str());
}

bool parse_double(const std::string& s, double* out) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) return false;
    *out = v;
    return true;
  } catch (...) {
    return false;
  }
}

}  // namespace

std::map<std::string, Scanpath> load_scanpaths(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scanpath file: " + path);
  std::map<std::string, Scanpath> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) fail_line(lineno, "missing tab after video id");
    std::string id = line.substr(0, tab);
    if (id.empty()) fail_line(lineno, "empty video id");
    std::string rest = line.substr(tab + 1);
    Scanpath& sp = out[id];
    sp.video_id = id;
    std::stringstream groups(rest);
    std::string grp;
    bool got_any = false;
    while (std::getline(groups, grp, ';')) {
      // allow a trailing ';' (empty final group)
      std::stringstream fields(grp);
      std::vector<std::string> toks;
      std::string tok;
      while (fields >> tok) toks.push_back(tok);
      if (toks.empty()) continue;
      if (toks.size() != 4) fail_line(lineno, "fixation needs 4 fields (x y t dur), got " + std::to_string(toks.size()));
      Fixation f;
      double* slots[4] = {&f.x, &f.y, &f.t, &f.dur};
      for (int i = 0; i < 4; ++i)
        if (!parse_double(toks[static_cast<std::size_t>(i)], slots[i]))
          fail_line(lineno, "bad number '" + toks[static_cast<std::size_t>(i)] + "'");
      if (f.dur < 0) fail_line(lineno, "negative duration");
      sp.fixations.push_back(f);
      got_any = true;
    }
    if (!got_any) fail_line(lineno, "no fixations");
  }
  for (auto& [id, sp] : out)
    std::stable_sort(sp.fixations.begin(), sp.fixations.end(),
                     [](const Fixation& a, const Fixation& b) { return a.t < b.t; });
  return out;
}

void save_scanpaths(const std::string& path,
                    const std::map<std::string, Scanpath>& paths) {
  std::ofstream outf(path);
  if (!outf) throw std::runtime_error("cannot write scanpath file: " + path);
  outf.precision(17);
  for (const auto& [id, sp] : paths) {
    outf << id << '\t';
    for (std::size_t i = 0; i < sp.fixations.size(); ++i) {
      const Fixation& f = sp.fixations[i];
      if (i) outf << ';';
      outf << f.x << ' ' << f.y << ' ' << f.t << ' ' << f.dur;
    }
    outf << '\n';
  }
  if (!outf) throw std::runtime_error("write failed: " + path);
}

}  // namespace gazesteer
