#include "gazesteer/resampler.hpp"

#include <cmath>
#include <stdexcept>

#include "gazesteer/rng.hpp"

namespace gazesteer {

namespace {

Mat xavier(Index rows, Index cols, Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  return m;
}

Mat gaussian(Index rows, Index cols, double sigma, Rng& rng) {
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = sigma * rng.normal();
  return m;
}

}  // namespace

ResamplerSlots register_resampler(TensorStore& store, const ResamplerCfg& cfg,
                                  const std::string& prefix, std::uint64_t rng_seed) {
  if (cfg.d_l % 4 != 0) throw std::invalid_argument("resampler: d_l must be a multiple of 4");
  if (cfg.n_latents <= 0 || cfg.n_blocks <= 0)
    throw std::invalid_argument("resampler: need latents and blocks");
  Rng rng(derive_seed(rng_seed, prefix));
  ResamplerSlots s;
  auto mat = [&](const std::string& name, Mat v, bool decay) {
    return store.add(prefix + "." + name, std::move(v), true, decay);
  };
  // feature rows arrive near unit norm, so unit-variance columns here put
  // projected cells on the same scale as the latents; spatial and latent keys
  // then compete on even terms and attention starts position-selective
  Mat w_in_v = gaussian(cfg.d_v, cfg.d_l, 1.0, rng);
  s.w_in = mat("w_in", w_in_v, true);
  s.latents = mat("latents", gaussian(cfg.n_latents, cfg.d_l, 1.0, rng), false);

  // coordinate scheme: the gaze code and the cell signatures speak the same
  // sin/cos family, the gaze code just carries a denser frequency ladder.
  // Selecting the shared frequencies and pushing them through the input and
  // key projections turns the (row-constant) key bias into the key of a
  // phantom cell at the gaze point, so latents whose queries match that cell
  // gain spatial mass from the very first step instead of after a long
  // bootstrap. Requires the ladders to nest; otherwise fall back to random.
  Mat freq_sel;
  if (cfg.scheme == GazeScheme::kCoordPe && cfg.d_l % cfg.d_v == 0) {
    Index r = cfg.d_l / cfg.d_v;
    freq_sel = Mat::Zero(cfg.d_l, cfg.d_v);
    for (int axis = 0; axis < 2; ++axis)
      for (Index k = 0; k < cfg.d_v / 4; ++k)
        for (int sc = 0; sc < 2; ++sc)
          freq_sel(axis * (cfg.d_l / 2) + 2 * k * r + sc,
                   axis * (cfg.d_v / 2) + 2 * k + sc) = 1.0;
    freq_sel /= std::sqrt(static_cast<double>(cfg.d_v) / 2.0);  // unit phantom
  }

  for (Index b = 0; b < cfg.n_blocks; ++b) {
    std::string bp = std::to_string(b) + ".";
    ResamplerSlots::Block blk;
    blk.w_q = mat(bp + "w_q", xavier(cfg.d_l, cfg.d_l, rng), true);
    Mat w_k_v = xavier(cfg.d_l, cfg.d_l, rng);
    blk.w_k = mat(bp + "w_k", w_k_v, true);
    blk.w_v = mat(bp + "w_v", xavier(cfg.d_l, cfg.d_l, rng), true);
    blk.w_g = mat(bp + "w_g",
                  freq_sel.size() > 0 ? Mat(freq_sel * (w_in_v * w_k_v))
                                      : xavier(cfg.d_l, cfg.d_l, rng),
                  true);
    blk.ln_g = mat(bp + "ln.g", Mat::Ones(1, cfg.d_l), false);
    blk.ln_b = mat(bp + "ln.b", Mat::Zero(1, cfg.d_l), false);
    blk.ffn_w1 = mat(bp + "ffn.w1", xavier(cfg.d_l, 4 * cfg.d_l, rng), true);
    blk.ffn_b1 = mat(bp + "ffn.b1", Mat::Zero(1, 4 * cfg.d_l), false);
    blk.ffn_w2 = mat(bp + "ffn.w2", xavier(4 * cfg.d_l, cfg.d_l, rng), true);
    blk.ffn_b2 = mat(bp + "ffn.b2", Mat::Zero(1, cfg.d_l), false);
    s.blocks.push_back(blk);
  }
  // readout starts with some bite: doubled queries make the per-position
  // attention over latents selective from the first step, and the wide value
  // projection keeps summary rows large enough that the zero-init output
  // projection turns early gradient into visible movement
  double rd = 1.0 / std::sqrt(static_cast<double>(cfg.d_l));
  s.rev_w_q = mat("rev.w_q", gaussian(cfg.d_l, cfg.d_l, 2.0 * rd, rng), true);
  s.rev_w_k = mat("rev.w_k", xavier(cfg.d_l, cfg.d_l, rng), true);
  s.rev_w_v = mat("rev.w_v", gaussian(cfg.d_l, cfg.d_l, 4.0 * rd, rng), true);
  s.w_out = mat("w_out", Mat::Zero(cfg.d_l, cfg.d_llm), true);
  // strong enough that a fully-lit cell shifts its key about one score unit
  if (cfg.scheme != GazeScheme::kCoordPe)
    s.heat_lift = mat("heat_lift", gaussian(1, cfg.d_l, 1.0, rng), false);
  return s;
}

std::int64_t resampler_param_count(const ResamplerCfg& cfg) {
  std::int64_t d = cfg.d_l;
  std::int64_t per_block = 4 * d * d      // w_q, w_k, w_v, w_g
                           + 2 * d        // layernorm gain/bias
                           + d * 4 * d + 4 * d  // ffn in
                           + 4 * d * d + d;     // ffn out
  std::int64_t total = cfg.d_v * d + cfg.n_latents * d + cfg.n_blocks * per_block +
                       3 * d * d + d * cfg.d_llm;
  if (cfg.scheme != GazeScheme::kCoordPe) total += d;
  return total;
}

int resampler_forward(ag::Tape& tape, const ResamplerSlots& slots,
                      const TensorStore& store, const ResamplerCfg& cfg,
                      const Mat& features, const GazeInput& gaze,
                      ResamplerProbe* probe) {
  if (features.cols() != cfg.d_v) throw std::invalid_argument("resampler_forward: feature width");
  Index HW = features.rows();
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.d_l));

  auto P = [&](int slot) { return tape.param(slot, &store.at(slot).value); };

  int f_in = tape.input(features);
  int x = tape.matmul(f_in, P(slots.w_in));  // HW x d_l

  // gaze rows G (HW x d_l); absent entirely for the detached/control case
  int g_rows = -1;
  switch (gaze.kind) {
    case GazeInput::Kind::kNone:
      break;
    case GazeInput::Kind::kCoordVec: {
      if (gaze.coord.size() != cfg.d_l) throw std::invalid_argument("gaze coord width");
      Mat rows = Vec::Ones(HW) * gaze.coord.transpose();
      g_rows = tape.input(std::move(rows));
      break;
    }
    case GazeInput::Kind::kHeatmap: {
      if (gaze.heat.size() != HW) throw std::invalid_argument("gaze heatmap size");
      if (slots.heat_lift < 0) throw std::logic_error("heatmap gaze on a coord resampler");
      int h;
      if (gaze.tau_grad && gaze.dheat_dtau.size() == HW) {
        Vec dtau = gaze.dheat_dtau;
        double* acc = gaze.tau_grad;
        h = tape.input_cb(Mat(gaze.heat), [dtau, acc](const Mat& dy) {
          *acc += (dy.array() * dtau.array()).sum();
        });
      } else {
        h = tape.input(Mat(gaze.heat));
      }
      g_rows = tape.matmul(h, P(slots.heat_lift));  // HW x d_l
      break;
    }
  }

  int lat = P(slots.latents);  // K x d_l
  Mat zero_pad = Mat::Zero(cfg.n_latents, cfg.d_l);

  for (Index b = 0; b < cfg.n_blocks; ++b) {
    const auto& blk = slots.blocks[static_cast<std::size_t>(b)];
    int q = tape.matmul(lat, P(blk.w_q));            // K x d_l
    int kv_in = tape.concat_rows(x, lat);            // (HW+K) x d_l
    int k = tape.matmul(kv_in, P(blk.w_k));
    if (g_rows >= 0) {
      // gaze bias touches the spatial keys only; latent keys stay clean
      int gb = tape.matmul(g_rows, P(blk.w_g));
      int gb_pad = tape.concat_rows(gb, tape.input(zero_pad));
      k = tape.add(k, gb_pad);
    }
    int v = tape.matmul(kv_in, P(blk.w_v));
    int scores = tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt);  // K x (HW+K)
    if (probe) probe->block_scores.push_back(scores);
    int attn = tape.softmax_rows(scores);
    lat = tape.add(lat, tape.matmul(attn, v));
    lat = tape.layernorm_rows(lat, P(blk.ln_g), P(blk.ln_b));
    int h1 = tape.gelu(tape.add_bias_row(tape.matmul(lat, P(blk.ffn_w1)), P(blk.ffn_b1)));
    int h2 = tape.add_bias_row(tape.matmul(h1, P(blk.ffn_w2)), P(blk.ffn_b2));
    lat = tape.add(lat, h2);
  }
  if (probe) probe->latents_out = lat;

  // read-out: spatial tokens query the latents; no token-token attention
  int rq = tape.matmul(x, P(slots.rev_w_q));    // HW x d_l
  int rk = tape.matmul(lat, P(slots.rev_w_k));  // K x d_l
  int rv = tape.matmul(lat, P(slots.rev_w_v));
  int rs = tape.scale(tape.matmul(rq, tape.transpose(rk)), inv_sqrt);  // HW x K
  int ra = tape.softmax_rows(rs);
  int y = tape.matmul(ra, rv);                  // HW x d_l
  return tape.matmul(y, P(slots.w_out));        // HW x d_llm
}

}  // namespace gazesteer
