#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "gazesteer/bundle.hpp"
#include "gazesteer/host.hpp"
#include "gazesteer/rng.hpp"
#include "gazesteer/synthvideo.hpp"

using namespace gazesteer;

namespace {

HostCfg tiny_host() {
  HostCfg cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.max_seq = 32;
  cfg.d_v = 8;
  return cfg;
}

Mat rand_mat(Rng& rng, Index r, Index c, double s = 1.0) {
  Mat m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = s * rng.normal();
  return m;
}

std::vector<int> demo_tokens(int n_vis) {
  std::vector<int> t(static_cast<std::size_t>(n_vis), vocab::kVisual);
  t.push_back(vocab::kTaskBase);
  t.push_back(vocab::kTimeBase + 2);
  for (int i = 0; i < 4; ++i) t.push_back(vocab::kObjectBase + i);
  t.push_back(vocab::kCue);
  return t;
}

}  // namespace

TEST_CASE("visual span detection") {
  auto span = locate_visual_span(demo_tokens(5));
  CHECK(span.first == 0);
  CHECK(span.second == 5);

  std::vector<int> none = {vocab::kCue, vocab::kTaskBase};
  CHECK_THROWS_AS(locate_visual_span(none), std::runtime_error);

  std::vector<int> scattered = {vocab::kVisual, vocab::kCue, vocab::kVisual};
  CHECK_THROWS_AS(locate_visual_span(scattered), std::runtime_error);
}

TEST_CASE("registration is deterministic and fully frozen") {
  HostCfg cfg = tiny_host();
  TensorStore a, b;
  register_host(a, cfg);
  register_host(b, cfg);
  REQUIRE(a.size() == b.size());
  for (Index i = 0; i < a.size(); ++i) {
    CHECK(a.at(static_cast<int>(i)).value == b.at(static_cast<int>(i)).value);
    CHECK(!a.at(static_cast<int>(i)).trainable);
  }
}

TEST_CASE("embedding mixes projected visuals, token rows and positions") {
  HostCfg cfg = tiny_host();
  TensorStore store;
  HostSlots slots = register_host(store, cfg);
  Rng rng(3);
  Mat vis = rand_mat(rng, 5, cfg.d_v);
  auto tokens = demo_tokens(5);
  Mat h = host_embed(store, slots, cfg, tokens, vis);
  REQUIRE(h.rows() == static_cast<Index>(tokens.size()));
  REQUIRE(h.cols() == cfg.d_model);

  const Mat& tok = store.at(slots.tok_emb).value;
  const Mat& pos = store.at(slots.pos_emb).value;
  const Mat& vp = store.at(slots.visproj).value;
  CHECK((h.row(0) - (vis.row(0) * vp + pos.row(0))).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((h.row(5) - (tok.row(vocab::kTaskBase) + pos.row(5))).cwiseAbs().maxCoeff() < 1e-14);

  // mismatched visuals and out-of-range tokens are rejected
  CHECK_THROWS_AS(host_embed(store, slots, cfg, tokens, rand_mat(rng, 4, cfg.d_v)),
                  std::runtime_error);
  CHECK_THROWS_AS(host_embed(store, slots, cfg, tokens, rand_mat(rng, 5, cfg.d_v + 1)),
                  std::runtime_error);
  auto bad = tokens;
  bad.back() = vocab::kSize + 3;
  CHECK_THROWS_AS(host_embed(store, slots, cfg, bad, vis), std::runtime_error);
  auto long_toks = demo_tokens(static_cast<int>(cfg.max_seq));
  CHECK_THROWS_AS(host_embed(store, slots, cfg, long_toks,
                             rand_mat(rng, cfg.max_seq, cfg.d_v)),
                  std::runtime_error);
}

TEST_CASE("decoder is causal: late tokens cannot move early states") {
  HostCfg cfg = tiny_host();
  TensorStore store;
  HostSlots slots = register_host(store, cfg);
  Rng rng(5);
  Mat vis = rand_mat(rng, 5, cfg.d_v);
  auto t1 = demo_tokens(5);
  auto t2 = t1;
  t2.back() = vocab::kObjectBase + 9;  // change only the final token

  ag::Tape a, b;
  int ha = host_forward(a, slots, store, cfg, a.input(host_embed(store, slots, cfg, t1, vis)));
  int hb = host_forward(b, slots, store, cfg, b.input(host_embed(store, slots, cfg, t2, vis)));
  Index S = a.val(ha).rows();
  CHECK(a.val(ha).topRows(S - 1) == b.val(hb).topRows(S - 1));
  CHECK(a.val(ha).row(S - 1) != b.val(hb).row(S - 1));
}

TEST_CASE("zeroed adapters leave the model bit identical") {
  HostCfg cfg = tiny_host();
  TensorStore store;
  HostSlots slots = register_host(store, cfg);
  LoraCfg lc;
  lc.rank = 2;
  lc.alpha = 4.0;
  LoraSlots lora = register_lora(store, cfg, lc, 77);
  CHECK(lc.scaling() == 2.0);

  Rng rng(7);
  Mat vis = rand_mat(rng, 5, cfg.d_v);
  auto tokens = demo_tokens(5);
  Mat emb = host_embed(store, slots, cfg, tokens, vis);

  ag::Tape base, adapted;
  int hb = host_forward(base, slots, store, cfg, base.input(emb));
  int ha = host_forward(adapted, slots, store, cfg, adapted.input(emb), &lora, lc.scaling());
  CHECK(base.val(hb) == adapted.val(ha));
}

TEST_CASE("applied adapters equal merged weights") {
  HostCfg cfg = tiny_host();
  TensorStore store;
  HostSlots slots = register_host(store, cfg);
  LoraCfg lc;
  lc.rank = 2;
  lc.alpha = 4.0;
  LoraSlots lora = register_lora(store, cfg, lc, 78);
  Rng rng(8);
  for (const auto& lay : lora.layers) {
    store.at(lay.q_b).value = rand_mat(rng, lc.rank, cfg.d_model, 0.1);
    store.at(lay.v_b).value = rand_mat(rng, lc.rank, cfg.d_model, 0.1);
  }

  // second model with the adapters folded into the base weights
  TensorStore merged;
  HostSlots mslots = register_host(merged, cfg);
  for (std::size_t l = 0; l < lora.layers.size(); ++l) {
    const auto& ll = lora.layers[l];
    const auto& lay = slots.layers[l];
    const auto& mlay = mslots.layers[l];
    merged.at(mlay.w_q).value = lora_merged(store.at(lay.w_q).value, store.at(ll.q_a).value,
                                            store.at(ll.q_b).value, lc.scaling());
    merged.at(mlay.w_v).value = lora_merged(store.at(lay.w_v).value, store.at(ll.v_a).value,
                                            store.at(ll.v_b).value, lc.scaling());
  }

  for (int trial = 0; trial < 10; ++trial) {
    Mat vis = rand_mat(rng, 5, cfg.d_v);
    auto tokens = demo_tokens(5);
    Mat emb = host_embed(store, slots, cfg, tokens, vis);
    ag::Tape ta, tm;
    int ya = host_logits_last(ta, slots, store,
                              host_forward(ta, slots, store, cfg, ta.input(emb), &lora, lc.scaling()));
    int ym = host_logits_last(tm, mslots, merged,
                              host_forward(tm, mslots, merged, cfg, tm.input(emb)));
    CHECK((ta.val(ya) - tm.val(ym)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("gradients reach adapters only; the base never moves") {
  HostCfg cfg = tiny_host();
  TensorStore store;
  HostSlots slots = register_host(store, cfg);
  LoraCfg lc;
  lc.rank = 2;
  LoraSlots lora = register_lora(store, cfg, lc, 79);
  Rng rng(9);
  for (const auto& lay : lora.layers)
    store.at(lay.q_b).value = rand_mat(rng, lc.rank, cfg.d_model, 0.1);

  std::set<int> lora_slots;
  for (const auto& lay : lora.layers)
    for (int s : {lay.q_a, lay.q_b, lay.v_a, lay.v_b}) lora_slots.insert(s);

  Mat vis = rand_mat(rng, 5, cfg.d_v);
  Mat emb = host_embed(store, slots, cfg, demo_tokens(5), vis);
  ag::Tape tape;
  int logits = host_logits_last(tape, slots, store,
                                host_forward(tape, slots, store, cfg, tape.input(emb), &lora,
                                             lc.scaling()));
  tape.backward(tape.sum_sq(logits));
  CHECK(!tape.slot_grads().empty());
  for (const auto& [slot, g] : tape.slot_grads()) {
    CHECK(lora_slots.count(slot) == 1);
    CHECK(g.cwiseAbs().maxCoeff() >= 0.0);
  }
}

TEST_CASE("detaching the injection restores the plain decoder exactly") {
  BundleCfg bc;
  bc.host = tiny_host();
  bc.host.max_seq = 64;
  bc.resampler.d_v = bc.host.d_v;
  bc.resampler.d_l = 8;
  bc.resampler.d_llm = bc.host.d_model;
  bc.resampler.n_latents = 4;
  bc.resampler.n_blocks = 1;
  bc.inject.layers = {0, 1};
  bc.gaze.grid_h = 3;
  bc.gaze.grid_w = 3;
  Bundle bundle(bc);

  // give the resampler output mass so attached != detached
  for (const auto& rs : bundle.resampler_slots()) {
    Mat& w = bundle.store().at(rs.w_out).value;
    Rng wr(101);
    for (Index r = 0; r < w.rows(); ++r)
      for (Index c = 0; c < w.cols(); ++c) w(r, c) = 0.1 * wr.normal();
  }

  SceneCfg sc;
  sc.T = 2;
  sc.H = 3;
  sc.W = 3;
  sc.n_objects = 4;
  sc.seed = 5;
  FeatureCfg fc;
  fc.d_v = bc.host.d_v;
  Scene scene = gen_scene(sc);
  auto feats = render_features(scene, fc);
  Scanpath sp;
  sp.video_id = "v000";
  sp.fixations.push_back({scene.objects[0].x[0], scene.objects[0].y[0], 0.5, 0.4});
  Item item;
  item.video_id = "v000";
  item.task = TaskKind::kFixatedNow;
  item.time_bucket = sc.T - 1;
  item.options = {scene.objects[0].id, scene.objects[1].id, scene.objects[2].id,
                  scene.objects[3].id};
  item.correct_pos = 0;

  auto run = [&] {
    ag::Tape tape;
    auto g = bundle.build_item(tape, item, feats, sp, 1.0, false);
    return Mat(tape.val(g.logits));
  };

  Mat on1 = run();
  bundle.detach();
  Mat off1 = run();
  bundle.attach();
  Mat on2 = run();
  bundle.detach();
  Mat off2 = run();
  bundle.attach();

  CHECK(on1 == on2);
  CHECK(off1 == off2);
  CHECK(on1 != off1);

  // double attach / double detach are caller bugs
  CHECK_THROWS_AS(bundle.attach(), std::runtime_error);
  bundle.detach();
  CHECK_THROWS_AS(bundle.detach(), std::runtime_error);
}

TEST_CASE("head dimensions must divide the model width") {
  HostCfg cfg = tiny_host();
  cfg.n_heads = 3;
  TensorStore store;
  CHECK_THROWS_AS(register_host(store, cfg), std::invalid_argument);
}
