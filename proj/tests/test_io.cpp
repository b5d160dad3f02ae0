#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "gazesteer/checkpoint.hpp"
#include "gazesteer/evalrun.hpp"
#include "gazesteer/rng.hpp"
#include "gazesteer/train.hpp"

using namespace gazesteer;

namespace {

namespace fs = std::filesystem;

std::string tmp_path(const char* name) { return (fs::temp_directory_path() / name).string(); }

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

BundleCfg small_cfg(GazeScheme scheme = GazeScheme::kCoordPe,
                    AdapterKind adapter = AdapterKind::kNone) {
  BundleCfg bc;
  bc.host.n_layers = 2;
  bc.host.d_model = 16;
  bc.host.n_heads = 2;
  bc.host.max_seq = 32;
  bc.host.d_v = 8;
  bc.resampler.d_v = 8;
  bc.resampler.d_l = 8;
  bc.resampler.d_llm = 16;
  bc.resampler.n_latents = 4;
  bc.resampler.n_blocks = 1;
  bc.resampler.scheme = scheme;
  bc.gaze.scheme = scheme;
  bc.gaze.grid_h = 3;
  bc.gaze.grid_w = 3;
  bc.inject.layers = {0, 1};
  bc.adapter.kind = adapter;
  bc.adapter.lora.rank = 2;
  return bc;
}

void scramble(TensorStore& store, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& t : store.all())
    for (Index c = 0; c < t.value.cols(); ++c)
      for (Index r = 0; r < t.value.rows(); ++r) t.value(r, c) = rng.normal() * 1e3;
}

}  // namespace

TEST_CASE("checkpoints round trip bit exactly") {
  Bundle a(small_cfg(GazeScheme::kHeatmapTau, AdapterKind::kLora));
  scramble(a.store(), 99);
  // plant values whose bits are easy to lose in text formats
  a.store().all()[0].value(0, 0) = 0.1 + 0.2;
  a.store().all()[1].value(0, 0) = 5e-324;  // smallest subnormal
  a.store().all()[2].value(0, 0) = -0.0;

  CheckpointMeta meta;
  meta.stage = 2;
  meta.seed = 1234;
  meta.config = bundle_cfg_to_kv(a.cfg());
  meta.metrics = "val_acc=0.875\n";
  std::string p1 = tmp_path("ckpt_rt_a.bin");
  save_checkpoint(p1, a.store(), meta);

  Bundle b(small_cfg(GazeScheme::kHeatmapTau, AdapterKind::kLora));
  CheckpointMeta back = load_checkpoint(p1, b.store());
  CHECK(back.stage == 2);
  CHECK(back.seed == 1234);
  CHECK(back.config == meta.config);
  CHECK(back.metrics == meta.metrics);

  REQUIRE(a.store().size() == b.store().size());
  for (int i = 0; i < static_cast<int>(a.store().size()); ++i) {
    const Mat& va = a.store().at(i).value;
    const Mat& vb = b.store().at(i).value;
    REQUIRE(va.size() == vb.size());
    CHECK(std::memcmp(va.data(), vb.data(), sizeof(double) * static_cast<std::size_t>(va.size())) == 0);
  }

  // saving the loaded copy reproduces the file byte for byte
  std::string p2 = tmp_path("ckpt_rt_b.bin");
  save_checkpoint(p2, b.store(), back);
  CHECK(read_bytes(p1) == read_bytes(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("peek reads the header without needing the model") {
  Bundle a(small_cfg());
  CheckpointMeta meta;
  meta.stage = 1;
  meta.seed = 77;
  meta.config = "x=1\n";
  meta.metrics = "m=2\n";
  std::string p = tmp_path("ckpt_peek.bin");
  save_checkpoint(p, a.store(), meta);
  CheckpointMeta got = peek_checkpoint(p);
  CHECK(got.stage == 1);
  CHECK(got.seed == 77);
  CHECK(got.config == "x=1\n");
  CHECK(got.metrics == "m=2\n");
  fs::remove(p);
}

TEST_CASE("malformed containers are rejected") {
  std::string p = tmp_path("ckpt_bad.bin");
  {
    std::ofstream f(p, std::ios::binary);
    f << "definitely not a checkpoint";
  }
  Bundle b(small_cfg());
  CHECK_THROWS_AS(load_checkpoint(p, b.store()), std::runtime_error);
  CHECK_THROWS_AS(peek_checkpoint(p), std::runtime_error);
  CHECK_THROWS_AS(peek_checkpoint(tmp_path("ckpt_nonexistent.bin")), std::runtime_error);

  // a future version number is refused up front
  Bundle a(small_cfg());
  save_checkpoint(p, a.store(), CheckpointMeta{});
  std::string bytes = read_bytes(p);
  bytes[8] = 9;  // version lives right after the magic
  {
    std::ofstream f(p, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  try {
    peek_checkpoint(p);
    FAIL("expected a version error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  fs::remove(p);
}

TEST_CASE("name and shape mismatches are rejected with context") {
  std::string p = tmp_path("ckpt_mismatch.bin");
  // file carries a tau tensor the plain model does not have
  Bundle tau(small_cfg(GazeScheme::kHeatmapTau));
  save_checkpoint(p, tau.store(), CheckpointMeta{});
  Bundle plain(small_cfg(GazeScheme::kCoordPe));
  CHECK_THROWS_AS(load_checkpoint(p, plain.store()), std::runtime_error);

  // same tensor names, different latent count -> shape error
  Bundle a(small_cfg());
  save_checkpoint(p, a.store(), CheckpointMeta{});
  auto wide = small_cfg();
  wide.resampler.n_latents = 8;
  Bundle w(wide);
  try {
    load_checkpoint(p, w.store());
    FAIL("expected a shape error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("shape mismatch") != std::string::npos);
  }
  fs::remove(p);
}

TEST_CASE("a stage-one file seeds a stage-two model when gaps are allowed") {
  std::string p = tmp_path("ckpt_stage1.bin");
  Bundle s1(small_cfg());
  scramble(s1.store(), 5);
  save_checkpoint(p, s1.store(), CheckpointMeta{});

  Bundle s2(small_cfg(GazeScheme::kCoordPe, AdapterKind::kLora));
  // strict load refuses: the file has no adapter tensors
  CHECK_THROWS_AS(load_checkpoint(p, s2.store()), std::runtime_error);
  Mat lora_a_before = s2.store().by_name("lora.0.q.A").value;
  load_checkpoint(p, s2.store(), true);
  // shared tensors took file values, adapters kept their fresh state
  CHECK(s2.store().by_name("resampler.0.w_in").value == s1.store().by_name("resampler.0.w_in").value);
  CHECK(s2.store().by_name("lora.0.q.A").value == lora_a_before);
  CHECK(s2.store().by_name("lora.0.q.B").value.cwiseAbs().maxCoeff() == 0.0);
  fs::remove(p);
}

TEST_CASE("bundle configuration text round trips every field") {
  BundleCfg cfg = small_cfg(GazeScheme::kHeatmapDur, AdapterKind::kLora);
  cfg.host.init_seed = 123;
  cfg.init_seed = 456;
  cfg.gaze.sigma = 0.0625;
  cfg.gaze.tau_init = 2.5;
  cfg.inject.layers = {0};
  cfg.inject.share = true;
  cfg.adapter.lora.alpha = 8.0;
  cfg.gaze_enabled = false;

  BundleCfg back = bundle_cfg_from_kv(bundle_cfg_to_kv(cfg));
  CHECK(back.host.n_layers == cfg.host.n_layers);
  CHECK(back.host.d_model == cfg.host.d_model);
  CHECK(back.host.n_heads == cfg.host.n_heads);
  CHECK(back.host.max_seq == cfg.host.max_seq);
  CHECK(back.host.d_v == cfg.host.d_v);
  CHECK(back.host.init_seed == cfg.host.init_seed);
  CHECK(back.resampler.d_v == cfg.resampler.d_v);
  CHECK(back.resampler.d_l == cfg.resampler.d_l);
  CHECK(back.resampler.d_llm == cfg.resampler.d_llm);
  CHECK(back.resampler.n_latents == cfg.resampler.n_latents);
  CHECK(back.resampler.n_blocks == cfg.resampler.n_blocks);
  CHECK(back.resampler.scheme == cfg.gaze.scheme);
  CHECK(back.gaze.scheme == cfg.gaze.scheme);
  CHECK(back.gaze.sigma == cfg.gaze.sigma);
  CHECK(back.gaze.tau_init == cfg.gaze.tau_init);
  CHECK(back.gaze.grid_h == cfg.gaze.grid_h);
  CHECK(back.gaze.grid_w == cfg.gaze.grid_w);
  CHECK(back.inject.layers == cfg.inject.layers);
  CHECK(back.inject.share == cfg.inject.share);
  CHECK(back.adapter.kind == cfg.adapter.kind);
  CHECK(back.adapter.lora.rank == cfg.adapter.lora.rank);
  CHECK(back.adapter.lora.alpha == cfg.adapter.lora.alpha);
  CHECK(back.init_seed == cfg.init_seed);
  CHECK(back.gaze_enabled == cfg.gaze_enabled);
}

TEST_CASE("scheme labels round trip and unknown labels fail") {
  for (GazeScheme s : {GazeScheme::kCoordPe, GazeScheme::kHeatmapTau, GazeScheme::kHeatmapDur})
    CHECK(scheme_from_label(scheme_label(s)) == s);
  CHECK_THROWS_AS(scheme_from_label("holographic"), std::invalid_argument);
}

TEST_CASE("manifest hashes identify the dataset") {
  GenCfg cfg;
  cfg.seed = 3;
  cfg.n_videos = 4;
  cfg.items_per_video = 2;
  cfg.scene.T = 2;
  cfg.scene.H = 3;
  cfg.scene.W = 3;
  cfg.scene.n_objects = 4;
  cfg.n_fixated = 2;
  cfg.features.d_v = 8;
  Dataset ds = gen_dataset(cfg);
  std::string d1 = tmp_path("mhash_a"), d2 = tmp_path("mhash_b"), d3 = tmp_path("mhash_c");
  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(d3);
  save_dataset(d1, ds);
  save_dataset(d2, ds);
  CHECK(manifest_hash(d1) == manifest_hash(d2));
  cfg.seed = 4;
  save_dataset(d3, gen_dataset(cfg));
  CHECK(manifest_hash(d1) != manifest_hash(d3));
  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(d3);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  Mat row(1, 4);
  row << 1.0, 3.0, 3.0, 2.0;
  CHECK(argmax_row(row) == 1);
  Mat flat = Mat::Zero(1, 4);
  CHECK(argmax_row(flat) == 0);
  Mat rising(1, 4);
  rising << 0.0, 1.0, 2.0, 3.0;
  CHECK(argmax_row(rising) == 3);
}

TEST_CASE("an untrained model scores at chance") {
  GenCfg cfg;
  cfg.seed = 8;
  cfg.n_videos = 60;
  cfg.items_per_video = 5;
  cfg.task_mix = {TaskKind::kFixatedNow};
  cfg.scene.T = 2;
  cfg.scene.H = 3;
  cfg.scene.W = 3;
  cfg.scene.n_objects = 4;
  cfg.features.d_v = 8;
  cfg.n_fixated = 2;
  Runtime rt(gen_dataset(cfg));
  Bundle bundle(small_cfg());
  std::vector<const Item*> all;
  for (const auto& it : rt.dataset().items) all.push_back(&it);
  REQUIRE(all.size() == 300);
  EvalResult ev = evaluate(bundle, rt, all);
  CHECK(ev.n == 300);
  CHECK(ev.micro_acc >= 0.20);
  CHECK(ev.micro_acc <= 0.30);
  CHECK(ev.task_acc.count("fixated_now") == 1);
}
