#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "core/metrics.hpp"
#include "core/trainer.hpp"
#include "support/checks.hpp"

using namespace tvr;

namespace {

std::string temp_path(const char* tag) {
  return std::string("/tmp/tvr_trainer_") + tag + "_" +
         std::to_string(::getpid());
}

Dataset easy_dataset(int count, int dim, std::uint64_t seed,
                     double audio_fraction = 0.0) {
  SynthConfig cfg = SynthConfig::separable(count, dim, seed);
  cfg.audio_fraction = audio_fraction;
  cfg.audio_informative_fraction = audio_fraction > 0.0 ? 0.5 : 0.0;
  return generate_synthetic(cfg);
}

template <typename A, typename B>
bool same_tensors(const A& a, const B& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) return false;
    if (!a[i].second->same_shape(*b[i].second)) return false;
    for (int k = 0; k < a[i].second->size(); ++k)
      if ((*a[i].second)[k] != (*b[i].second)[k]) return false;
  }
  return true;
}

bool same_model(const Model& a, const Model& b) {
  return a.dim == b.dim && a.log_temperature == b.log_temperature &&
         same_tensors(named_tensors(a.mgfi), named_tensors(b.mgfi)) &&
         same_tensors(named_tensors(a.cmfi), named_tensors(b.cmfi));
}

std::string file_contents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TrainConfig quick_config(Stage stage, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.stage = stage;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("zero gradients leave only the decoupled decay") {
  AdamWConfig ac;
  ac.weight_decay = 0.01;
  AdamW opt(ac);
  Rng rng(5);
  Tensor p = testsup::random_vec(rng, 6);
  Tensor expect = p;
  Tensor zero = p;
  zero.fill(0.0);
  const double lr = 0.003;
  for (int step = 0; step < 7; ++step) {
    opt.begin_step();
    opt.update("p", p, zero, lr);
    for (int i = 0; i < expect.size(); ++i)
      expect[i] -= lr * (0.0 / (0.0 + ac.epsilon) + ac.weight_decay * expect[i]);
  }
  for (int i = 0; i < p.size(); ++i) CHECK(p[i] == expect[i]);
  CHECK(opt.step_count() == 7);
}

TEST_CASE("the optimizer minimizes a one-dimensional quadratic") {
  AdamWConfig ac;
  ac.weight_decay = 0.0;
  AdamW opt(ac);
  Tensor x = Tensor::vec(1);
  x[0] = -4.0;
  Tensor g = Tensor::vec(1);
  for (int step = 0; step < 600; ++step) {
    g[0] = 2.0 * (x[0] - 3.0);
    opt.begin_step();
    opt.update("x", x, g, 0.05);
  }
  CHECK(std::abs(x[0] - 3.0) < 1e-3);
}

TEST_CASE("bias correction makes the first step learning-rate sized") {
  // After one update the step is lr * g / (|g| + eps), so its size barely
  // depends on the gradient scale.
  for (double scale : {1e-6, 1.0, 1e3}) {
    AdamWConfig ac;
    ac.weight_decay = 0.0;
    AdamW opt(ac);
    Tensor x = Tensor::vec(1);
    x[0] = 0.0;
    Tensor g = Tensor::vec(1);
    g[0] = scale;
    opt.begin_step();
    opt.update("x", x, g, 0.01);
    CHECK(x[0] < 0.0);
    CHECK(std::abs(x[0]) == doctest::Approx(0.01).epsilon(0.02));
  }
}

TEST_CASE("the optimizer rejects misuse") {
  AdamWConfig bad;
  bad.beta1 = 1.0;
  CHECK_THROWS_WITH_AS(AdamW{bad}, doctest::Contains("betas"), Error);
  bad = AdamWConfig{};
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(AdamW{bad}, Error);
  bad = AdamWConfig{};
  bad.weight_decay = -0.1;
  CHECK_THROWS_AS(AdamW{bad}, Error);

  AdamW opt{AdamWConfig{}};
  Tensor p = Tensor::vec(2);
  CHECK_THROWS_WITH_AS(opt.update("p", p, p, 0.1),
                       doctest::Contains("begin_step"), Error);
  opt.begin_step();
  Tensor wrong = Tensor::vec(3);
  try {
    opt.update("p", p, wrong, 0.1);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::dimension);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  Dataset ds = easy_dataset(12, 8, 21);
  Model base = init_model(8, 77);
  TrainConfig cfg = quick_config(Stage::vt, 5);

  Model a = base;
  Model b = base;
  TrainResult ra = train(a, ds, cfg);
  TrainResult rb = train(b, ds, cfg);
  CHECK(same_model(a, b));
  REQUIRE(ra.steps.size() == rb.steps.size());
  for (size_t i = 0; i < ra.steps.size(); ++i)
    CHECK(ra.steps[i].loss == rb.steps[i].loss);

  Model c = base;
  TrainConfig other = cfg;
  other.seed = 6;
  TrainResult rc = train(c, ds, other);
  bool any_diff = false;
  for (size_t i = 0; i < std::min(ra.steps.size(), rc.steps.size()); ++i)
    if (ra.steps[i].loss != rc.steps[i].loss) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("loss falls on a separable dataset") {
  Dataset ds = easy_dataset(16, 12, 3);
  Model m = init_model(12, 9);
  TrainConfig cfg = quick_config(Stage::vt, 1);
  cfg.epochs = 4;
  TrainResult res = train(m, ds, cfg);
  REQUIRE(res.steps_run == 16);
  CHECK(res.skipped == 0);
  CHECK(res.last_loss < res.first_loss);
  CHECK(m.stage_marker == 1);
}

TEST_CASE("the video-text stage never touches the audio head") {
  Dataset ds = easy_dataset(8, 6, 11, 0.8);
  Model m = init_model(6, 13);
  const Model before = m;
  train(m, ds, quick_config(Stage::vt, 2));
  CHECK(same_tensors(named_tensors(m.cmfi), named_tensors(before.cmfi)));
  CHECK_FALSE(same_tensors(named_tensors(m.mgfi), named_tensors(before.mgfi)));
}

TEST_CASE("the audio stage freezes the video-text head") {
  Dataset ds = easy_dataset(8, 6, 11, 0.8);
  Model m = init_model(6, 13);
  train(m, ds, quick_config(Stage::vt, 2));
  const Model after_vt = m;
  train(m, ds, quick_config(Stage::audio, 3));
  CHECK(same_tensors(named_tensors(m.mgfi), named_tensors(after_vt.mgfi)));
  CHECK_FALSE(same_tensors(named_tensors(m.cmfi), named_tensors(after_vt.cmfi)));
  CHECK(m.stage_marker == 2);

  // Opting in unfreezes it.
  Model n = init_model(6, 13);
  TrainConfig both = quick_config(Stage::audio, 3);
  both.train_mgfi_in_audio_stage = true;
  train(n, ds, both);
  CHECK_FALSE(same_tensors(named_tensors(n.mgfi), named_tensors(after_vt.mgfi)));
}

TEST_CASE("an audio stage without audio applies only weight decay") {
  Dataset ds = easy_dataset(6, 5, 31, 0.0);
  TrainConfig cfg = quick_config(Stage::audio, 4);
  cfg.batch_size = 3;

  // No decay: the audio head cannot move at all.
  Model frozen = init_model(5, 1);
  const Model start = frozen;
  TrainConfig no_decay = cfg;
  no_decay.adamw.weight_decay = 0.0;
  TrainResult res = train(frozen, ds, no_decay);
  CHECK(res.steps_run == 4);
  CHECK(same_tensors(named_tensors(frozen.cmfi), named_tensors(start.cmfi)));

  // With decay the update is a pure shrink; replay it with a second optimizer
  // fed zero gradients.
  Model decayed = init_model(5, 1);
  train(decayed, ds, cfg);
  CmfiParams expect = CmfiParams::init(5);
  AdamW oracle(cfg.adamw);
  for (int step = 0; step < res.steps_run; ++step) {
    oracle.begin_step();
    for (auto& [name, t] : named_tensors(expect)) {
      Tensor zero = *t;
      zero.fill(0.0);
      oracle.update(name, *t, zero, cfg.lr_cmfi);
    }
  }
  CHECK(same_tensors(named_tensors(decayed.cmfi), named_tensors(expect)));
}

TEST_CASE("the final partial batch still counts") {
  Dataset ds = easy_dataset(10, 6, 17);
  Model m = init_model(6, 2);
  TrainConfig cfg = quick_config(Stage::vt, 8);
  cfg.epochs = 1;
  TrainResult res = train(m, ds, cfg);
  CHECK(res.steps_run == 3);  // 4 + 4 + 2 items
  for (int i = 0; i < 3; ++i) {
    CHECK(res.steps[i].step == i + 1);
    CHECK(res.steps[i].epoch == 0);
    CHECK(res.steps[i].stage == Stage::vt);
  }
}

TEST_CASE("zero epochs change nothing, marker included") {
  Dataset ds = easy_dataset(6, 5, 19);
  Model m = init_model(5, 23);
  const Model before = m;
  TrainConfig cfg = quick_config(Stage::vt, 1);
  cfg.epochs = 0;
  TrainResult res = train(m, ds, cfg);
  CHECK(res.steps_run == 0);
  CHECK(same_model(m, before));
  CHECK(m.stage_marker == 0);
}

TEST_CASE("a step cap stops training mid-epoch") {
  Dataset ds = easy_dataset(10, 6, 17);
  Model m = init_model(6, 2);
  TrainConfig cfg = quick_config(Stage::vt, 8);
  cfg.epochs = 5;
  cfg.max_steps = 4;
  TrainResult res = train(m, ds, cfg);
  CHECK(res.steps_run == 4);
  CHECK(res.steps.back().epoch == 1);
}

TEST_CASE("checkpoints round-trip through the narrowed payload") {
  Rng rng(91);
  Model m = init_model(7, 19);
  m.stage_marker = 1;
  m.log_temperature = std::log(42.0);
  for (auto& [name, t] : named_tensors(m.mgfi))
    for (int i = 0; i < t->size(); ++i) (*t)[i] += 0.05 * rng.normal();
  for (auto& [name, t] : named_tensors(m.cmfi))
    for (int i = 0; i < t->size(); ++i) (*t)[i] += 0.05 * rng.normal();

  const std::string p1 = temp_path("rt1");
  const std::string p2 = temp_path("rt2");
  save_model(m, p1);
  Model back = load_model(p1);
  CHECK(back.dim == 7);
  CHECK(back.stage_marker == 1);
  CHECK(back.log_temperature ==
        static_cast<double>(static_cast<float>(m.log_temperature)));

  auto orig = named_tensors(m.mgfi);
  auto load = named_tensors(back.mgfi);
  REQUIRE(orig.size() == load.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    CHECK(orig[i].first == load[i].first);
    REQUIRE(orig[i].second->same_shape(*load[i].second));
    for (int k = 0; k < orig[i].second->size(); ++k)
      CHECK((*load[i].second)[k] ==
            static_cast<double>(static_cast<float>((*orig[i].second)[k])));
  }

  // A second save of the loaded model is byte-identical: narrowing already
  // happened, so the payload is a fixed point.
  save_model(back, p2);
  CHECK(file_contents(p1) == file_contents(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoints keep split word-branch parameters") {
  Rng rng(23);
  Model m = init_model(5, 37);
  m.mgfi.unshare_query();
  m.mgfi.unshare_ff();
  for (auto& [name, t] : named_tensors(m.mgfi))
    for (int i = 0; i < t->size(); ++i) (*t)[i] += 0.03 * rng.normal();

  const std::string path = temp_path("split");
  save_model(m, path);
  Model back = load_model(path);
  CHECK_FALSE(back.mgfi.share_query_across_granularities);
  CHECK_FALSE(back.mgfi.share_ff_across_granularities);
  auto orig = named_tensors(m.mgfi);
  auto load = named_tensors(back.mgfi);
  REQUIRE(orig.size() == load.size());
  for (size_t i = 0; i < orig.size(); ++i) CHECK(orig[i].first == load[i].first);
  std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoints are rejected") {
  Model m = init_model(4, 3);
  const std::string path = temp_path("bad");
  save_model(m, path);
  const std::string good = file_contents(path);

  auto expect_format = [&](const std::string& bytes) {
    write_bytes(path, bytes);
    try {
      load_model(path);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::format);
    }
  };

  std::string bad = good;
  bad[0] = 'X';
  expect_format(bad);

  expect_format(good.substr(0, good.size() - 5));
  expect_format(good.substr(0, 10));

  bad = good;
  const size_t wk = bad.find("mgfi.wk");
  REQUIRE(wk != std::string::npos);
  bad[wk + 6] = 'x';
  expect_format(bad);

  bad = good;
  const size_t act = bad.find("mgfi.ff.activation");
  REQUIRE(act != std::string::npos);
  // name, rank(4), one dim(4), then the payload
  const size_t payload = act + std::string("mgfi.ff.activation").size() + 8;
  bad[payload] = '\x7f';
  expect_format(bad);

  expect_format(good + "tail");

  std::remove(path.c_str());
  try {
    load_model(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io);
  }
}

TEST_CASE("the run log mirrors the step records") {
  Dataset ds = easy_dataset(8, 6, 29);
  Model m = init_model(6, 41);
  TrainConfig cfg = quick_config(Stage::vt, 31);
  cfg.epochs = 1;
  cfg.log_path = temp_path("log");
  TrainResult res = train(m, ds, cfg);

  std::ifstream in(cfg.log_path);
  REQUIRE(bool(in));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == res.steps.size());
  char expect[160];
  for (size_t i = 0; i < lines.size(); ++i) {
    const StepRecord& r = res.steps[i];
    std::snprintf(expect, sizeof expect,
                  "step %d stage %s epoch %d loss %.17g t2v %.2f v2t %.2f",
                  r.step, stage_name(r.stage), r.epoch, r.loss, r.t2v_r1,
                  r.v2t_r1);
    CHECK(lines[i] == expect);
  }
  std::remove(cfg.log_path.c_str());
}

TEST_CASE("degenerate batches are skipped, not fatal") {
  Dataset ds = easy_dataset(8, 6, 47);
  ds.items[3].text.sentence.fill(0.0);  // cosine against this text blows up
  Model m = init_model(6, 53);
  TrainConfig cfg = quick_config(Stage::vt, 59);
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.log_path = temp_path("skiplog");
  TrainResult res = train(m, ds, cfg);
  CHECK(res.skipped == 1);
  CHECK(res.steps_run == 3);

  std::ifstream in(cfg.log_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str().find("skipped degenerate") != std::string::npos);
  std::remove(cfg.log_path.c_str());
}

TEST_CASE("a learnable temperature moves during training") {
  Dataset ds = easy_dataset(8, 6, 61);
  Model m = init_model(6, 67);
  const double start = m.log_temperature;
  TrainConfig cfg = quick_config(Stage::vt, 71);
  cfg.learn_temperature = true;
  train(m, ds, cfg);
  CHECK(m.log_temperature != start);
  CHECK(std::isfinite(m.log_temperature));

  // Without the flag the temperature is pinned to the configured value.
  Model n = init_model(6, 67);
  TrainConfig pinned = quick_config(Stage::vt, 71);
  pinned.objective.temperature = 25.0;
  train(n, ds, pinned);
  CHECK(n.log_temperature == std::log(25.0));
}

TEST_CASE("training rejects malformed inputs") {
  Dataset ds = easy_dataset(4, 6, 73);
  Model m = init_model(5, 79);
  try {
    train(m, ds, quick_config(Stage::vt, 1));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::dimension);
  }

  Model ok = init_model(6, 79);
  Dataset empty;
  empty.dim = 6;
  CHECK_THROWS_AS(train(ok, empty, quick_config(Stage::vt, 1)), Error);

  TrainConfig bad = quick_config(Stage::vt, 1);
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(ok, ds, bad), Error);
  bad = quick_config(Stage::vt, 1);
  bad.lr_mgfi = 0.0;
  CHECK_THROWS_AS(train(ok, ds, bad), Error);
  bad = quick_config(Stage::vt, 1);
  bad.adamw.beta2 = 1.5;
  CHECK_THROWS_AS(train(ok, ds, bad), Error);
}

TEST_CASE("stage names") {
  CHECK(std::string(stage_name(Stage::vt)) == "vt");
  CHECK(std::string(stage_name(Stage::audio)) == "audio");
}
