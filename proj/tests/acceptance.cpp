// Release gate. Eight go/no-go checks over the whole stack, from gradient
// audits to two-stage training quality, each printing a single PASS/FAIL
// line. The process exits nonzero if any check fails, so CI can gate on it
// directly. Tolerances are pinned here as named constants; loosening one is
// a reviewed change, not a local edit.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "core/cmfi.hpp"
#include "core/embeddings.hpp"
#include "core/gradcheck.hpp"
#include "core/metrics.hpp"
#include "core/mgfi.hpp"
#include "core/objective.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "core/trainer.hpp"

namespace fs = std::filesystem;
using namespace tvr;

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSeconds = 60.0;
constexpr double kLossIdentityTol = 1e-10;
constexpr double kSoftmaxRowTol = 1e-12;
constexpr double kPermutationTol = 1e-12;
constexpr double kRecallFloor = 90.0;
constexpr double kTrainBudgetSeconds = 300.0;
constexpr double kAblationGapPoints = 2.0;
constexpr double kWorkerAgreementTol = 1e-9;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

Tensor random_mat(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Tensor m = Tensor::mat(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

Tensor random_vec(Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
  Tensor v = Tensor::vec(n);
  for (double& x : v.data()) x = rng.uniform(lo, hi);
  return v;
}

std::vector<int> all_indices(const Dataset& ds) {
  std::vector<int> idx(ds.count());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return idx;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

template <typename A, typename B>
bool bitwise_equal(const A& a, const B& b) {
  if (a.size() != b.size()) return false;
  for (size_t t = 0; t < a.size(); ++t) {
    const Tensor& x = *a[t].second;
    const Tensor& y = *b[t].second;
    if (a[t].first != b[t].first || x.size() != y.size()) return false;
    for (int i = 0; i < x.size(); ++i)
      if (x[i] != y[i]) return false;
  }
  return true;
}

// ---- criterion 1: gradient audit ----

bool gradient_audit(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport rep = gradcheck_all(2024);
  const double secs = seconds_since(t0);
  const bool clean = rep.all_below(kGradTol);
  // 11 parameterized ops, each probed at widths 2, 4 and 8.
  const bool complete = rep.entries.size() == 33;
  detail = fmt("worst %.3g over %zu checks in %.1f s (tolerance %g, budget %g s)",
               rep.worst(), rep.entries.size(), secs, kGradTol,
               kGradBudgetSeconds);
  return clean && complete && secs < kGradBudgetSeconds;
}

// ---- criterion 2: contrastive loss identities ----

bool loss_identities(std::string& detail) {
  // A single pair can only match itself.
  Tensor lone = Tensor::mat(1, 1);
  lone.fill(0.37);
  const double single = std::abs(infonce_loss(lone));

  // Uniform scores carry no signal: both directions sit at ln B.
  double uniform_gap = 0.0;
  for (int b : {2, 4, 8, 32})
    for (double c : {0.37, 123.0}) {
      Tensor s = Tensor::mat(b, b);
      s.fill(c);
      uniform_gap = std::max(
          uniform_gap, std::abs(infonce_loss(s) - 2.0 * std::log(double(b))));
    }

  // Adding a constant to every score cancels inside each softmax.
  Rng rng(91);
  Tensor s = random_mat(rng, 8, 8, -3.0, 3.0);
  Tensor shifted = s;
  for (double& v : shifted.data()) v += 3.7;
  const double shift_gap = std::abs(infonce_loss(s) - infonce_loss(shifted));

  double row_gap = 0.0;
  const Tensor y = softmax(random_mat(rng, 16, 16, -30.0, 30.0));
  for (int r = 0; r < y.rows(); ++r) {
    double sum = 0.0;
    for (double v : y.row(r)) sum += v;
    row_gap = std::max(row_gap, std::abs(sum - 1.0));
  }

  detail = fmt("single %.2g, uniform gap %.2g, shift gap %.2g, row-sum gap %.2g",
               single, uniform_gap, shift_gap, row_gap);
  return single <= kSoftmaxRowTol && uniform_gap <= kLossIdentityTol &&
         shift_gap <= kLossIdentityTol && row_gap <= kSoftmaxRowTol;
}

// ---- criterion 3: pooling is order-free ----

Tensor permute_rows(const Tensor& m, const std::vector<int>& perm) {
  Tensor out = Tensor::mat(m.rows(), m.cols());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out.at(r, c) = m.at(perm[r], c);
  return out;
}

bool permutation_invariance(std::string& detail) {
  Rng rng(77);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const int c = 4 + 2 * (inst % 5);
    TextEmbedding text{random_vec(rng, c),
                       random_mat(rng, rng.uniform_int(2, 6), c)};
    VideoEmbedding video{random_mat(rng, rng.uniform_int(2, 7), c)};

    MgfiParams p = MgfiParams::init(c, rng);
    for (auto& [name, t] : named_tensors(p))
      for (double& v : t->data()) v += rng.uniform(-0.3, 0.3);

    const PooledVideo before = mgfi_pool(text, video, p);
    const double sim_before = video_text_similarity(text, video, p);

    VideoEmbedding shuffled_video{
        permute_rows(video.frames, rng.permutation(video.frame_count()))};
    TextEmbedding shuffled_text{
        text.sentence,
        permute_rows(text.words, rng.permutation(text.word_count()))};

    const PooledVideo after = mgfi_pool(shuffled_text, shuffled_video, p);
    const double sim_after =
        video_text_similarity(shuffled_text, shuffled_video, p);

    worst = std::max({worst, max_abs_diff(before.o1, after.o1),
                      max_abs_diff(before.o2, after.o2),
                      max_abs_diff(before.o, after.o),
                      std::abs(sim_before - sim_after)});
  }
  detail = fmt("worst drift %.3g across 100 instances (tolerance %g)", worst,
               kPermutationTol);
  return worst < kPermutationTol;
}

// ---- criterion 4: retrieval metrics against a sort oracle ----

// Independent rank rule: sort a copy descending and find the first slot the
// truth's score reaches. Ties resolve in the truth's favor either way.
int oracle_rank(std::span<const double> scores, int truth) {
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  for (size_t k = 0; k < sorted.size(); ++k)
    if (sorted[k] <= scores[truth]) return static_cast<int>(k) + 1;
  return static_cast<int>(sorted.size());
}

bool metrics_against_oracle(std::string& detail) {
  Rng rng(4040);
  const int n = 64;
  int mismatches = 0;
  double summary_gap = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor s = random_mat(rng, n, n);
    for (Direction dir : {Direction::t2v, Direction::v2t}) {
      const RetrievalReport rep = evaluate(s, dir);
      std::vector<int> ranks(n);
      for (int q = 0; q < n; ++q) {
        std::vector<double> candidates(n);
        for (int i = 0; i < n; ++i)
          candidates[i] = dir == Direction::t2v ? s.at(i, q) : s.at(q, i);
        ranks[q] = oracle_rank(candidates, q);
        if (rep.ranks[q] != ranks[q]) ++mismatches;
      }
      int in1 = 0, in5 = 0, in10 = 0;
      double sum = 0.0;
      for (int r : ranks) {
        in1 += r <= 1;
        in5 += r <= 5;
        in10 += r <= 10;
        sum += r;
      }
      std::vector<int> order = ranks;
      std::sort(order.begin(), order.end());
      const double median = 0.5 * (order[n / 2 - 1] + order[n / 2]);
      summary_gap = std::max(
          {summary_gap, std::abs(rep.r1 - 100.0 * in1 / n),
           std::abs(rep.r5 - 100.0 * in5 / n),
           std::abs(rep.r10 - 100.0 * in10 / n),
           std::abs(rep.median_rank - median),
           std::abs(rep.mean_rank - sum / n)});
    }
  }

  // A strictly dominant diagonal must score perfectly in both directions.
  Tensor ideal = random_mat(rng, n, n);
  for (int i = 0; i < n; ++i) ideal.at(i, i) = 10.0 + i;
  bool perfect = true;
  for (Direction dir : {Direction::t2v, Direction::v2t}) {
    const RetrievalReport rep = evaluate(ideal, dir);
    perfect = perfect && rep.r1 == 100.0 && rep.median_rank == 1.0 &&
              rep.mean_rank == 1.0;
  }

  detail = fmt("%d rank mismatches over 200 matrices, summary gap %.3g, "
               "dominant diagonal %s",
               mismatches, summary_gap, perfect ? "perfect" : "imperfect");
  return mismatches == 0 && summary_gap == 0.0 && perfect;
}

// ---- criterion 5: training lifts retrieval on synthetic data ----

bool synthetic_training(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.count = 256;
  sc.dim = 64;
  sc.seed = 1;
  const Dataset ds = generate_synthetic(sc);

  Model model = init_model(sc.dim, 1);
  TrainConfig tc;
  tc.stage = Stage::vt;
  tc.epochs = 50;
  tc.batch_size = 32;
  tc.max_steps = 300;
  tc.seed = 1;
  const TrainResult tr = train(model, ds, tc);

  const ObjectiveConfig oc;
  const Tensor fused =
      fused_similarity(ds, all_indices(ds), model.mgfi, model.cmfi, oc);
  const RetrievalReport rep = evaluate(fused, Direction::t2v);
  const double secs = seconds_since(t0);
  detail = fmt("t2v r1 %.2f after %d steps in %.0f s (floor %g, budget %g s)",
               rep.r1, tr.steps_run, secs, kRecallFloor, kTrainBudgetSeconds);
  return tr.steps_run <= 300 && rep.r1 >= kRecallFloor &&
         secs < kTrainBudgetSeconds;
}

// ---- criteria 6 and 7 share five seeded two-stage runs ----

struct TwoStageOutcome {
  // Full-set t2v R@1 per seed, one slot per score assembly.
  std::array<double, 5> base{}, sf{}, wf{}, as{}, full{};
  std::array<double, 5> stage2_delta{};  // last minus first fused loss
  bool mgfi_frozen = true;
  bool steps_ok = true;
};

double median5(std::array<double, 5> v) {
  std::sort(v.begin(), v.end());
  return v[2];
}

const TwoStageOutcome& two_stage_runs() {
  static const TwoStageOutcome outcome = [] {
    TwoStageOutcome out;
    for (int k = 0; k < 5; ++k) {
      const std::uint64_t seed = k + 1;
      SynthConfig sc;
      sc.count = 128;
      sc.dim = 48;
      sc.audio_fraction = 0.6;
      sc.audio_informative_fraction = 0.5;
      sc.seed = seed;
      const Dataset ds = generate_synthetic(sc);

      Model model = init_model(sc.dim, seed);
      TrainConfig vt;
      vt.stage = Stage::vt;
      vt.epochs = 60;
      vt.batch_size = 32;
      vt.max_steps = 150;
      vt.seed = seed;
      const TrainResult t1 = train(model, ds, vt);

      const MgfiParams before = model.mgfi;
      TrainConfig audio = vt;
      audio.stage = Stage::audio;
      audio.max_steps = 60;
      audio.seed = seed + 100;
      const TrainResult t2 = train(model, ds, audio);

      out.mgfi_frozen = out.mgfi_frozen &&
                        bitwise_equal(named_tensors(before),
                                      named_tensors(model.mgfi));
      out.stage2_delta[k] = t2.last_loss - t2.first_loss;
      out.steps_ok = out.steps_ok && t1.steps_run == 150 && t2.steps_run == 60;

      const ObjectiveConfig oc;
      const ScoreComponents comps = score_components(
          ds, all_indices(ds), model.mgfi, model.cmfi, oc);
      const auto r1 = [&](bool s, bool w, bool a) {
        const Tensor scores = assemble_scores(comps, ScoreMask{s, w, a}, oc);
        return evaluate(scores, Direction::t2v).r1;
      };
      out.base[k] = r1(false, false, false);
      out.sf[k] = r1(true, false, false);
      out.wf[k] = r1(false, true, false);
      out.as[k] = r1(false, false, true);
      out.full[k] = r1(true, true, true);
    }
    return out;
  }();
  return outcome;
}

bool ablation_ordering(std::string& detail) {
  const TwoStageOutcome& out = two_stage_runs();
  const double base = median5(out.base);
  const double sf = median5(out.sf);
  const double wf = median5(out.wf);
  const double as = median5(out.as);
  const double full = median5(out.full);
  const double floor = kAblationGapPoints;
  detail = fmt("median t2v r1: base %.2f, s-f %.2f, w-f %.2f, a-s %.2f, "
               "full %.2f (each required gap %g points)",
               base, sf, wf, as, full, floor);
  return out.steps_ok && sf - base >= floor && wf - base >= floor &&
         full - sf >= floor && full - wf >= floor && full - as >= floor;
}

bool staged_training_contract(std::string& detail) {
  const TwoStageOutcome& out = two_stage_runs();
  const double delta = median5(out.stage2_delta);
  detail = fmt("video-text head %s during the audio stage, median fused loss "
               "delta %.3g",
               out.mgfi_frozen ? "bit-stable" : "drifted", delta);
  return out.mgfi_frozen && delta <= 0.0;
}

// ---- criterion 8: determinism ----

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct PipelineArtifacts {
  std::string vt_checkpoint;
  std::string full_checkpoint;
  std::string report;
};

PipelineArtifacts run_pipeline(const fs::path& dir) {
  fs::create_directories(dir);
  SynthConfig sc;
  sc.count = 64;
  sc.dim = 32;
  sc.audio_fraction = 0.5;
  sc.audio_informative_fraction = 0.5;
  sc.seed = 11;
  const Dataset ds = generate_synthetic(sc);

  Model model = init_model(sc.dim, 11);
  TrainConfig vt;
  vt.stage = Stage::vt;
  vt.epochs = 8;
  vt.batch_size = 16;
  vt.seed = 11;
  train(model, ds, vt);
  const fs::path p1 = dir / "vt.ckpt";
  save_model(model, p1.string());

  TrainConfig audio = vt;
  audio.stage = Stage::audio;
  audio.epochs = 4;
  audio.seed = 111;
  train(model, ds, audio);
  const fs::path p2 = dir / "full.ckpt";
  save_model(model, p2.string());

  const ObjectiveConfig oc;
  const Tensor fused =
      fused_similarity(ds, all_indices(ds), model.mgfi, model.cmfi, oc);
  std::string report;
  for (Direction dir_ : {Direction::t2v, Direction::v2t}) {
    const RetrievalReport rep = evaluate(fused, dir_);
    report += fmt("%s r1 %.2f r5 %.2f r10 %.2f mdr %.1f mnr %.2f\n",
                  dir_ == Direction::t2v ? "t2v" : "v2t", rep.r1, rep.r5,
                  rep.r10, rep.median_rank, rep.mean_rank);
  }
  return {file_bytes(p1), file_bytes(p2), report};
}

bool determinism(std::string& detail) {
  const fs::path root =
      fs::temp_directory_path() / "tvr_acceptance_determinism";
  fs::remove_all(root);
  const PipelineArtifacts a = run_pipeline(root / "a");
  const PipelineArtifacts b = run_pipeline(root / "b");
  const bool checkpoints_equal = !a.vt_checkpoint.empty() &&
                                 a.vt_checkpoint == b.vt_checkpoint &&
                                 a.full_checkpoint == b.full_checkpoint;
  const bool reports_equal = a.report == b.report;

  // Scoring sharded across threads must agree with the sequential path.
  SynthConfig sc;
  sc.count = 48;
  sc.dim = 24;
  sc.audio_fraction = 0.5;
  sc.audio_informative_fraction = 0.5;
  sc.seed = 21;
  const Dataset ds = generate_synthetic(sc);
  const Model model = init_model(sc.dim, 21);
  ObjectiveConfig sequential;
  ObjectiveConfig sharded;
  sharded.workers = 4;
  const Tensor f1 =
      fused_similarity(ds, all_indices(ds), model.mgfi, model.cmfi, sequential);
  const Tensor f4 =
      fused_similarity(ds, all_indices(ds), model.mgfi, model.cmfi, sharded);
  const double worker_gap = max_abs_diff(f1, f4);

  fs::remove_all(root);
  detail = fmt("checkpoints %s, reports %s, worker gap %.3g (tolerance %g)",
               checkpoints_equal ? "identical" : "diverged",
               reports_equal ? "identical" : "diverged", worker_gap,
               kWorkerAgreementTol);
  return checkpoints_equal && reports_equal &&
         worker_gap <= kWorkerAgreementTol;
}

}  // namespace

int main() {
  struct Check {
    const char* title;
    bool (*fn)(std::string&);
  };
  const Check checks[] = {
      {"gradient audit", gradient_audit},
      {"loss identities", loss_identities},
      {"permutation invariance", permutation_invariance},
      {"metrics vs sort oracle", metrics_against_oracle},
      {"synthetic training quality", synthetic_training},
      {"ablation ordering", ablation_ordering},
      {"staged training contract", staged_training_contract},
      {"determinism", determinism},
  };
  bool all = true;
  int id = 0;
  for (const Check& check : checks) {
    ++id;
    std::string detail;
    const bool ok = check.fn(detail);
    all = all && ok;
    std::printf("criterion %d %s %s: %s\n", id, ok ? "PASS" : "FAIL",
                check.title, detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance %s\n", all ? "PASS" : "FAIL");
  return all ? 0 : 1;
}
