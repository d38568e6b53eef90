#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "cmfi.hpp"
#include "mgfi.hpp"
#include "objective.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace tvr {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_err);
  return w;
}

bool GradCheckReport::all_below(double tol) const {
  for (const auto& e : entries)
    if (!(e.max_rel_err < tol)) return false;
  return true;
}

namespace {

double rel_gap(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / denom;
}

// Accumulates per-coordinate comparisons for one op at one width.
struct Probe {
  double h;
  double worst = 0.0;
  int probes = 0;

  // Wiggles every slot of x and compares central differences of f against
  // the analytic gradient dx.
  void sweep(const std::function<double()>& f, Tensor& x, const Tensor& dx) {
    for (int i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + h;
      const double hi = f();
      x[i] = keep - h;
      const double lo = f();
      x[i] = keep;
      worst = std::max(worst, rel_gap(dx[i], (hi - lo) / (2.0 * h)));
      ++probes;
    }
  }
  void scalar(const std::function<double(double)>& f, double at, double d) {
    const double hi = f(at + h);
    const double lo = f(at - h);
    worst = std::max(worst, rel_gap(d, (hi - lo) / (2.0 * h)));
    ++probes;
  }
};

Tensor rand_mat(Rng& rng, int r, int c) {
  Tensor t = Tensor::mat(r, c);
  for (int i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

Tensor rand_vec(Rng& rng, int n) {
  Tensor t = Tensor::vec(n);
  for (int i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

double row_variance_floor(const Tensor& t) {
  double lo = 1e300;
  for (int r = 0; r < t.rows(); ++r) {
    double mean = 0.0;
    for (int c = 0; c < t.cols(); ++c) mean += t.at(r, c);
    mean /= t.cols();
    double var = 0.0;
    for (int c = 0; c < t.cols(); ++c) {
      const double d = t.at(r, c) - mean;
      var += d * d;
    }
    lo = std::min(lo, var / t.cols());
  }
  return lo;
}

// Normalization curves sharply when a row is nearly constant; finite
// differences need instances away from that spike.
Tensor spread_mat(Rng& rng, int r, int c) {
  Tensor t = rand_mat(rng, r, c);
  while (row_variance_floor(t) < 0.3) t = rand_mat(rng, r, c);
  return t;
}

Tensor spread_vec(Rng& rng, int n) {
  Tensor t = spread_mat(rng, 1, n);
  Tensor v = Tensor::vec(n);
  for (int i = 0; i < n; ++i) v[i] = t.at(0, i);
  return v;
}

double contract(const Tensor& y, const Tensor& u) {
  double s = 0.0;
  for (int i = 0; i < y.size(); ++i) s += y[i] * u[i];
  return s;
}

void sabotage(Tensor& g) {
  if (g.size() > 0) g[0] += 1.0 + std::abs(g[0]);
}

struct Harness {
  const GradCheckOptions& opts;
  GradCheckReport report;

  bool sabotaged(const std::string& op) const { return opts.sabotage_op == op; }

  void add(const std::string& op, int dim, const Probe& pr) {
    report.entries.push_back({op, dim, pr.probes, pr.worst});
  }
};

void check_matmul(Harness& hs, int c, Rng& rng) {
  Tensor a = rand_mat(rng, 3, c);
  Tensor b = rand_mat(rng, c, 2);
  const Tensor u = rand_mat(rng, 3, 2);
  Tensor da = a, db = b;
  da.fill(0.0);
  db.fill(0.0);
  matmul_backward(a, b, u, &da, &db);
  if (hs.sabotaged("matmul")) sabotage(da);
  Probe pr{hs.opts.step};
  const auto f = [&] { return contract(matmul(a, b), u); };
  pr.sweep(f, a, da);
  pr.sweep(f, b, db);
  hs.add("matmul", c, pr);
}

void check_layer_norm(Harness& hs, int c, Rng& rng) {
  Tensor x = spread_mat(rng, 3, c);
  LayerNormParams p = LayerNormParams::identity(c);
  for (int i = 0; i < c; ++i) {
    p.gain[i] += 0.1 * rng.normal();
    p.bias[i] = 0.1 * rng.normal();
  }
  const Tensor u = rand_mat(rng, 3, c);
  Tensor dx = x;
  dx.fill(0.0);
  LayerNormGrads dp{Tensor::vec(c), Tensor::vec(c)};
  dp.gain.fill(0.0);
  dp.bias.fill(0.0);
  layer_norm_backward(x, p, u, &dx, &dp);
  if (hs.sabotaged("layer_norm")) sabotage(dx);
  Probe pr{hs.opts.step};
  const auto f = [&] { return contract(layer_norm(x, p), u); };
  pr.sweep(f, x, dx);
  pr.sweep(f, p.gain, dp.gain);
  pr.sweep(f, p.bias, dp.bias);
  hs.add("layer_norm", c, pr);
}

void check_softmax(Harness& hs, int c, Rng& rng) {
  Tensor x = rand_mat(rng, 3, c);
  const Tensor u = rand_mat(rng, 3, c);
  Tensor dx = x;
  dx.fill(0.0);
  softmax_backward(softmax(x), u, &dx);
  if (hs.sabotaged("softmax")) sabotage(dx);
  Probe pr{hs.opts.step};
  pr.sweep([&] { return contract(softmax(x), u); }, x, dx);
  hs.add("softmax", c, pr);
}

void check_feed_forward(Harness& hs, int c, Rng& rng) {
  const int h = 2 * c;
  FeedForwardParams p;
  p.w1 = rand_mat(rng, c, h);
  p.b1 = rand_vec(rng, h);
  p.w2 = rand_mat(rng, h, c);
  p.b2 = rand_vec(rng, c);
  p.activation = c % 2 == 0 ? Activation::gelu : Activation::relu;
  Tensor x = rand_mat(rng, 2, c);
  const Tensor u = rand_mat(rng, 2, c);
  Tensor dx = x;
  dx.fill(0.0);
  FeedForwardGrads dp{p.w1, p.b1, p.w2, p.b2};
  dp.w1.fill(0.0);
  dp.b1.fill(0.0);
  dp.w2.fill(0.0);
  dp.b2.fill(0.0);
  feed_forward_backward(x, p, u, &dx, &dp);
  if (hs.sabotaged("feed_forward")) sabotage(dp.w1);
  Probe pr{hs.opts.step};
  const auto f = [&] { return contract(feed_forward(x, p), u); };
  pr.sweep(f, x, dx);
  pr.sweep(f, p.w1, dp.w1);
  pr.sweep(f, p.b1, dp.b1);
  pr.sweep(f, p.w2, dp.w2);
  pr.sweep(f, p.b2, dp.b2);
  hs.add("feed_forward", c, pr);
}

void check_linear(Harness& hs, int c, Rng& rng) {
  Tensor x = rand_mat(rng, 2, c);
  Tensor w = rand_mat(rng, c, c);
  Tensor b = rand_vec(rng, c);
  const Tensor u = rand_mat(rng, 2, c);
  Tensor dx = x, dw = w, db = b;
  dx.fill(0.0);
  dw.fill(0.0);
  db.fill(0.0);
  linear_backward(x, w, u, &dx, &dw, &db);
  if (hs.sabotaged("linear")) sabotage(dw);
  Probe pr{hs.opts.step};
  const auto f = [&] { return contract(linear(x, w, b), u); };
  pr.sweep(f, x, dx);
  pr.sweep(f, w, dw);
  pr.sweep(f, b, db);
  hs.add("linear", c, pr);
}

void check_dot(Harness& hs, int c, Rng& rng) {
  Tensor a = rand_vec(rng, c);
  Tensor b = rand_vec(rng, c);
  Tensor da = a, db = b;
  da.fill(0.0);
  db.fill(0.0);
  dot_backward(a, b, 1.0, &da, &db);
  if (hs.sabotaged("dot")) sabotage(da);
  Probe pr{hs.opts.step};
  const auto f = [&] { return dot(a, b); };
  pr.sweep(f, a, da);
  pr.sweep(f, b, db);
  hs.add("dot", c, pr);
}

void check_cosine(Harness& hs, int c, Rng& rng) {
  Tensor a = spread_vec(rng, c);
  Tensor b = spread_vec(rng, c);
  Tensor da = a, db = b;
  da.fill(0.0);
  db.fill(0.0);
  cosine_backward(a, b, 1.0, &da, &db);
  if (hs.sabotaged("cosine")) sabotage(da);
  Probe pr{hs.opts.step};
  const auto f = [&] { return cosine(a, b); };
  pr.sweep(f, a, da);
  pr.sweep(f, b, db);
  hs.add("cosine", c, pr);
}

void check_row_max(Harness& hs, int c, Rng& rng) {
  // The subgradient only holds while each row keeps its argmax; demand a
  // clear winner per row so the probe step cannot flip one.
  Tensor x = rand_mat(rng, 3, c);
  const auto margin = [&] {
    double lo = 1e300;
    for (int r = 0; r < x.rows(); ++r) {
      double best = -1e300, second = -1e300;
      for (int k = 0; k < x.cols(); ++k) {
        const double v = x.at(r, k);
        if (v > best) {
          second = best;
          best = v;
        } else if (v > second) {
          second = v;
        }
      }
      lo = std::min(lo, c > 1 ? best - second : 1.0);
    }
    return lo;
  };
  while (margin() < 1e-2) x = rand_mat(rng, 3, c);

  const Tensor u = rand_vec(rng, 3);
  RowMax fwd = row_max(x);
  Tensor dx = x;
  dx.fill(0.0);
  row_max_backward(fwd, u, &dx);
  if (hs.sabotaged("row_max")) sabotage(dx);
  Probe pr{hs.opts.step};
  pr.sweep([&] { return contract(row_max(x).values, u); }, x, dx);
  hs.add("row_max", c, pr);
}

TextEmbedding rand_text(Rng& rng, int words, int c) {
  TextEmbedding t;
  t.sentence = spread_vec(rng, c);
  t.words = spread_mat(rng, words, c);
  return t;
}

VideoEmbedding rand_video(Rng& rng, int frames, int c) {
  VideoEmbedding v;
  v.frames = spread_mat(rng, frames, c);
  return v;
}

void check_video_text_head(Harness& hs, int c, Rng& rng) {
  TextEmbedding text = rand_text(rng, 3, c);
  VideoEmbedding video = rand_video(rng, 3, c);
  MgfiParams p = MgfiParams::init(c, rng, 2 * c);
  for (auto& [name, t] : named_tensors(p))
    for (int i = 0; i < t->size(); ++i) (*t)[i] += 0.1 * rng.normal();

  MgfiGrads pg = MgfiGrads::zeros_like(p);
  MgfiDataGrads dg = MgfiDataGrads::zeros_like(text, video);
  mgfi_backward(text, video, p, 1.0, &pg, &dg);
  auto grads = named_tensors(p, pg);
  if (hs.sabotaged("video_text_head")) sabotage(*grads.front().second);

  Probe pr{hs.opts.step};
  const auto f = [&] { return video_text_similarity(text, video, p); };
  auto params = named_tensors(p);
  for (size_t i = 0; i < params.size(); ++i)
    pr.sweep(f, *params[i].second, *grads[i].second);
  pr.sweep(f, text.sentence, dg.sentence);
  pr.sweep(f, text.words, dg.words);
  pr.sweep(f, video.frames, dg.frames);
  hs.add("video_text_head", c, pr);
}

void check_audio_head(Harness& hs, int c, Rng& rng) {
  AudioEmbedding audio;
  audio.audio = spread_vec(rng, c);
  audio.present = true;
  Tensor sentence = spread_vec(rng, c);
  CmfiParams p = CmfiParams::init(c);
  for (auto& [name, t] : named_tensors(p))
    for (int i = 0; i < t->size(); ++i) (*t)[i] += 0.1 * rng.normal();

  CmfiGrads pg = CmfiGrads::zeros_like(p);
  Tensor d_audio = audio.audio;
  Tensor d_sentence = sentence;
  d_audio.fill(0.0);
  d_sentence.fill(0.0);
  cmfi_backward(audio, sentence, p, 1.0, false, &pg, &d_audio, &d_sentence);
  auto grads = named_tensors(p, pg);
  if (hs.sabotaged("audio_head")) sabotage(*grads.front().second);

  Probe pr{hs.opts.step};
  const auto f = [&] { return audio_text_similarity(audio, sentence, p); };
  auto params = named_tensors(p);
  for (size_t i = 0; i < params.size(); ++i)
    pr.sweep(f, *params[i].second, *grads[i].second);
  pr.sweep(f, audio.audio, d_audio);
  pr.sweep(f, sentence, d_sentence);
  hs.add("audio_head", c, pr);
}

void check_objective(Harness& hs, int c, Rng& rng) {
  Dataset ds;
  ds.dim = c;
  for (int i = 0; i < 3; ++i) {
    Item item;
    item.id = "probe" + std::to_string(i);
    item.text = rand_text(rng, 2 + i % 2, c);
    item.video = rand_video(rng, 2 + (i + 1) % 2, c);
    if (i != 1) {
      item.audio.audio = spread_vec(rng, c);
      item.audio.present = true;
    }
    ds.items.push_back(std::move(item));
  }
  MgfiParams mp = MgfiParams::init(c, rng, 2 * c);
  CmfiParams cp = CmfiParams::init(c);
  for (auto& [name, t] : named_tensors(mp))
    for (int i = 0; i < t->size(); ++i) (*t)[i] += 0.1 * rng.normal();
  for (auto& [name, t] : named_tensors(cp))
    for (int i = 0; i < t->size(); ++i) (*t)[i] += 0.1 * rng.normal();

  ObjectiveConfig cfg;
  cfg.temperature = 5.0;  // keeps the batch loss well-conditioned for probing
  const std::vector<int> ix{0, 1, 2};

  MgfiGrads mg = MgfiGrads::zeros_like(mp);
  CmfiGrads cg = CmfiGrads::zeros_like(cp);
  BatchResult br =
      batch_loss_and_grads(ds, ix, mp, cp, cfg, true, &mg, &cg);
  auto mgrads = named_tensors(mp, mg);
  if (hs.sabotaged("objective")) sabotage(*mgrads.front().second);

  Probe pr{hs.opts.step};
  const auto f = [&] {
    return batch_loss_and_grads(ds, ix, mp, cp, cfg, true, nullptr, nullptr)
        .loss;
  };
  auto mparams = named_tensors(mp);
  for (size_t i = 0; i < mparams.size(); ++i)
    pr.sweep(f, *mparams[i].second, *mgrads[i].second);
  auto cparams = named_tensors(cp);
  auto cgrads = named_tensors(cp, cg);
  for (size_t i = 0; i < cparams.size(); ++i)
    pr.sweep(f, *cparams[i].second, *cgrads[i].second);
  pr.scalar(
      [&](double log_tau) {
        ObjectiveConfig probe = cfg;
        probe.temperature = std::exp(log_tau);
        return batch_loss_and_grads(ds, ix, mp, cp, probe, true, nullptr,
                                    nullptr)
            .loss;
      },
      std::log(cfg.temperature), br.d_log_temperature);
  hs.add("objective", c, pr);
}

}  // namespace

GradCheckReport gradcheck_all(std::uint64_t seed, const GradCheckOptions& opts) {
  if (!(opts.step > 0.0)) fail(ErrorCode::usage, "gradcheck: step must be positive");
  if (opts.dims.empty()) fail(ErrorCode::usage, "gradcheck: no widths given");
  for (int c : opts.dims)
    if (c < 2) fail(ErrorCode::usage, "gradcheck: widths must be at least 2");

  Harness hs{opts, {}};
  Rng rng(seed);
  for (int c : opts.dims) {
    check_matmul(hs, c, rng);
    check_layer_norm(hs, c, rng);
    check_softmax(hs, c, rng);
    check_feed_forward(hs, c, rng);
    check_linear(hs, c, rng);
    check_dot(hs, c, rng);
    check_cosine(hs, c, rng);
    check_row_max(hs, c, rng);
    check_video_text_head(hs, c, rng);
    check_audio_head(hs, c, rng);
    check_objective(hs, c, rng);
  }
  return std::move(hs.report);
}

}  // namespace tvr
