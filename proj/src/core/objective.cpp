#include "objective.hpp"

#include <cmath>
#include <exception>
#include <thread>

namespace tvr {

namespace {

// Runs fn(row, slot) for every row, optionally across threads. Rows are
// dealt round-robin; each slot sees its rows in ascending order, and slot
// buffers are reduced by the caller in slot order, so results depend only on
// the worker count, not on scheduling.
template <typename F>
void parallel_rows(int n, int workers, F&& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::exception_ptr> errs(workers);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w)
    threads.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i, w);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

void check_batch(const Dataset& ds, std::span<const int> indices,
                 const MgfiParams& mgfi, const CmfiParams& cmfi) {
  if (indices.empty()) fail(ErrorCode::usage, "empty batch");
  if (ds.dim != mgfi.dim() || ds.dim != cmfi.dim())
    fail(ErrorCode::dimension, "dataset width does not match model");
  for (int ix : indices)
    if (ix < 0 || ix >= static_cast<int>(ds.items.size()))
      fail(ErrorCode::usage, "batch index out of range");
}

[[noreturn]] void rethrow_with_pair(const Error& e, const Item& video,
                                    const Item& text) {
  fail(e.code(), std::string(e.what()) + " (video item " + video.id +
                     ", text item " + text.id + ")");
}

void accumulate(const MgfiParams& p, MgfiGrads& dst, MgfiGrads& src) {
  auto a = named_tensors(p, dst);
  auto b = named_tensors(p, src);
  for (size_t i = 0; i < a.size(); ++i) axpy(1.0, *b[i].second, *a[i].second);
}

void accumulate(const CmfiParams& p, CmfiGrads& dst, CmfiGrads& src) {
  auto a = named_tensors(p, dst);
  auto b = named_tensors(p, src);
  for (size_t i = 0; i < a.size(); ++i) axpy(1.0, *b[i].second, *a[i].second);
}

}  // namespace

void ObjectiveConfig::validate() const {
  if (!(temperature > 0.0))
    fail(ErrorCode::usage, "temperature must be positive");
  if (!(audio_weight >= 0.0))
    fail(ErrorCode::usage, "audio weight must be nonnegative");
  if (workers < 1) fail(ErrorCode::usage, "workers must be at least 1");
}

ScoreComponents score_components(const Dataset& ds, std::span<const int> indices,
                                 const MgfiParams& mgfi, const CmfiParams& cmfi,
                                 const ObjectiveConfig& cfg) {
  cfg.validate();
  check_batch(ds, indices, mgfi, cmfi);
  const int b = static_cast<int>(indices.size());

  std::vector<TextCtx> tcs(b);
  std::vector<VideoCtx> vcs(b);
  std::vector<Tensor> means(b);
  for (int i = 0; i < b; ++i) {
    const Item& it = ds.items[indices[i]];
    tcs[i] = make_text_ctx(it.text, mgfi);
    vcs[i] = make_video_ctx(it.video, mgfi);
    means[i] = mean_rows(it.video.frames);
  }

  ScoreComponents sc;
  sc.mean_pool = Tensor::mat(b, b);
  sc.s1 = Tensor::mat(b, b);
  sc.s2 = Tensor::mat(b, b);
  sc.s12 = Tensor::mat(b, b);
  sc.audio = Tensor::mat(b, b);
  sc.has_audio.resize(b);
  for (int i = 0; i < b; ++i)
    sc.has_audio[i] = ds.items[indices[i]].audio.present ? 1 : 0;

  parallel_rows(b, cfg.workers, [&](int i, int) {
    const Item& vid = ds.items[indices[i]];
    for (int j = 0; j < b; ++j) {
      const Item& txt = ds.items[indices[j]];
      try {
        const MgfiCache cache = pool_forward(tcs[j], vcs[i], mgfi);
        const Tensor& sent = txt.text.sentence;
        sc.s1.at(i, j) = cfg.raw_dot ? dot(cache.o1, sent) : cosine(cache.o1, sent);
        sc.s2.at(i, j) = cfg.raw_dot ? dot(cache.o2, sent) : cosine(cache.o2, sent);
        sc.s12.at(i, j) = pooled_similarity(cache, sent, cfg.raw_dot);
        sc.mean_pool.at(i, j) =
            cfg.raw_dot ? dot(means[i], sent) : cosine(means[i], sent);
        if (sc.has_audio[i])
          sc.audio.at(i, j) =
              audio_text_similarity(vid.audio, sent, cmfi, cfg.raw_dot);
      } catch (const Error& e) {
        rethrow_with_pair(e, vid, txt);
      }
    }
  });
  return sc;
}

Tensor assemble_scores(const ScoreComponents& sc, const ScoreMask& mask,
                       const ObjectiveConfig& cfg) {
  cfg.validate();
  const Tensor& vt = mask.sentence_frame
                         ? (mask.word_frame ? sc.s12 : sc.s1)
                         : (mask.word_frame ? sc.s2 : sc.mean_pool);
  Tensor out = Tensor::mat(vt.rows(), vt.cols());
  for (int i = 0; i < vt.rows(); ++i)
    for (int j = 0; j < vt.cols(); ++j) {
      double s = vt.at(i, j);
      if (mask.audio_sentence) s += cfg.audio_weight * sc.audio.at(i, j);
      out.at(i, j) = cfg.temperature * s;
    }
  return out;
}

Tensor fused_similarity(const Dataset& ds, std::span<const int> indices,
                        const MgfiParams& mgfi, const CmfiParams& cmfi,
                        const ObjectiveConfig& cfg) {
  return assemble_scores(score_components(ds, indices, mgfi, cmfi, cfg),
                         ScoreMask{}, cfg);
}

namespace {

void check_square(const Tensor& fused) {
  if (fused.rank() != 2 || fused.rows() != fused.cols() || fused.rows() < 1)
    fail(ErrorCode::dimension, "contrastive loss needs a square score matrix");
  if (!fused.all_finite())
    fail(ErrorCode::degenerate, "contrastive loss saw a non-finite score");
}

double row_lse(const Tensor& f, int i) {
  double m = f.at(i, 0);
  for (int j = 1; j < f.cols(); ++j) m = std::max(m, f.at(i, j));
  double s = 0.0;
  for (int j = 0; j < f.cols(); ++j) s += std::exp(f.at(i, j) - m);
  return m + std::log(s);
}

double col_lse(const Tensor& f, int j) {
  double m = f.at(0, j);
  for (int i = 1; i < f.rows(); ++i) m = std::max(m, f.at(i, j));
  double s = 0.0;
  for (int i = 0; i < f.rows(); ++i) s += std::exp(f.at(i, j) - m);
  return m + std::log(s);
}

}  // namespace

double infonce_loss(const Tensor& fused) {
  check_square(fused);
  const int b = fused.rows();
  double v2t = 0.0;
  for (int i = 0; i < b; ++i) v2t += fused.at(i, i) - row_lse(fused, i);
  double t2v = 0.0;
  for (int j = 0; j < b; ++j) t2v += fused.at(j, j) - col_lse(fused, j);
  return -(v2t + t2v) / b;
}

InfonceGrad infonce_with_grad(const Tensor& fused) {
  check_square(fused);
  const int b = fused.rows();
  InfonceGrad out;
  out.grad = Tensor::mat(b, b);
  double v2t = 0.0;
  for (int i = 0; i < b; ++i) {
    const double lse = row_lse(fused, i);
    v2t += fused.at(i, i) - lse;
    for (int j = 0; j < b; ++j)
      out.grad.at(i, j) += std::exp(fused.at(i, j) - lse) / b;
  }
  double t2v = 0.0;
  for (int j = 0; j < b; ++j) {
    const double lse = col_lse(fused, j);
    t2v += fused.at(j, j) - lse;
    for (int i = 0; i < b; ++i)
      out.grad.at(i, j) += std::exp(fused.at(i, j) - lse) / b;
  }
  for (int i = 0; i < b; ++i) out.grad.at(i, i) -= 2.0 / b;
  out.loss = -(v2t + t2v) / b;
  return out;
}

BatchResult batch_loss_and_grads(const Dataset& ds, std::span<const int> indices,
                                 const MgfiParams& mgfi, const CmfiParams& cmfi,
                                 const ObjectiveConfig& cfg, bool include_audio,
                                 MgfiGrads* mg, CmfiGrads* cg) {
  cfg.validate();
  check_batch(ds, indices, mgfi, cmfi);
  const int b = static_cast<int>(indices.size());

  std::vector<TextCtx> tcs(b);
  std::vector<VideoCtx> vcs(b);
  for (int i = 0; i < b; ++i) {
    const Item& it = ds.items[indices[i]];
    tcs[i] = make_text_ctx(it.text, mgfi);
    vcs[i] = make_video_ctx(it.video, mgfi);
  }

  std::vector<MgfiCache> caches(static_cast<size_t>(b) * b);
  Tensor vt = Tensor::mat(b, b);
  Tensor at = Tensor::mat(b, b);
  parallel_rows(b, cfg.workers, [&](int i, int) {
    const Item& vid = ds.items[indices[i]];
    for (int j = 0; j < b; ++j) {
      const Item& txt = ds.items[indices[j]];
      try {
        MgfiCache& cache = caches[static_cast<size_t>(i) * b + j];
        cache = pool_forward(tcs[j], vcs[i], mgfi);
        vt.at(i, j) = pooled_similarity(cache, txt.text.sentence, cfg.raw_dot);
        if (include_audio && vid.audio.present)
          at.at(i, j) = audio_text_similarity(vid.audio, txt.text.sentence,
                                              cmfi, cfg.raw_dot);
      } catch (const Error& e) {
        rethrow_with_pair(e, vid, txt);
      }
    }
  });

  BatchResult res;
  res.fused = Tensor::mat(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j)
      res.fused.at(i, j) =
          cfg.temperature * (vt.at(i, j) + cfg.audio_weight * at.at(i, j));

  InfonceGrad ig = infonce_with_grad(res.fused);
  res.loss = ig.loss;
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j)
      res.d_log_temperature += ig.grad.at(i, j) * res.fused.at(i, j);

  if (mg) {
    const int workers = std::min(cfg.workers, b);
    std::vector<MgfiGrads> bufs;
    bufs.reserve(workers);
    for (int w = 0; w < workers; ++w) bufs.push_back(MgfiGrads::zeros_like(mgfi));
    parallel_rows(b, workers, [&](int i, int w) {
      const Item& vid = ds.items[indices[i]];
      for (int j = 0; j < b; ++j) {
        const Item& txt = ds.items[indices[j]];
        try {
          pool_backward(txt.text, vid.video, tcs[j], vcs[i], mgfi,
                        caches[static_cast<size_t>(i) * b + j],
                        cfg.temperature * ig.grad.at(i, j), cfg.raw_dot,
                        &bufs[w], nullptr);
        } catch (const Error& e) {
          rethrow_with_pair(e, vid, txt);
        }
      }
    });
    for (int w = 0; w < workers; ++w) accumulate(mgfi, *mg, bufs[w]);
  }

  if (cg && include_audio) {
    const int workers = std::min(cfg.workers, b);
    std::vector<CmfiGrads> bufs;
    bufs.reserve(workers);
    for (int w = 0; w < workers; ++w) bufs.push_back(CmfiGrads::zeros_like(cmfi));
    parallel_rows(b, workers, [&](int i, int w) {
      const Item& vid = ds.items[indices[i]];
      if (!vid.audio.present) return;
      for (int j = 0; j < b; ++j) {
        const Item& txt = ds.items[indices[j]];
        try {
          cmfi_backward(vid.audio, txt.text.sentence, cmfi,
                        cfg.temperature * cfg.audio_weight * ig.grad.at(i, j),
                        cfg.raw_dot, &bufs[w], nullptr, nullptr);
        } catch (const Error& e) {
          rethrow_with_pair(e, vid, txt);
        }
      }
    });
    for (int w = 0; w < workers; ++w) accumulate(cmfi, *cg, bufs[w]);
  }

  return res;
}

}  // namespace tvr
