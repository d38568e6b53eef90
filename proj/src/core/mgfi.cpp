#include "mgfi.hpp"

#include <cmath>

namespace tvr {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::dimension, what);
}

Tensor noisy_eye(int c, double sigma, Rng& rng) {
  Tensor t = Tensor::eye(c);
  for (int i = 0; i < t.size(); ++i) t[i] += sigma * rng.normal();
  return t;
}

}  // namespace

MgfiParams MgfiParams::init(int c, Rng& rng, int hidden, Activation act) {
  if (c < 1) fail(ErrorCode::usage, "mgfi: dimension must be positive");
  if (hidden <= 0) hidden = 4 * c;
  MgfiParams p;
  p.wq = noisy_eye(c, 0.01, rng);
  p.wk = noisy_eye(c, 0.01, rng);
  p.wv = noisy_eye(c, 0.01, rng);
  p.wo = Tensor::eye(c);
  p.ln_text = LayerNormParams::identity(c);
  p.ln_video = LayerNormParams::identity(c);
  p.ln_z = LayerNormParams::identity(c);
  p.ff.w1 = Tensor::mat(c, hidden);
  for (int i = 0; i < p.ff.w1.size(); ++i) p.ff.w1[i] = 0.02 * rng.normal();
  p.ff.b1 = Tensor::vec(hidden);
  p.ff.w2 = Tensor::mat(hidden, c);
  p.ff.b2 = Tensor::vec(c);
  p.ff.activation = act;
  return p;
}

void MgfiParams::unshare_query() {
  if (!share_query_across_granularities) return;
  wq_word = wq;
  ln_word = ln_text;
  share_query_across_granularities = false;
}

void MgfiParams::unshare_ff() {
  if (!share_ff_across_granularities) return;
  ff_word = ff;
  ln_o_word = ln_z;
  share_ff_across_granularities = false;
}

MgfiGrads MgfiGrads::zeros_like(const MgfiParams& p) {
  const int c = p.dim();
  const int h = p.ff.hidden_dim();
  MgfiGrads g;
  g.wq = Tensor::mat(c, c);
  g.wk = Tensor::mat(c, c);
  g.wv = Tensor::mat(c, c);
  g.wo = Tensor::mat(c, c);
  g.ln_text = {Tensor::vec(c), Tensor::vec(c)};
  g.ln_video = {Tensor::vec(c), Tensor::vec(c)};
  g.ln_z = {Tensor::vec(c), Tensor::vec(c)};
  g.ff = {Tensor::mat(c, h), Tensor::vec(h), Tensor::mat(h, c), Tensor::vec(c)};
  if (!p.share_query_across_granularities) {
    g.wq_word = Tensor::mat(c, c);
    g.ln_word = {Tensor::vec(c), Tensor::vec(c)};
  }
  if (!p.share_ff_across_granularities) {
    const int hw = p.ff_word.hidden_dim();
    g.ff_word = {Tensor::mat(c, hw), Tensor::vec(hw), Tensor::mat(hw, c),
                 Tensor::vec(c)};
    g.ln_o_word = {Tensor::vec(c), Tensor::vec(c)};
  }
  return g;
}

namespace {

// Shared name/slot enumeration: MgfiParams and MgfiGrads mirror each other
// field for field, so one builder serves the parameter, gradient, and const
// views and the orders cannot drift apart.
template <typename Struct, typename T>
std::vector<std::pair<std::string, T*>> list_mgfi(Struct& s, bool word_query,
                                                  bool word_ff) {
  std::vector<std::pair<std::string, T*>> out = {
      {"mgfi.wq", &s.wq},
      {"mgfi.wk", &s.wk},
      {"mgfi.wv", &s.wv},
      {"mgfi.wo", &s.wo},
      {"mgfi.ln_text.gain", &s.ln_text.gain},
      {"mgfi.ln_text.bias", &s.ln_text.bias},
      {"mgfi.ln_video.gain", &s.ln_video.gain},
      {"mgfi.ln_video.bias", &s.ln_video.bias},
      {"mgfi.ln_z.gain", &s.ln_z.gain},
      {"mgfi.ln_z.bias", &s.ln_z.bias},
      {"mgfi.ff.w1", &s.ff.w1},
      {"mgfi.ff.b1", &s.ff.b1},
      {"mgfi.ff.w2", &s.ff.w2},
      {"mgfi.ff.b2", &s.ff.b2},
  };
  if (word_query) {
    out.emplace_back("mgfi.wq_word", &s.wq_word);
    out.emplace_back("mgfi.ln_word.gain", &s.ln_word.gain);
    out.emplace_back("mgfi.ln_word.bias", &s.ln_word.bias);
  }
  if (word_ff) {
    out.emplace_back("mgfi.ff_word.w1", &s.ff_word.w1);
    out.emplace_back("mgfi.ff_word.b1", &s.ff_word.b1);
    out.emplace_back("mgfi.ff_word.w2", &s.ff_word.w2);
    out.emplace_back("mgfi.ff_word.b2", &s.ff_word.b2);
    out.emplace_back("mgfi.ln_o_word.gain", &s.ln_o_word.gain);
    out.emplace_back("mgfi.ln_o_word.bias", &s.ln_o_word.bias);
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> named_tensors(MgfiParams& p) {
  return list_mgfi<MgfiParams, Tensor>(p, !p.share_query_across_granularities,
                                       !p.share_ff_across_granularities);
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(
    const MgfiParams& p) {
  return list_mgfi<const MgfiParams, const Tensor>(
      p, !p.share_query_across_granularities,
      !p.share_ff_across_granularities);
}

std::vector<std::pair<std::string, Tensor*>> named_tensors(const MgfiParams& p,
                                                           MgfiGrads& g) {
  return list_mgfi<MgfiGrads, Tensor>(g, !p.share_query_across_granularities,
                                      !p.share_ff_across_granularities);
}

TextCtx make_text_ctx(const TextEmbedding& text, const MgfiParams& p) {
  const int c = p.dim();
  require(text.sentence.size() == c, "text sentence width does not match model");
  require(text.words.rank() == 2 && text.words.cols() == c && text.words.rows() >= 1,
          "text words must be a nonempty matrix matching the model width");
  TextCtx tc;
  tc.lt = layer_norm(text.sentence, p.ln_text);
  tc.q = matmul(tc.lt, p.wq);
  const LayerNormParams& lnw =
      p.share_query_across_granularities ? p.ln_text : p.ln_word;
  const Tensor& wqw = p.share_query_across_granularities ? p.wq : p.wq_word;
  tc.lw = layer_norm(text.words, lnw);
  tc.qw = matmul(tc.lw, wqw);
  return tc;
}

VideoCtx make_video_ctx(const VideoEmbedding& video, const MgfiParams& p) {
  const int c = p.dim();
  require(video.frames.rank() == 2 && video.frames.cols() == c &&
              video.frames.rows() >= 1,
          "video frames must be a nonempty matrix matching the model width");
  VideoCtx vc;
  vc.lv = layer_norm(video.frames, p.ln_video);
  vc.k = matmul(vc.lv, p.wk);
  vc.v = matmul(vc.lv, p.wv);
  return vc;
}

MgfiCache pool_forward(const TextCtx& tc, const VideoCtx& vc, const MgfiParams& p) {
  const double isc = 1.0 / std::sqrt(static_cast<double>(p.dim()));
  MgfiCache c;
  // Sentence query attends over frames; attention scores are scaled before
  // the softmax.
  c.att = softmax(scale(matmul_nt(tc.q, vc.k), isc));
  c.pooled = matmul(c.att, vc.v);
  c.z = matmul(c.pooled, p.wo);
  c.zn = layer_norm(c.z, p.ln_z);
  c.o1 = add(c.z, feed_forward(c.zn, p.ff));

  // Each word attends over frames. The per-word relevance weights come from
  // the row maxima of the *unscaled* score matrix; the attention rows use the
  // scaled scores.
  Tensor a = matmul_nt(tc.qw, vc.k);
  c.aw = softmax(scale(a, isc));
  c.p = matmul(c.aw, vc.v);
  c.zt = matmul(c.p, p.wo);
  c.m = row_max(a);
  c.ww = softmax(c.m.values);
  c.ot = matmul(c.ww, c.zt);
  const LayerNormParams& lno =
      p.share_ff_across_granularities ? p.ln_z : p.ln_o_word;
  const FeedForwardParams& ffw = p.share_ff_across_granularities ? p.ff : p.ff_word;
  c.otn = layer_norm(c.ot, lno);
  c.o2 = add(c.ot, feed_forward(c.otn, ffw));

  c.o = scale(add(c.o1, c.o2), 0.5);
  return c;
}

double pooled_similarity(const MgfiCache& cache, const Tensor& sentence,
                         bool raw_dot) {
  return raw_dot ? dot(cache.o, sentence) : cosine(cache.o, sentence);
}

MgfiDataGrads MgfiDataGrads::zeros_like(const TextEmbedding& t,
                                        const VideoEmbedding& v) {
  MgfiDataGrads g;
  g.sentence = Tensor::vec(t.sentence.size());
  g.frames = Tensor::mat(v.frames.rows(), v.frames.cols());
  g.words = Tensor::mat(t.words.rows(), t.words.cols());
  return g;
}

void pool_backward(const TextEmbedding& text, const VideoEmbedding& video,
                   const TextCtx& tc, const VideoCtx& vc, const MgfiParams& p,
                   const MgfiCache& cache, double d_sim, bool raw_dot,
                   MgfiGrads* pg, MgfiDataGrads* dg) {
  const int c = p.dim();
  const double isc = 1.0 / std::sqrt(static_cast<double>(c));
  const bool shq = p.share_query_across_granularities;
  const bool shf = p.share_ff_across_granularities;
  const Tensor& wqw = shq ? p.wq : p.wq_word;
  const LayerNormParams& lnw = shq ? p.ln_text : p.ln_word;
  const LayerNormParams& lno = shf ? p.ln_z : p.ln_o_word;
  const FeedForwardParams& ffw = shf ? p.ff : p.ff_word;
  Tensor* g_wqw = pg ? (shq ? &pg->wq : &pg->wq_word) : nullptr;
  LayerNormGrads* g_lnw = pg ? (shq ? &pg->ln_text : &pg->ln_word) : nullptr;
  LayerNormGrads* g_lno = pg ? (shf ? &pg->ln_z : &pg->ln_o_word) : nullptr;
  FeedForwardGrads* g_ffw = pg ? (shf ? &pg->ff : &pg->ff_word) : nullptr;

  Tensor d_o = Tensor::vec(c);
  if (raw_dot)
    dot_backward(cache.o, text.sentence, d_sim, &d_o,
                 dg ? &dg->sentence : nullptr);
  else
    cosine_backward(cache.o, text.sentence, d_sim, &d_o,
                    dg ? &dg->sentence : nullptr);
  const Tensor dhalf = scale(d_o, 0.5);  // reaches both branch outputs

  const int nf = vc.k.rows();
  Tensor dk = Tensor::mat(nf, c);
  Tensor dv = Tensor::mat(nf, c);

  // sentence-frame branch
  Tensor dz = dhalf;
  Tensor dzn = Tensor::vec(c);
  feed_forward_backward(cache.zn, p.ff, dhalf, &dzn, pg ? &pg->ff : nullptr);
  layer_norm_backward(cache.z, p.ln_z, dzn, &dz, pg ? &pg->ln_z : nullptr);
  Tensor dpooled = Tensor::vec(c);
  matmul_backward(cache.pooled, p.wo, dz, &dpooled, pg ? &pg->wo : nullptr);
  Tensor datt = Tensor::vec(nf);
  matmul_backward(cache.att, vc.v, dpooled, &datt, &dv);
  Tensor dscores = Tensor::vec(nf);
  softmax_backward(cache.att, datt, &dscores);
  const Tensor gsc = scale(dscores, isc);
  const Tensor dq = matmul(gsc, vc.k);
  axpy(1.0, matmul_tn(gsc, tc.q), dk);
  Tensor dlt = Tensor::vec(c);
  matmul_backward(tc.lt, p.wq, dq, &dlt, pg ? &pg->wq : nullptr);
  layer_norm_backward(text.sentence, p.ln_text, dlt,
                      dg ? &dg->sentence : nullptr,
                      pg ? &pg->ln_text : nullptr);

  // word-frame branch
  const int nw = cache.ww.size();
  Tensor d_ot = dhalf;
  Tensor dotn = Tensor::vec(c);
  feed_forward_backward(cache.otn, ffw, dhalf, &dotn, g_ffw);
  layer_norm_backward(cache.ot, lno, dotn, &d_ot, g_lno);
  Tensor dww = Tensor::vec(nw);
  Tensor dzt = Tensor::mat(nw, c);
  matmul_backward(cache.ww, cache.zt, d_ot, &dww, &dzt);
  Tensor dm = Tensor::vec(nw);
  softmax_backward(cache.ww, dww, &dm);
  Tensor da = Tensor::mat(nw, nf);
  row_max_backward(cache.m, dm, &da);
  Tensor dp = Tensor::mat(nw, c);
  matmul_backward(cache.p, p.wo, dzt, &dp, pg ? &pg->wo : nullptr);
  Tensor daw = Tensor::mat(nw, nf);
  matmul_backward(cache.aw, vc.v, dp, &daw, &dv);
  Tensor dsw = Tensor::mat(nw, nf);
  softmax_backward(cache.aw, daw, &dsw);
  axpy(isc, dsw, da);
  const Tensor dqw = matmul(da, vc.k);
  axpy(1.0, matmul_tn(da, tc.qw), dk);
  Tensor dlw = Tensor::mat(nw, c);
  matmul_backward(tc.lw, wqw, dqw, &dlw, g_wqw);
  layer_norm_backward(text.words, lnw, dlw, dg ? &dg->words : nullptr, g_lnw);

  // video side, joint across branches
  Tensor dlv = Tensor::mat(nf, c);
  matmul_backward(vc.lv, p.wk, dk, &dlv, pg ? &pg->wk : nullptr);
  matmul_backward(vc.lv, p.wv, dv, &dlv, pg ? &pg->wv : nullptr);
  layer_norm_backward(video.frames, p.ln_video, dlv,
                      dg ? &dg->frames : nullptr,
                      pg ? &pg->ln_video : nullptr);
}

PooledVideo mgfi_pool(const TextEmbedding& text, const VideoEmbedding& video,
                      const MgfiParams& p) {
  const TextCtx tc = make_text_ctx(text, p);
  const VideoCtx vc = make_video_ctx(video, p);
  MgfiCache c = pool_forward(tc, vc, p);
  PooledVideo out;
  out.o1 = std::move(c.o1);
  out.o2 = std::move(c.o2);
  out.o = std::move(c.o);
  out.word_weights = std::move(c.ww);
  out.frame_attention = std::move(c.att);
  return out;
}

std::pair<Tensor, Tensor> sentence_frame_pool(const TextEmbedding& text,
                                              const VideoEmbedding& video,
                                              const MgfiParams& p) {
  PooledVideo pv = mgfi_pool(text, video, p);
  return {std::move(pv.o1), std::move(pv.frame_attention)};
}

std::pair<Tensor, Tensor> word_frame_pool(const TextEmbedding& text,
                                          const VideoEmbedding& video,
                                          const MgfiParams& p) {
  PooledVideo pv = mgfi_pool(text, video, p);
  return {std::move(pv.o2), std::move(pv.word_weights)};
}

Tensor aggregate(const Tensor& o1, const Tensor& o2) {
  return scale(add(o1, o2), 0.5);
}

double video_text_similarity(const TextEmbedding& text,
                             const VideoEmbedding& video, const MgfiParams& p) {
  const TextCtx tc = make_text_ctx(text, p);
  const VideoCtx vc = make_video_ctx(video, p);
  return pooled_similarity(pool_forward(tc, vc, p), text.sentence);
}

double mean_pool_similarity(const TextEmbedding& text,
                            const VideoEmbedding& video) {
  require(video.frames.rank() == 2 && video.frames.rows() >= 1 &&
              video.frames.cols() == text.sentence.size(),
          "mean_pool_similarity: shape mismatch");
  return cosine(mean_rows(video.frames), text.sentence);
}

void mgfi_backward(const TextEmbedding& text, const VideoEmbedding& video,
                   const MgfiParams& p, double upstream, MgfiGrads* pg,
                   MgfiDataGrads* dg) {
  const TextCtx tc = make_text_ctx(text, p);
  const VideoCtx vc = make_video_ctx(video, p);
  const MgfiCache cache = pool_forward(tc, vc, p);
  pool_backward(text, video, tc, vc, p, cache, upstream, /*raw_dot=*/false, pg,
                dg);
}

}  // namespace tvr
