#pragma once

#include <string>
#include <utility>
#include <vector>

#include "embeddings.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace tvr {

// Learnable state of the multi-granularity head. The query projection and
// text-side layer norm are shared between the sentence-frame and word-frame
// branches, as are the output feed-forward block and its layer norm; both
// sharings can be switched off, which materializes the *_word copies.
struct MgfiParams {
  Tensor wq, wk, wv, wo;  // C x C projections
  LayerNormParams ln_text, ln_video, ln_z;
  FeedForwardParams ff;
  bool share_query_across_granularities = true;
  bool share_ff_across_granularities = true;
  // Word-branch copies, allocated only when the matching share flag is false.
  Tensor wq_word;
  LayerNormParams ln_word;
  FeedForwardParams ff_word;
  LayerNormParams ln_o_word;

  int dim() const { return wq.rows(); }

  // Near-identity start: projections are identity plus small noise and the
  // second feed-forward layer is zero, so the untrained head behaves like
  // attention pooling of normalized frames.
  static MgfiParams init(int c, Rng& rng, int hidden = 0,
                         Activation act = Activation::gelu);

  void unshare_query();
  void unshare_ff();
};

// Gradient holder mirroring MgfiParams tensor for tensor.
struct MgfiGrads {
  Tensor wq, wk, wv, wo;
  LayerNormGrads ln_text, ln_video, ln_z;
  FeedForwardGrads ff;
  Tensor wq_word;
  LayerNormGrads ln_word;
  FeedForwardGrads ff_word;
  LayerNormGrads ln_o_word;

  static MgfiGrads zeros_like(const MgfiParams& p);
};

// Name -> tensor views in a fixed canonical order; parameter and gradient
// views use identical names so optimizers can zip them.
std::vector<std::pair<std::string, Tensor*>> named_tensors(MgfiParams& p);
std::vector<std::pair<std::string, const Tensor*>> named_tensors(
    const MgfiParams& p);
std::vector<std::pair<std::string, Tensor*>> named_tensors(const MgfiParams& p,
                                                           MgfiGrads& g);

// Per-text and per-video precomputations, shared across all pairs in a
// batch.
struct TextCtx {
  Tensor lt, q;   // normalized sentence and its query projection
  Tensor lw, qw;  // per-word rows
};
struct VideoCtx {
  Tensor lv, k, v;  // normalized frames, keys, values
};

// Everything the backward pass needs from one (text, video) forward.
struct MgfiCache {
  // sentence-frame branch
  Tensor att;     // attention over frames (length N)
  Tensor pooled;  // attention-weighted value sum
  Tensor z, zn;   // pre/post layer norm at the block output
  Tensor o1;
  // word-frame branch
  Tensor aw;       // per-word attention rows (N' x N)
  Tensor p, zt;    // per-word pooled values and their output projection
  RowMax m;        // per-word max of the unscaled word-frame scores
  Tensor ww;       // weights over words (length N')
  Tensor ot, otn;  // fused word-branch vector, pre/post layer norm
  Tensor o2;
  Tensor o;  // (o1 + o2) / 2
};

TextCtx make_text_ctx(const TextEmbedding& text, const MgfiParams& p);
VideoCtx make_video_ctx(const VideoEmbedding& video, const MgfiParams& p);
MgfiCache pool_forward(const TextCtx& tc, const VideoCtx& vc, const MgfiParams& p);

double pooled_similarity(const MgfiCache& cache, const Tensor& sentence,
                         bool raw_dot = false);

struct MgfiDataGrads {
  Tensor sentence, frames, words;
  static MgfiDataGrads zeros_like(const TextEmbedding& t, const VideoEmbedding& v);
};

// Reverse pass of pooled_similarity; accumulates into the destinations.
void pool_backward(const TextEmbedding& text, const VideoEmbedding& video,
                   const TextCtx& tc, const VideoCtx& vc, const MgfiParams& p,
                   const MgfiCache& cache, double d_sim, bool raw_dot,
                   MgfiGrads* pg, MgfiDataGrads* dg);

// ---- public single-pair surface ----

struct PooledVideo {
  Tensor o1, o2, o;
  Tensor word_weights;
  Tensor frame_attention;
};

PooledVideo mgfi_pool(const TextEmbedding& text, const VideoEmbedding& video,
                      const MgfiParams& p);

// Text-conditioned attention pooling of the frames: (o1, attention row).
std::pair<Tensor, Tensor> sentence_frame_pool(const TextEmbedding& text,
                                              const VideoEmbedding& video,
                                              const MgfiParams& p);

// Word-conditioned pooling with max-similarity weighting over words:
// (o2, word weights).
std::pair<Tensor, Tensor> word_frame_pool(const TextEmbedding& text,
                                          const VideoEmbedding& video,
                                          const MgfiParams& p);

Tensor aggregate(const Tensor& o1, const Tensor& o2);

double video_text_similarity(const TextEmbedding& text,
                             const VideoEmbedding& video, const MgfiParams& p);

// Baseline: cosine of the frame mean against the sentence vector.
double mean_pool_similarity(const TextEmbedding& text,
                            const VideoEmbedding& video);

void mgfi_backward(const TextEmbedding& text, const VideoEmbedding& video,
                   const MgfiParams& p, double upstream, MgfiGrads* pg,
                   MgfiDataGrads* dg);

}  // namespace tvr
