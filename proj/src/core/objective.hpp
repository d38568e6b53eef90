#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmfi.hpp"
#include "embeddings.hpp"
#include "mgfi.hpp"
#include "tensor.hpp"

namespace tvr {

// How items without audio enter the fused score: both choices leave the
// audio term at zero for those rows and produce identical losses; the enum
// records the caller's intent.
enum class AudioPolicy { zero, drop };

struct ObjectiveConfig {
  double temperature = 100.0;  // multiplies the fused scores before the loss
  double audio_weight = 1.0;   // weight of the audio term inside the fusion
  AudioPolicy audio_policy = AudioPolicy::zero;
  bool raw_dot = false;  // score with raw dot products instead of cosines
  int workers = 1;

  void validate() const;
};

// Which score terms participate when assembling a fused matrix.
struct ScoreMask {
  bool sentence_frame = true;
  bool word_frame = true;
  bool audio_sentence = true;
};

// Per-pair score matrices over a batch, indexed [video i][text j]. Computed
// once, every mask combination is assembled from them.
struct ScoreComponents {
  Tensor mean_pool;  // frame-average baseline
  Tensor s1, s2;     // sentence-frame and word-frame branch scores
  Tensor s12;        // aggregated two-branch score
  Tensor audio;      // audio-sentence score, zero where audio is absent
  std::vector<std::uint8_t> has_audio;  // per item
};

ScoreComponents score_components(const Dataset& ds, std::span<const int> indices,
                                 const MgfiParams& mgfi, const CmfiParams& cmfi,
                                 const ObjectiveConfig& cfg);

// temperature * (video-text part + audio_weight * audio part), with the
// video-text part picked by the mask (mean-pool baseline when both branch
// toggles are off).
Tensor assemble_scores(const ScoreComponents& sc, const ScoreMask& mask,
                       const ObjectiveConfig& cfg);

// Fused matrix with every module enabled.
Tensor fused_similarity(const Dataset& ds, std::span<const int> indices,
                        const MgfiParams& mgfi, const CmfiParams& cmfi,
                        const ObjectiveConfig& cfg);

// Symmetric contrastive loss over a square score matrix whose diagonal holds
// the matching pairs: cross-entropy against the diagonal along rows
// (video-to-text) plus along columns (text-to-video), each averaged over the
// batch.
double infonce_loss(const Tensor& fused);

struct InfonceGrad {
  double loss = 0.0;
  Tensor grad;  // d loss / d fused
};
InfonceGrad infonce_with_grad(const Tensor& fused);

// One training batch: forward both heads over all pairs, apply the loss, and
// push gradients back into whichever heads have a destination. Audio enters
// the fusion with cfg.audio_weight; pass include_audio=false to train the
// video-text stage with the audio term removed.
struct BatchResult {
  double loss = 0.0;
  Tensor fused;       // scores the loss saw
  double d_log_temperature = 0.0;  // gradient for a learnable temperature
};

BatchResult batch_loss_and_grads(const Dataset& ds, std::span<const int> indices,
                                 const MgfiParams& mgfi, const CmfiParams& cmfi,
                                 const ObjectiveConfig& cfg, bool include_audio,
                                 MgfiGrads* mg, CmfiGrads* cg);

}  // namespace tvr
