#pragma once

#include <string>
#include <utility>
#include <vector>

#include "embeddings.hpp"
#include "tensor.hpp"

namespace tvr {

// Audio-sentence head: layer norm over the audio vector followed by a learned
// affine map, scored against the raw sentence vector by cosine.
struct CmfiParams {
  LayerNormParams ln_audio;
  Tensor w;  // C x C
  Tensor b;  // C

  int dim() const { return w.rows(); }

  // Identity start: the projection begins as a pass-through of the
  // normalized audio vector.
  static CmfiParams init(int c);
};

struct CmfiGrads {
  LayerNormGrads ln_audio;
  Tensor w, b;

  static CmfiGrads zeros_like(const CmfiParams& p);
};

std::vector<std::pair<std::string, Tensor*>> named_tensors(CmfiParams& p);
std::vector<std::pair<std::string, const Tensor*>> named_tensors(
    const CmfiParams& p);
std::vector<std::pair<std::string, Tensor*>> named_tensors(const CmfiParams& p,
                                                           CmfiGrads& g);

Tensor audio_projection(const AudioEmbedding& audio, const CmfiParams& p);

double audio_text_similarity(const AudioEmbedding& audio, const Tensor& sentence,
                             const CmfiParams& p, bool raw_dot = false);

// Reverse pass of audio_text_similarity; accumulates into the destinations,
// null destinations are skipped.
void cmfi_backward(const AudioEmbedding& audio, const Tensor& sentence,
                   const CmfiParams& p, double upstream, bool raw_dot,
                   CmfiGrads* pg, Tensor* d_audio, Tensor* d_sentence);

}  // namespace tvr
