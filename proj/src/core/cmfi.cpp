#include "cmfi.hpp"

namespace tvr {

CmfiParams CmfiParams::init(int c) {
  if (c < 1) fail(ErrorCode::usage, "cmfi: dimension must be positive");
  CmfiParams p;
  p.ln_audio = LayerNormParams::identity(c);
  p.w = Tensor::eye(c);
  p.b = Tensor::vec(c);
  return p;
}

CmfiGrads CmfiGrads::zeros_like(const CmfiParams& p) {
  const int c = p.dim();
  CmfiGrads g;
  g.ln_audio = {Tensor::vec(c), Tensor::vec(c)};
  g.w = Tensor::mat(c, c);
  g.b = Tensor::vec(c);
  return g;
}

namespace {

template <typename Struct, typename T>
std::vector<std::pair<std::string, T*>> list_cmfi(Struct& s) {
  return {
      {"cmfi.ln_audio.gain", &s.ln_audio.gain},
      {"cmfi.ln_audio.bias", &s.ln_audio.bias},
      {"cmfi.w", &s.w},
      {"cmfi.b", &s.b},
  };
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> named_tensors(CmfiParams& p) {
  return list_cmfi<CmfiParams, Tensor>(p);
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(
    const CmfiParams& p) {
  return list_cmfi<const CmfiParams, const Tensor>(p);
}

std::vector<std::pair<std::string, Tensor*>> named_tensors(const CmfiParams&,
                                                           CmfiGrads& g) {
  return list_cmfi<CmfiGrads, Tensor>(g);
}

namespace {

void check_inputs(const AudioEmbedding& audio, const CmfiParams& p) {
  if (!audio.present)
    fail(ErrorCode::usage, "audio head called on an item without audio");
  if (audio.audio.size() != p.dim())
    fail(ErrorCode::dimension, "audio width does not match model");
}

}  // namespace

Tensor audio_projection(const AudioEmbedding& audio, const CmfiParams& p) {
  check_inputs(audio, p);
  return linear(layer_norm(audio.audio, p.ln_audio), p.w, p.b);
}

double audio_text_similarity(const AudioEmbedding& audio, const Tensor& sentence,
                             const CmfiParams& p, bool raw_dot) {
  const Tensor proj = audio_projection(audio, p);
  if (sentence.size() != p.dim())
    fail(ErrorCode::dimension, "sentence width does not match model");
  return raw_dot ? dot(proj, sentence) : cosine(proj, sentence);
}

void cmfi_backward(const AudioEmbedding& audio, const Tensor& sentence,
                   const CmfiParams& p, double upstream, bool raw_dot,
                   CmfiGrads* pg, Tensor* d_audio, Tensor* d_sentence) {
  check_inputs(audio, p);
  const int c = p.dim();
  const Tensor la = layer_norm(audio.audio, p.ln_audio);
  const Tensor proj = linear(la, p.w, p.b);
  Tensor dproj = Tensor::vec(c);
  if (raw_dot)
    dot_backward(proj, sentence, upstream, &dproj, d_sentence);
  else
    cosine_backward(proj, sentence, upstream, &dproj, d_sentence);
  Tensor dla = Tensor::vec(c);
  linear_backward(la, p.w, dproj, &dla, pg ? &pg->w : nullptr,
                  pg ? &pg->b : nullptr);
  layer_norm_backward(audio.audio, p.ln_audio, dla, d_audio,
                      pg ? &pg->ln_audio : nullptr);
}

}  // namespace tvr
