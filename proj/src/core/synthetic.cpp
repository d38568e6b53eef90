#include <algorithm>
#include <cmath>

#include "embeddings.hpp"
#include "rng.hpp"

namespace tvr {

namespace {

Tensor random_unit(Rng& rng, int dim) {
  Tensor t = Tensor::vec(dim);
  for (int i = 0; i < dim; ++i) t[i] = rng.normal();
  const double n = norm(t);
  if (n == 0.0) {
    Tensor e = Tensor::vec(dim);
    e[0] = 1.0;
    return e;
  }
  return scale(t, 1.0 / n);
}

Tensor normalized(Tensor t) {
  const double n = norm(t);
  if (n == 0.0) fail(ErrorCode::degenerate, "synthetic vector collapsed to zero");
  return scale(std::move(t), 1.0 / n);
}

// a*topic + (1-a)*distractor + noise*u, normalized.
Tensor mix(Rng& rng, const Tensor& topic, double a, const Tensor& distractor,
           double noise_scale) {
  Tensor t = scale(topic, a);
  axpy(1.0 - a, distractor, t);
  if (noise_scale > 0.0) axpy(noise_scale, random_unit(rng, t.size()), t);
  return normalized(std::move(t));
}

std::string item_id(int index, int count) {
  int digits = 1;
  for (int c = count - 1; c >= 10; c /= 10) ++digits;
  digits = std::max(digits, 4);
  std::string num = std::to_string(index);
  return "item" + std::string(digits - num.size(), '0') + num;
}

}  // namespace

SynthConfig SynthConfig::separable(int count, int dim, std::uint64_t seed) {
  SynthConfig c;
  c.count = count;
  c.dim = dim;
  c.seed = seed;
  c.key_topic_lo = c.key_topic_hi = 1.0;
  c.bg_topic_lo = 0.0;
  c.bg_topic_hi = 0.1;
  c.frame_noise = 0.0;
  c.sentence_noise = 0.0;
  c.word_noise = 0.0;
  c.audio_noise = 0.0;
  return c;
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.count < 2) fail(ErrorCode::usage, "synthetic dataset needs count >= 2");
  if (cfg.dim < 2) fail(ErrorCode::usage, "synthetic dataset needs dim >= 2");
  if (cfg.frames_min < 1 || cfg.frames_max < cfg.frames_min)
    fail(ErrorCode::usage, "bad frame range");
  if (cfg.words_min < 1 || cfg.words_max < cfg.words_min)
    fail(ErrorCode::usage, "bad word range");
  if (cfg.audio_fraction < 0.0 || cfg.audio_fraction > 1.0 ||
      cfg.audio_informative_fraction < 0.0 ||
      cfg.audio_informative_fraction > 1.0)
    fail(ErrorCode::usage, "audio fractions must lie in [0, 1]");

  Rng rng(cfg.seed);

  std::vector<Tensor> topics;
  topics.reserve(cfg.count);
  for (int i = 0; i < cfg.count; ++i) topics.push_back(random_unit(rng, cfg.dim));

  // Shared filler-word directions; captions differ only in their key word.
  std::vector<Tensor> fillers;
  for (int i = 0; i < 16; ++i) fillers.push_back(random_unit(rng, cfg.dim));

  // Role assignment by seeded permutation: which items carry audio, and which
  // of those lean on it.
  const int n_audio =
      static_cast<int>(std::lround(cfg.audio_fraction * cfg.count));
  const int n_informative =
      static_cast<int>(std::lround(cfg.audio_informative_fraction * n_audio));
  std::vector<int> perm = rng.permutation(cfg.count);
  std::vector<char> has_audio(cfg.count, 0), informative(cfg.count, 0);
  for (int r = 0; r < n_audio; ++r) has_audio[perm[r]] = 1;
  for (int r = 0; r < n_informative; ++r) informative[perm[r]] = 1;

  Dataset ds;
  ds.dim = cfg.dim;
  ds.items.reserve(cfg.count);

  for (int i = 0; i < cfg.count; ++i) {
    const Tensor& topic = topics[i];
    Item it;
    it.id = item_id(i, cfg.count);

    // Distractor topics borrowed from other items, so captions of those items
    // genuinely compete for this video.
    std::vector<const Tensor*> pool;
    for (int d = 0; d < cfg.distractors_per_item; ++d) {
      int j = rng.uniform_int(0, cfg.count - 2);
      if (j >= i) ++j;
      pool.push_back(&topics[j]);
    }

    const int n_frames = rng.uniform_int(cfg.frames_min, cfg.frames_max);
    const int key_frame = rng.uniform_int(0, n_frames - 1);
    const double key_w = informative[i]
                             ? cfg.informative_key_topic
                             : rng.uniform(cfg.key_topic_lo, cfg.key_topic_hi);
    it.video.frames = Tensor::mat(n_frames, cfg.dim);
    int bg_index = 0;
    for (int f = 0; f < n_frames; ++f) {
      Tensor frame;
      if (f == key_frame) {
        frame = mix(rng, topic, key_w, *pool[0], cfg.frame_noise);
      } else {
        double w = informative[i]
                       ? rng.uniform(0.0, 0.6 * cfg.informative_key_topic)
                       : rng.uniform(cfg.bg_topic_lo, cfg.bg_topic_hi);
        w = std::min(w, key_w - 1e-3);  // key frame keeps the highest weight
        if (w < 0.0) w = 0.0;
        frame = mix(rng, topic, w, *pool[bg_index % pool.size()], cfg.frame_noise);
        ++bg_index;
      }
      for (int c = 0; c < cfg.dim; ++c) it.video.frames.at(f, c) = frame[c];
    }

    it.text.sentence = cfg.sentence_noise > 0.0
                           ? mix(rng, topic, 1.0, topic, cfg.sentence_noise)
                           : topic;

    const int n_words = rng.uniform_int(cfg.words_min, cfg.words_max);
    const int key_word = rng.uniform_int(0, n_words - 1);
    it.text.words = Tensor::mat(n_words, cfg.dim);
    for (int w = 0; w < n_words; ++w) {
      Tensor word;
      if (w == key_word) {
        word = mix(rng, topic, 1.0, topic, cfg.word_noise);
      } else {
        const Tensor& f = fillers[rng.uniform_int(0, static_cast<int>(fillers.size()) - 1)];
        word = mix(rng, f, 1.0, f, cfg.word_noise);
      }
      for (int c = 0; c < cfg.dim; ++c) it.text.words.at(w, c) = word[c];
    }

    if (has_audio[i]) {
      it.audio.present = true;
      if (informative[i]) {
        it.audio.audio = mix(rng, topic, 1.0, topic, cfg.audio_noise);
      } else {
        // Weakly topical: points mostly in a random direction.
        const double w = cfg.plain_audio_topic;
        Tensor base = scale(topic, w);
        axpy(std::sqrt(std::max(0.0, 1.0 - w * w)), random_unit(rng, cfg.dim), base);
        if (cfg.audio_noise > 0.0)
          axpy(cfg.audio_noise, random_unit(rng, cfg.dim), base);
        it.audio.audio = normalized(std::move(base));
      }
    }

    ds.items.push_back(std::move(it));
  }
  return ds;
}

}  // namespace tvr
