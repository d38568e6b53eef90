#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace tvr {

// One caption: a sentence vector plus the per-word vectors behind it.
struct TextEmbedding {
  Tensor sentence;  // length C
  Tensor words;     // word_count x C
  int word_count() const { return words.rows(); }
};

// Per-frame vectors for one video.
struct VideoEmbedding {
  Tensor frames;  // frame_count x C
  int frame_count() const { return frames.rows(); }
};

// One audio vector per video; absence is a real state, distinct from a
// silent (zero-information) vector.
struct AudioEmbedding {
  Tensor audio;  // length C when present
  bool present = false;
};

// One video-caption pair.
struct Item {
  std::string id;
  VideoEmbedding video;
  TextEmbedding text;
  AudioEmbedding audio;
};

struct ManifestEntry {
  std::string id;
  int frame_count = 0;
  int word_count = 0;
  bool has_audio = false;
};

// The manifest fixes the item order; every module indexes items by this
// order.
struct DatasetManifest {
  int dim = 0;
  std::vector<ManifestEntry> items;
};

struct Dataset {
  int dim = 0;
  std::vector<Item> items;

  int count() const { return static_cast<int>(items.size()); }
  DatasetManifest manifest() const;
  bool any_audio() const;
};

// On-disk bundle: a line-oriented text manifest next to a raw little-endian
// f32 blob. Blob layout per item, in manifest order:
//   frames (N x C, row-major) | sentence (C) | words (N' x C) | audio (C, only
//   when has_audio)
Dataset load_dataset(const std::string& manifest_path, const std::string& blob_path);
void save_dataset(const Dataset& ds, const std::string& manifest_path,
                  const std::string& blob_path);

DatasetManifest parse_manifest(const std::string& manifest_path);

// Synthetic data: every item is built around a latent unit "topic" direction.
// The caption names the topic (one key word among shared filler words), the
// video shows it in a single key frame diluted by distractor topics from
// other items. For the audio-informative slice the frames are mostly
// distractor while the audio track carries the topic.
struct SynthConfig {
  int count = 64;
  int dim = 32;
  int frames_min = 4;
  int frames_max = 8;
  int words_min = 3;
  int words_max = 8;
  double audio_fraction = 0.0;
  // Of the items that carry audio, the fraction whose frames are degraded and
  // whose audio carries the topic instead.
  double audio_informative_fraction = 0.0;
  std::uint64_t seed = 0;

  // Mixture texture. Key-frame topic weight is drawn from
  // [key_topic_lo, key_topic_hi]; background frames from
  // [bg_topic_lo, bg_topic_hi]; the remainder of each frame points at
  // distractor topics drawn from a small per-item pool.
  double key_topic_lo = 0.85;
  double key_topic_hi = 0.95;
  double bg_topic_lo = 0.1;
  double bg_topic_hi = 0.25;
  double informative_key_topic = 0.15;  // degraded key frame
  double frame_noise = 0.07;
  double sentence_noise = 0.07;
  double word_noise = 0.12;
  double audio_noise = 0.1;
  double plain_audio_topic = 0.3;  // topic weight in non-informative audio
  int distractors_per_item = 2;

  // Noise-free, fully separable variant: the key frame *is* the topic.
  static SynthConfig separable(int count, int dim, std::uint64_t seed);
};

Dataset generate_synthetic(const SynthConfig& cfg);

}  // namespace tvr
