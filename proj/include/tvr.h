/* Text-to-video retrieval over precomputed embeddings: a video-text head
 * that pools frames under sentence- and word-level attention, an optional
 * audio-sentence head, a fused contrastive objective with a two-stage
 * trainer, and rank-based retrieval metrics.
 *
 * Every function returns a tvr_status; on failure tvr_last_error() holds a
 * message for the calling thread. Out-parameters are written only on TVR_OK.
 * Handles are opaque and must be released with the matching _free call.
 */
#ifndef TVR_H
#define TVR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tvr_status {
  TVR_OK = 0,
  TVR_ERR_USAGE = 1,      /* invalid argument or argument combination */
  TVR_ERR_DIMENSION = 2,  /* shapes do not agree */
  TVR_ERR_FORMAT = 3,     /* malformed manifest, blob, or checkpoint */
  TVR_ERR_IO = 4,         /* file could not be read or written */
  TVR_ERR_DEGENERATE = 5, /* zero-norm vector where a direction is required */
  TVR_ERR_INTERNAL = 6
} tvr_status;

/* Message for the most recent failure on this thread; never NULL. */
const char* tvr_last_error(void);

typedef struct tvr_dataset tvr_dataset;
typedef struct tvr_model tvr_model;

/* ---- datasets ---- */

typedef struct tvr_synth_config {
  int32_t count;
  int32_t dim;
  int32_t frames_min, frames_max;
  int32_t words_min, words_max;
  double audio_fraction;
  /* Of the items that carry audio, the fraction whose frames are degraded
   * and whose audio carries the topic instead. */
  double audio_informative_fraction;
  uint64_t seed;
  /* Nonzero: noise-free variant whose key frame equals the topic vector. */
  int32_t separable;
} tvr_synth_config;

tvr_status tvr_synth_config_default(tvr_synth_config* out);
tvr_status tvr_dataset_generate(const tvr_synth_config* cfg, tvr_dataset** out);

/* A dataset on disk is a text manifest next to a raw little-endian f32 blob. */
tvr_status tvr_dataset_load(const char* manifest_path, const char* blob_path,
                            tvr_dataset** out);
tvr_status tvr_dataset_save(const tvr_dataset* ds, const char* manifest_path,
                            const char* blob_path);

int32_t tvr_dataset_count(const tvr_dataset* ds);
int32_t tvr_dataset_dim(const tvr_dataset* ds);
int32_t tvr_dataset_audio_count(const tvr_dataset* ds);
/* Borrowed pointer, valid while the dataset lives; NULL if out of range. */
const char* tvr_dataset_item_id(const tvr_dataset* ds, int32_t index);
void tvr_dataset_free(tvr_dataset* ds);

/* ---- models ---- */

tvr_status tvr_model_init(int32_t dim, uint64_t seed, tvr_model** out);
tvr_status tvr_model_load(const char* path, tvr_model** out);
tvr_status tvr_model_save(const tvr_model* m, const char* path);

int32_t tvr_model_dim(const tvr_model* m);
/* 0 = initialized, 1 = video-text stage done, 2 = audio stage done. */
int32_t tvr_model_stage(const tvr_model* m);
double tvr_model_temperature(const tvr_model* m);
void tvr_model_free(tvr_model* m);

/* ---- training ---- */

enum { TVR_STAGE_VIDEO_TEXT = 0, TVR_STAGE_AUDIO = 1 };

typedef struct tvr_train_config {
  int32_t stage;
  int32_t epochs;
  int32_t batch_size;
  double lr_video_text;
  double lr_audio;
  double weight_decay;
  double temperature;      /* starting value when learn_temperature is set */
  double audio_weight;
  int32_t learn_temperature;
  /* The audio stage freezes the video-text head unless this is nonzero. */
  int32_t train_video_text_in_audio_stage;
  int32_t max_steps;       /* 0 = run every epoch to completion */
  uint64_t seed;
  int32_t workers;
  const char* log_path;    /* one line per step; NULL = no log file */
} tvr_train_config;

tvr_status tvr_train_config_default(tvr_train_config* out);

typedef struct tvr_train_summary {
  int32_t steps_run;
  int32_t skipped;         /* degenerate batches */
  double first_loss;
  double last_loss;
} tvr_train_summary;

tvr_status tvr_train(tvr_model* m, const tvr_dataset* ds,
                     const tvr_train_config* cfg, tvr_train_summary* out);

/* ---- evaluation ---- */

typedef struct tvr_eval_config {
  /* Score-term toggles. With both video-text toggles off, the video-text
   * part falls back to the frame-average baseline. */
  int32_t use_sentence_frame;
  int32_t use_word_frame;
  int32_t use_audio_sentence;
  double temperature;
  double audio_weight;
  int32_t raw_dot;         /* score with raw dot products, not cosines */
  int32_t workers;
} tvr_eval_config;

tvr_status tvr_eval_config_default(tvr_eval_config* out);

typedef struct tvr_report {
  double r1, r5, r10;      /* recall at K, percent */
  double median_rank;
  double mean_rank;
} tvr_report;

/* Scores the whole dataset and ranks both directions; either out-pointer
 * may be NULL. t2v ranks videos for each text, v2t ranks texts for each
 * video. */
tvr_status tvr_evaluate(const tvr_model* m, const tvr_dataset* ds,
                        const tvr_eval_config* cfg, tvr_report* t2v_out,
                        tvr_report* v2t_out);

/* Fused score matrix, row-major count x count; rows are videos, columns are
 * texts. out must hold count*count doubles. */
tvr_status tvr_score_matrix(const tvr_model* m, const tvr_dataset* ds,
                            const tvr_eval_config* cfg, double* out);

/* ---- ablation ---- */

#define TVR_ABLATION_ROWS 8

typedef struct tvr_ablation_row {
  int32_t use_sentence_frame;
  int32_t use_word_frame;
  int32_t use_audio_sentence;
  tvr_report t2v;
  tvr_report v2t;
} tvr_ablation_row;

/* Computes the per-pair score terms once and evaluates every toggle
 * combination. Row order: baseline, each term alone, each pair of terms,
 * all terms. The toggles inside cfg are ignored. */
tvr_status tvr_ablate(const tvr_model* m, const tvr_dataset* ds,
                      const tvr_eval_config* cfg,
                      tvr_ablation_row rows[TVR_ABLATION_ROWS]);

/* ---- gradient audit ---- */

/* Checks every hand-written gradient against central differences at widths
 * 2, 4, and 8; writes the worst relative error seen. */
tvr_status tvr_gradcheck(uint64_t seed, double* worst_out);

#ifdef __cplusplus
}
#endif

#endif /* TVR_H */
