#include "tvr.h"

#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <utility>

#include "core/embeddings.hpp"
#include "core/error.hpp"
#include "core/gradcheck.hpp"
#include "core/metrics.hpp"
#include "core/objective.hpp"
#include "core/trainer.hpp"

// The C surface owns the exception boundary: every entry point funnels
// through guarded(), which stores the message for tvr_last_error and maps
// the error taxonomy onto status codes.

struct tvr_dataset {
  tvr::Dataset ds;
};

struct tvr_model {
  tvr::Model model;
};

namespace {

thread_local std::string g_last_error = "no error";

tvr_status code_of(const tvr::Error& e) {
  switch (e.code()) {
    case tvr::ErrorCode::dimension:
      return TVR_ERR_DIMENSION;
    case tvr::ErrorCode::format:
      return TVR_ERR_FORMAT;
    case tvr::ErrorCode::degenerate:
      return TVR_ERR_DEGENERATE;
    case tvr::ErrorCode::io:
      return TVR_ERR_IO;
    case tvr::ErrorCode::usage:
      return TVR_ERR_USAGE;
  }
  return TVR_ERR_INTERNAL;
}

template <typename Fn>
tvr_status guarded(Fn&& fn) {
  try {
    fn();
    return TVR_OK;
  } catch (const tvr::Error& e) {
    g_last_error = e.what();
    return code_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TVR_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return TVR_ERR_INTERNAL;
  }
}

void require_arg(const void* p, const char* what) {
  if (p == nullptr) tvr::fail(tvr::ErrorCode::usage, std::string(what) + " is null");
}

std::vector<int> all_indices(const tvr::Dataset& ds) {
  std::vector<int> ix(ds.items.size());
  std::iota(ix.begin(), ix.end(), 0);
  return ix;
}

tvr::SynthConfig to_synth_config(const tvr_synth_config& c) {
  tvr::SynthConfig cfg;
  if (c.separable != 0)
    cfg = tvr::SynthConfig::separable(c.count, c.dim, c.seed);
  cfg.count = c.count;
  cfg.dim = c.dim;
  cfg.frames_min = c.frames_min;
  cfg.frames_max = c.frames_max;
  cfg.words_min = c.words_min;
  cfg.words_max = c.words_max;
  cfg.audio_fraction = c.audio_fraction;
  cfg.audio_informative_fraction = c.audio_informative_fraction;
  cfg.seed = c.seed;
  return cfg;
}

tvr::ObjectiveConfig to_objective_config(const tvr_eval_config& c) {
  tvr::ObjectiveConfig cfg;
  cfg.temperature = c.temperature;
  cfg.audio_weight = c.audio_weight;
  cfg.raw_dot = c.raw_dot != 0;
  cfg.workers = c.workers;
  cfg.validate();
  return cfg;
}

tvr_report to_report(const tvr::RetrievalReport& r) {
  return {r.r1, r.r5, r.r10, r.median_rank, r.mean_rank};
}

void fill_reports(const tvr::Tensor& fused, tvr_report* t2v, tvr_report* v2t) {
  if (t2v != nullptr) *t2v = to_report(tvr::evaluate(fused, tvr::Direction::t2v));
  if (v2t != nullptr) *v2t = to_report(tvr::evaluate(fused, tvr::Direction::v2t));
}

}  // namespace

extern "C" {

const char* tvr_last_error(void) { return g_last_error.c_str(); }

/* ---- datasets ---- */

tvr_status tvr_synth_config_default(tvr_synth_config* out) {
  return guarded([&] {
    require_arg(out, "config pointer");
    const tvr::SynthConfig d;
    *out = tvr_synth_config{d.count,
                            d.dim,
                            d.frames_min,
                            d.frames_max,
                            d.words_min,
                            d.words_max,
                            d.audio_fraction,
                            d.audio_informative_fraction,
                            d.seed,
                            0};
  });
}

tvr_status tvr_dataset_generate(const tvr_synth_config* cfg, tvr_dataset** out) {
  return guarded([&] {
    require_arg(cfg, "config pointer");
    require_arg(out, "dataset out-pointer");
    auto ds = std::make_unique<tvr_dataset>();
    ds->ds = tvr::generate_synthetic(to_synth_config(*cfg));
    *out = ds.release();
  });
}

tvr_status tvr_dataset_load(const char* manifest_path, const char* blob_path,
                            tvr_dataset** out) {
  return guarded([&] {
    require_arg(manifest_path, "manifest path");
    require_arg(blob_path, "blob path");
    require_arg(out, "dataset out-pointer");
    auto ds = std::make_unique<tvr_dataset>();
    ds->ds = tvr::load_dataset(manifest_path, blob_path);
    *out = ds.release();
  });
}

tvr_status tvr_dataset_save(const tvr_dataset* ds, const char* manifest_path,
                            const char* blob_path) {
  return guarded([&] {
    require_arg(ds, "dataset handle");
    require_arg(manifest_path, "manifest path");
    require_arg(blob_path, "blob path");
    tvr::save_dataset(ds->ds, manifest_path, blob_path);
  });
}

int32_t tvr_dataset_count(const tvr_dataset* ds) {
  return ds == nullptr ? -1 : ds->ds.count();
}

int32_t tvr_dataset_dim(const tvr_dataset* ds) {
  return ds == nullptr ? -1 : ds->ds.dim;
}

int32_t tvr_dataset_audio_count(const tvr_dataset* ds) {
  if (ds == nullptr) return -1;
  int32_t n = 0;
  for (const auto& item : ds->ds.items) n += item.audio.present ? 1 : 0;
  return n;
}

const char* tvr_dataset_item_id(const tvr_dataset* ds, int32_t index) {
  if (ds == nullptr || index < 0 || index >= ds->ds.count()) return nullptr;
  return ds->ds.items[static_cast<size_t>(index)].id.c_str();
}

void tvr_dataset_free(tvr_dataset* ds) { delete ds; }

/* ---- models ---- */

tvr_status tvr_model_init(int32_t dim, uint64_t seed, tvr_model** out) {
  return guarded([&] {
    require_arg(out, "model out-pointer");
    if (dim < 1) tvr::fail(tvr::ErrorCode::usage, "model width must be positive");
    auto m = std::make_unique<tvr_model>();
    m->model = tvr::init_model(dim, seed);
    *out = m.release();
  });
}

tvr_status tvr_model_load(const char* path, tvr_model** out) {
  return guarded([&] {
    require_arg(path, "model path");
    require_arg(out, "model out-pointer");
    auto m = std::make_unique<tvr_model>();
    m->model = tvr::load_model(path);
    *out = m.release();
  });
}

tvr_status tvr_model_save(const tvr_model* m, const char* path) {
  return guarded([&] {
    require_arg(m, "model handle");
    require_arg(path, "model path");
    tvr::save_model(m->model, path);
  });
}

int32_t tvr_model_dim(const tvr_model* m) {
  return m == nullptr ? -1 : m->model.dim;
}

int32_t tvr_model_stage(const tvr_model* m) {
  return m == nullptr ? -1 : static_cast<int32_t>(m->model.stage_marker);
}

double tvr_model_temperature(const tvr_model* m) {
  return m == nullptr ? std::nan("") : std::exp(m->model.log_temperature);
}

void tvr_model_free(tvr_model* m) { delete m; }

/* ---- training ---- */

tvr_status tvr_train_config_default(tvr_train_config* out) {
  return guarded([&] {
    require_arg(out, "config pointer");
    const tvr::TrainConfig d;
    const tvr::ObjectiveConfig o;
    *out = tvr_train_config{TVR_STAGE_VIDEO_TEXT,
                            d.epochs,
                            d.batch_size,
                            d.lr_mgfi,
                            d.lr_cmfi,
                            d.adamw.weight_decay,
                            o.temperature,
                            o.audio_weight,
                            0,
                            0,
                            d.max_steps,
                            d.seed,
                            o.workers,
                            nullptr};
  });
}

tvr_status tvr_train(tvr_model* m, const tvr_dataset* ds,
                     const tvr_train_config* cfg, tvr_train_summary* out) {
  return guarded([&] {
    require_arg(m, "model handle");
    require_arg(ds, "dataset handle");
    require_arg(cfg, "config pointer");
    if (cfg->stage != TVR_STAGE_VIDEO_TEXT && cfg->stage != TVR_STAGE_AUDIO)
      tvr::fail(tvr::ErrorCode::usage, "unknown training stage");

    tvr::TrainConfig tc;
    tc.stage = cfg->stage == TVR_STAGE_AUDIO ? tvr::Stage::audio : tvr::Stage::vt;
    tc.epochs = cfg->epochs;
    tc.batch_size = cfg->batch_size;
    tc.lr_mgfi = cfg->lr_video_text;
    tc.lr_cmfi = cfg->lr_audio;
    tc.adamw.weight_decay = cfg->weight_decay;
    tc.seed = cfg->seed;
    tc.objective.temperature = cfg->temperature;
    tc.objective.audio_weight = cfg->audio_weight;
    tc.objective.workers = cfg->workers;
    tc.train_mgfi_in_audio_stage = cfg->train_video_text_in_audio_stage != 0;
    tc.learn_temperature = cfg->learn_temperature != 0;
    tc.max_steps = cfg->max_steps;
    if (cfg->log_path != nullptr) tc.log_path = cfg->log_path;
    if (tc.learn_temperature) m->model.log_temperature = std::log(cfg->temperature);

    const tvr::TrainResult res = tvr::train(m->model, ds->ds, tc);
    if (out != nullptr)
      *out = tvr_train_summary{res.steps_run, res.skipped, res.first_loss,
                               res.last_loss};
  });
}

/* ---- evaluation ---- */

tvr_status tvr_eval_config_default(tvr_eval_config* out) {
  return guarded([&] {
    require_arg(out, "config pointer");
    const tvr::ObjectiveConfig o;
    *out = tvr_eval_config{1, 1, 1, o.temperature, o.audio_weight, 0, o.workers};
  });
}

tvr_status tvr_evaluate(const tvr_model* m, const tvr_dataset* ds,
                        const tvr_eval_config* cfg, tvr_report* t2v_out,
                        tvr_report* v2t_out) {
  return guarded([&] {
    require_arg(m, "model handle");
    require_arg(ds, "dataset handle");
    require_arg(cfg, "config pointer");
    const tvr::ObjectiveConfig ocfg = to_objective_config(*cfg);
    const tvr::ScoreMask mask{cfg->use_sentence_frame != 0,
                              cfg->use_word_frame != 0,
                              cfg->use_audio_sentence != 0};
    const auto ix = all_indices(ds->ds);
    const tvr::ScoreComponents sc =
        tvr::score_components(ds->ds, ix, m->model.mgfi, m->model.cmfi, ocfg);
    fill_reports(tvr::assemble_scores(sc, mask, ocfg), t2v_out, v2t_out);
  });
}

tvr_status tvr_score_matrix(const tvr_model* m, const tvr_dataset* ds,
                            const tvr_eval_config* cfg, double* out) {
  return guarded([&] {
    require_arg(m, "model handle");
    require_arg(ds, "dataset handle");
    require_arg(cfg, "config pointer");
    require_arg(out, "score buffer");
    const tvr::ObjectiveConfig ocfg = to_objective_config(*cfg);
    const tvr::ScoreMask mask{cfg->use_sentence_frame != 0,
                              cfg->use_word_frame != 0,
                              cfg->use_audio_sentence != 0};
    const auto ix = all_indices(ds->ds);
    const tvr::ScoreComponents sc =
        tvr::score_components(ds->ds, ix, m->model.mgfi, m->model.cmfi, ocfg);
    const tvr::Tensor fused = tvr::assemble_scores(sc, mask, ocfg);
    for (int i = 0; i < fused.size(); ++i) out[i] = fused[i];
  });
}

/* ---- ablation ---- */

tvr_status tvr_ablate(const tvr_model* m, const tvr_dataset* ds,
                      const tvr_eval_config* cfg,
                      tvr_ablation_row rows[TVR_ABLATION_ROWS]) {
  return guarded([&] {
    require_arg(m, "model handle");
    require_arg(ds, "dataset handle");
    require_arg(cfg, "config pointer");
    require_arg(rows, "row buffer");
    const tvr::ObjectiveConfig ocfg = to_objective_config(*cfg);
    const auto ix = all_indices(ds->ds);
    const tvr::ScoreComponents sc =
        tvr::score_components(ds->ds, ix, m->model.mgfi, m->model.cmfi, ocfg);

    // Baseline, each term alone, each pair, everything.
    constexpr bool kRows[TVR_ABLATION_ROWS][3] = {
        {false, false, false}, {true, false, false}, {false, true, false},
        {false, false, true},  {true, true, false},  {false, true, true},
        {true, false, true},   {true, true, true},
    };
    for (int r = 0; r < TVR_ABLATION_ROWS; ++r) {
      const tvr::ScoreMask mask{kRows[r][0], kRows[r][1], kRows[r][2]};
      const tvr::Tensor fused = tvr::assemble_scores(sc, mask, ocfg);
      rows[r].use_sentence_frame = mask.sentence_frame ? 1 : 0;
      rows[r].use_word_frame = mask.word_frame ? 1 : 0;
      rows[r].use_audio_sentence = mask.audio_sentence ? 1 : 0;
      fill_reports(fused, &rows[r].t2v, &rows[r].v2t);
    }
  });
}

/* ---- gradient audit ---- */

tvr_status tvr_gradcheck(uint64_t seed, double* worst_out) {
  return guarded([&] {
    require_arg(worst_out, "result pointer");
    *worst_out = tvr::gradcheck_all(seed).worst();
  });
}

}  // extern "C"
