// Command-line front end. Links only the shared C API, so it doubles as a
// living example of driving the library from outside.
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <tvr.h>

namespace {

constexpr double kGradTolerance = 1e-4;

int exit_code_for(tvr_status st) { return st == TVR_ERR_USAGE ? 2 : 1; }

// Every failing C call funnels through here: prints the message, yields the
// process exit code.
int report_failure(tvr_status st) {
  std::cerr << "error: " << tvr_last_error() << "\n";
  return exit_code_for(st);
}

struct Range {
  int lo = 0;
  int hi = 0;
};

// "N" or "LO:HI".
bool parse_range(const std::string& text, Range* out) {
  const auto colon = text.find(':');
  try {
    size_t used = 0;
    if (colon == std::string::npos) {
      out->lo = out->hi = std::stoi(text, &used);
      return used == text.size();
    }
    out->lo = std::stoi(text.substr(0, colon), &used);
    if (used != colon) return false;
    const std::string rest = text.substr(colon + 1);
    out->hi = std::stoi(rest, &used);
    return used == rest.size();
  } catch (const std::exception&) {
    return false;
  }
}

struct DatasetGuard {
  tvr_dataset* p = nullptr;
  ~DatasetGuard() { tvr_dataset_free(p); }
};

struct ModelGuard {
  tvr_model* p = nullptr;
  ~ModelGuard() { tvr_model_free(p); }
};

int load_bundle(const std::string& prefix, DatasetGuard* ds) {
  const tvr_status st = tvr_dataset_load((prefix + ".manifest").c_str(),
                                         (prefix + ".blob").c_str(), &ds->p);
  return st == TVR_OK ? 0 : report_failure(st);
}

int load_model(const std::string& path, ModelGuard* m) {
  const tvr_status st = tvr_model_load(path.c_str(), &m->p);
  return st == TVR_OK ? 0 : report_failure(st);
}

// Toggle labels: sentence-frame, word-frame, audio-sentence.
bool parse_modules(const std::string& text, tvr_eval_config* cfg,
                   std::string* label) {
  cfg->use_sentence_frame = 0;
  cfg->use_word_frame = 0;
  cfg->use_audio_sentence = 0;
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
  for (const std::string& part : parts) {
    if (part.empty()) continue;
    if (part == "s-f")
      cfg->use_sentence_frame = 1;
    else if (part == "w-f")
      cfg->use_word_frame = 1;
    else if (part == "a-s")
      cfg->use_audio_sentence = 1;
    else
      return false;
  }
  std::string built;
  if (cfg->use_sentence_frame) built = "s-f";
  if (cfg->use_word_frame) built += built.empty() ? "w-f" : "+w-f";
  if (cfg->use_audio_sentence) built += built.empty() ? "a-s" : "+a-s";
  *label = built.empty() ? "base" : built;
  return true;
}

std::string report_line(const char* direction, const tvr_report& r) {
  char line[160];
  std::snprintf(line, sizeof line,
                "direction %s r1 %.2f r5 %.2f r10 %.2f mdr %.1f mnr %.2f",
                direction, r.r1, r.r5, r.r10, r.median_rank, r.mean_rank);
  return line;
}

int emit_report(const std::string& text, const std::string& path) {
  std::cout << text;
  if (path.empty()) return 0;
  std::ofstream out(path, std::ios::trunc);
  out << text;
  out.flush();
  if (!out) {
    std::cerr << "error: cannot write " << path << "\n";
    return 1;
  }
  return 0;
}

// ---- subcommands ----

struct SynthArgs {
  int count = 64;
  int dim = 32;
  std::string frames = "4:8";
  std::string words = "3:8";
  double audio_frac = 0.0;
  double audio_informative_frac = 0.0;
  std::uint64_t seed = 0;
  bool separable = false;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  Range frames, words;
  if (!parse_range(a.frames, &frames) || !parse_range(a.words, &words)) {
    std::cerr << "error: --frames and --words take N or LO:HI\n";
    return 2;
  }
  tvr_synth_config cfg;
  if (tvr_status st = tvr_synth_config_default(&cfg); st != TVR_OK)
    return report_failure(st);
  cfg.count = a.count;
  cfg.dim = a.dim;
  cfg.frames_min = frames.lo;
  cfg.frames_max = frames.hi;
  cfg.words_min = words.lo;
  cfg.words_max = words.hi;
  cfg.audio_fraction = a.audio_frac;
  cfg.audio_informative_fraction = a.audio_informative_frac;
  cfg.seed = a.seed;
  cfg.separable = a.separable ? 1 : 0;

  DatasetGuard ds;
  if (tvr_status st = tvr_dataset_generate(&cfg, &ds.p); st != TVR_OK)
    return report_failure(st);
  const std::string manifest = a.out + ".manifest";
  const std::string blob = a.out + ".blob";
  if (tvr_status st = tvr_dataset_save(ds.p, manifest.c_str(), blob.c_str());
      st != TVR_OK)
    return report_failure(st);
  std::cout << "wrote " << manifest << " and " << blob << " items "
            << tvr_dataset_count(ds.p) << " dim " << tvr_dataset_dim(ds.p)
            << " audio " << tvr_dataset_audio_count(ds.p) << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string stage = "vt";
  std::string init_checkpoint;
  std::string out_checkpoint;
  std::string log;
  int epochs = 5;
  int batch_size = 32;
  double lr = 0.0;  // 0: keep the stage default
  std::uint64_t seed = 0;
  double temperature = 100.0;
  bool unit_temperature = false;
  double audio_weight = 1.0;
  bool learn_temperature = false;
  int max_steps = 0;
  int workers = 1;
};

int run_train(const TrainArgs& a) {
  if (a.stage != "vt" && a.stage != "audio") {
    std::cerr << "error: --stage must be vt or audio\n";
    return 2;
  }
  const bool audio_stage = a.stage == "audio";
  if (audio_stage && a.init_checkpoint.empty()) {
    std::cerr << "error: the audio stage resumes from a video-text "
                 "checkpoint; pass --init-checkpoint\n";
    return 2;
  }

  DatasetGuard ds;
  if (int rc = load_bundle(a.data, &ds); rc != 0) return rc;

  ModelGuard model;
  if (!a.init_checkpoint.empty()) {
    if (int rc = load_model(a.init_checkpoint, &model); rc != 0) return rc;
  } else if (tvr_status st =
                 tvr_model_init(tvr_dataset_dim(ds.p), a.seed, &model.p);
             st != TVR_OK) {
    return report_failure(st);
  }

  tvr_train_config cfg;
  if (tvr_status st = tvr_train_config_default(&cfg); st != TVR_OK)
    return report_failure(st);
  cfg.stage = audio_stage ? TVR_STAGE_AUDIO : TVR_STAGE_VIDEO_TEXT;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  if (a.lr > 0.0) (audio_stage ? cfg.lr_audio : cfg.lr_video_text) = a.lr;
  cfg.temperature = a.unit_temperature ? 1.0 : a.temperature;
  cfg.audio_weight = a.audio_weight;
  cfg.learn_temperature = a.learn_temperature ? 1 : 0;
  cfg.max_steps = a.max_steps;
  cfg.seed = a.seed;
  cfg.workers = a.workers;
  const std::string log_path = a.log.empty() ? a.out_checkpoint + ".log" : a.log;
  cfg.log_path = log_path.c_str();

  tvr_train_summary sum;
  if (tvr_status st = tvr_train(model.p, ds.p, &cfg, &sum); st != TVR_OK)
    return report_failure(st);
  if (tvr_status st = tvr_model_save(model.p, a.out_checkpoint.c_str());
      st != TVR_OK)
    return report_failure(st);

  char line[200];
  std::snprintf(line, sizeof line,
                "stage %s steps %d skipped %d first_loss %.17g last_loss %.17g",
                a.stage.c_str(), sum.steps_run, sum.skipped, sum.first_loss,
                sum.last_loss);
  std::cout << line << "\n"
            << "wrote " << a.out_checkpoint << " log " << log_path << "\n";
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string modules = "s-f,w-f,a-s";
  std::string direction = "both";
  std::string report_out;
  double audio_weight = 1.0;
  int workers = 1;
};

int run_eval(const EvalArgs& a) {
  if (a.direction != "t2v" && a.direction != "v2t" && a.direction != "both") {
    std::cerr << "error: --direction must be t2v, v2t, or both\n";
    return 2;
  }
  DatasetGuard ds;
  if (int rc = load_bundle(a.data, &ds); rc != 0) return rc;
  ModelGuard model;
  if (int rc = load_model(a.checkpoint, &model); rc != 0) return rc;

  tvr_eval_config cfg;
  if (tvr_status st = tvr_eval_config_default(&cfg); st != TVR_OK)
    return report_failure(st);
  std::string label;
  if (!parse_modules(a.modules, &cfg, &label)) {
    std::cerr << "error: --modules takes a comma list drawn from s-f,w-f,a-s\n";
    return 2;
  }
  cfg.audio_weight = a.audio_weight;
  cfg.workers = a.workers;
  if (cfg.use_audio_sentence && tvr_dataset_audio_count(ds.p) == 0)
    std::cerr << "warning: no item carries audio; the audio-sentence term "
                 "contributes zero\n";

  tvr_report t2v, v2t;
  const bool want_t2v = a.direction != "v2t";
  const bool want_v2t = a.direction != "t2v";
  if (tvr_status st = tvr_evaluate(model.p, ds.p, &cfg,
                                   want_t2v ? &t2v : nullptr,
                                   want_v2t ? &v2t : nullptr);
      st != TVR_OK)
    return report_failure(st);

  std::string text = "modules " + label + "\n";
  if (want_t2v) text += report_line("t2v", t2v) + "\n";
  if (want_v2t) text += report_line("v2t", v2t) + "\n";
  return emit_report(text, a.report_out);
}

struct AblateArgs {
  std::string data;
  std::string checkpoint;
  std::string report_out;
  double audio_weight = 1.0;
  int workers = 1;
};

int run_ablate(const AblateArgs& a) {
  DatasetGuard ds;
  if (int rc = load_bundle(a.data, &ds); rc != 0) return rc;
  ModelGuard model;
  if (int rc = load_model(a.checkpoint, &model); rc != 0) return rc;

  tvr_eval_config cfg;
  if (tvr_status st = tvr_eval_config_default(&cfg); st != TVR_OK)
    return report_failure(st);
  cfg.audio_weight = a.audio_weight;
  cfg.workers = a.workers;

  tvr_ablation_row rows[TVR_ABLATION_ROWS];
  if (tvr_status st = tvr_ablate(model.p, ds.p, &cfg, rows); st != TVR_OK)
    return report_failure(st);

  std::string text;
  for (const tvr_ablation_row& row : rows) {
    std::string label;
    if (row.use_sentence_frame) label = "s-f";
    if (row.use_word_frame) label += label.empty() ? "w-f" : "+w-f";
    if (row.use_audio_sentence) label += label.empty() ? "a-s" : "+a-s";
    if (label.empty()) label = "base";
    text += "row " + label + " " + report_line("t2v", row.t2v) + "\n";
    text += "row " + label + " " + report_line("v2t", row.v2t) + "\n";
  }
  return emit_report(text, a.report_out);
}

struct ScoreArgs {
  std::string gallery;
  std::string checkpoint;
  std::string query_item;
  int top_k = 10;
  double audio_weight = 1.0;
  int workers = 1;
};

int run_score(const ScoreArgs& a) {
  DatasetGuard ds;
  if (int rc = load_bundle(a.gallery, &ds); rc != 0) return rc;
  ModelGuard model;
  if (int rc = load_model(a.checkpoint, &model); rc != 0) return rc;

  const int count = tvr_dataset_count(ds.p);
  int query = -1;
  for (int i = 0; i < count; ++i)
    if (a.query_item == tvr_dataset_item_id(ds.p, i)) {
      query = i;
      break;
    }
  if (query < 0) {
    std::cerr << "error: no gallery item is named " << a.query_item << "\n";
    return 2;
  }

  tvr_eval_config cfg;
  if (tvr_status st = tvr_eval_config_default(&cfg); st != TVR_OK)
    return report_failure(st);
  cfg.audio_weight = a.audio_weight;
  cfg.workers = a.workers;
  std::vector<double> scores(static_cast<size_t>(count) * count);
  if (tvr_status st = tvr_score_matrix(model.p, ds.p, &cfg, scores.data());
      st != TVR_OK)
    return report_failure(st);

  // The query's text ranks every gallery video: one column of the matrix.
  struct Entry {
    double score;
    std::string id;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  for (int i = 0; i < count; ++i)
    entries.push_back(
        {scores[static_cast<size_t>(i) * count + query],
         tvr_dataset_item_id(ds.p, i)});
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& x, const Entry& y) {
                     if (x.score != y.score) return x.score > y.score;
                     return x.id < y.id;
                   });

  int k = a.top_k;
  if (k < 0) {
    std::cerr << "error: --top-k must be nonnegative\n";
    return 2;
  }
  if (k > count) {
    std::cerr << "warning: top-k clamped to the gallery size " << count << "\n";
    k = count;
  }
  char line[160];
  for (int r = 0; r < k; ++r) {
    std::snprintf(line, sizeof line, "%d %s %.6f", r + 1,
                  entries[r].id.c_str(), entries[r].score);
    std::cout << line << "\n";
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  double worst = 0.0;
  if (tvr_status st = tvr_gradcheck(seed, &worst); st != TVR_OK)
    return report_failure(st);
  char line[120];
  std::snprintf(line, sizeof line, "gradcheck seed %llu worst %.3g tolerance %g",
                static_cast<unsigned long long>(seed), worst, kGradTolerance);
  const bool pass = worst < kGradTolerance;
  std::cout << line << "\n" << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"text-to-video retrieval over precomputed embeddings"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "generate a synthetic dataset");
  s->add_option("--count", synth.count, "items to generate");
  s->add_option("--dim", synth.dim, "embedding width");
  s->add_option("--frames", synth.frames, "frames per video, N or LO:HI");
  s->add_option("--words", synth.words, "words per caption, N or LO:HI");
  s->add_option("--audio-frac", synth.audio_frac, "fraction of items with audio");
  s->add_option("--audio-informative-frac", synth.audio_informative_frac,
                "fraction of audio items that lean on it");
  s->add_option("--seed", synth.seed, "generator seed");
  s->add_flag("--separable", synth.separable, "noise-free variant");
  s->add_option("--out", synth.out, "output prefix for .manifest/.blob")
      ->required();

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "train one stage");
  t->add_option("--data", train.data, "dataset prefix")->required();
  t->add_option("--stage", train.stage, "vt or audio");
  t->add_option("--init-checkpoint", train.init_checkpoint,
                "checkpoint to resume from");
  t->add_option("--out-checkpoint", train.out_checkpoint, "checkpoint to write")
      ->required();
  t->add_option("--epochs", train.epochs, "epochs to run");
  t->add_option("--batch-size", train.batch_size, "items per batch");
  t->add_option("--lr", train.lr, "learning rate for the active stage");
  t->add_option("--seed", train.seed, "init and shuffling seed");
  auto* temp_opt =
      t->add_option("--temperature", train.temperature, "fused-score scale");
  t->add_flag("--unit-temperature", train.unit_temperature,
              "score with the unscaled objective (temperature 1)")
      ->excludes(temp_opt);
  t->add_option("--audio-weight", train.audio_weight,
                "audio term weight in the fusion");
  t->add_flag("--learn-temperature", train.learn_temperature,
              "make the temperature a trained parameter");
  t->add_option("--max-steps", train.max_steps, "stop after this many steps");
  t->add_option("--workers", train.workers, "scoring threads");
  t->add_option("--log", train.log, "run log path");

  EvalArgs eval;
  CLI::App* e = app.add_subcommand("eval", "score a dataset and rank it");
  e->add_option("--data", eval.data, "dataset prefix")->required();
  e->add_option("--checkpoint", eval.checkpoint, "model checkpoint")->required();
  e->add_option("--modules", eval.modules,
                "comma list from s-f,w-f,a-s; empty = mean-pool baseline");
  e->add_option("--direction", eval.direction, "t2v, v2t, or both");
  e->add_option("--report-out", eval.report_out, "also write the report here");
  e->add_option("--audio-weight", eval.audio_weight,
                "audio term weight in the fusion");
  e->add_option("--workers", eval.workers, "scoring threads");

  AblateArgs ablate;
  CLI::App* b = app.add_subcommand("ablate", "evaluate every toggle combination");
  b->add_option("--data", ablate.data, "dataset prefix")->required();
  b->add_option("--checkpoint", ablate.checkpoint, "model checkpoint")
      ->required();
  b->add_option("--report-out", ablate.report_out, "also write the report here");
  b->add_option("--audio-weight", ablate.audio_weight,
                "audio term weight in the fusion");
  b->add_option("--workers", ablate.workers, "scoring threads");

  ScoreArgs score;
  CLI::App* c = app.add_subcommand("score", "rank the gallery for one query");
  c->add_option("--gallery", score.gallery, "dataset prefix")->required();
  c->add_option("--checkpoint", score.checkpoint, "model checkpoint")
      ->required();
  c->add_option("--query-item", score.query_item,
                "gallery item whose caption is the query")
      ->required();
  c->add_option("--top-k", score.top_k, "results to print");
  c->add_option("--audio-weight", score.audio_weight,
                "audio term weight in the fusion");
  c->add_option("--workers", score.workers, "scoring threads");

  std::uint64_t gradcheck_seed = 0;
  CLI::App* g = app.add_subcommand("gradcheck",
                                   "audit gradients against finite differences");
  g->add_option("--seed", gradcheck_seed, "probe seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }

  try {
    if (s->parsed()) return run_synth(synth);
    if (t->parsed()) return run_train(train);
    if (e->parsed()) return run_eval(eval);
    if (b->parsed()) return run_ablate(ablate);
    if (c->parsed()) return run_score(score);
    if (g->parsed()) return run_gradcheck(gradcheck_seed);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
