#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmfi.hpp"
#include "embeddings.hpp"
#include "mgfi.hpp"
#include "objective.hpp"

namespace tvr {

// Decoupled-weight-decay Adam. Moment state is keyed by tensor name so the
// same optimizer can drive parameter groups with different learning rates.
struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg);

  // Advances the shared step counter; call once per training step before the
  // per-tensor updates.
  void begin_step();
  void update(const std::string& name, Tensor& param, const Tensor& grad,
              double lr);
  // Same schedule, decay forced to zero (used for the temperature).
  void update_without_decay(const std::string& name, Tensor& param,
                            const Tensor& grad, double lr);
  long step_count() const { return t_; }

 private:
  struct Slot {
    Tensor m, v;
  };
  void apply(const std::string& name, Tensor& param, const Tensor& grad,
             double lr, double weight_decay);
  AdamWConfig cfg_;
  std::unordered_map<std::string, Slot> slots_;
  long t_ = 0;
};

enum class Stage { vt, audio };

// Both heads plus the (optionally learnable) fusion temperature.
struct Model {
  int dim = 0;
  MgfiParams mgfi;
  CmfiParams cmfi;
  double log_temperature = 0.0;
  // 0 = initialized, 1 = video-text stage done, 2 = audio stage done.
  std::uint32_t stage_marker = 0;
};

Model init_model(int dim, std::uint64_t seed, int hidden = 0,
                 Activation act = Activation::gelu);

// Binary checkpoint: magic, version, width, stage marker, then one record
// per tensor (name, shape, f32 payload) in a fixed canonical order.
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

struct TrainConfig {
  Stage stage = Stage::vt;
  int epochs = 5;
  int batch_size = 32;
  double lr_mgfi = 1e-4;
  double lr_cmfi = 5e-5;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
  ObjectiveConfig objective;  // temperature ignored when learn_temperature
  // The audio stage leaves the video-text head untouched unless asked.
  bool train_mgfi_in_audio_stage = false;
  bool learn_temperature = false;
  int max_steps = 0;  // 0 = run every epoch to completion
  std::string log_path;  // step log destination; empty = no file

  void validate() const;
};

struct StepRecord {
  int step = 0;
  Stage stage = Stage::vt;
  int epoch = 0;
  double loss = 0.0;
  double t2v_r1 = 0.0;  // batch-level recall, percent
  double v2t_r1 = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  int steps_run = 0;
  int skipped = 0;  // degenerate batches
  double first_loss = 0.0;
  double last_loss = 0.0;
};

// Runs one stage: epochs of seeded-permutation batches (last partial batch
// kept), a forward/backward over each batch, and one optimizer step per
// batch. The video-text stage trains the multi-granularity head with the
// audio term removed from the fusion; the audio stage trains the audio head
// against the full fusion with the other head frozen.
TrainResult train(Model& model, const Dataset& ds, const TrainConfig& cfg);

const char* stage_name(Stage s);

}  // namespace tvr
