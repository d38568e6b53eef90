#include "trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "metrics.hpp"
#include "rng.hpp"

namespace tvr {

// ---- optimizer ----

AdamW::AdamW(AdamWConfig cfg) : cfg_(cfg) {
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) ||
      !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    fail(ErrorCode::usage, "adamw: betas must lie in [0, 1)");
  if (!(cfg.epsilon > 0.0)) fail(ErrorCode::usage, "adamw: epsilon must be positive");
  if (!(cfg.weight_decay >= 0.0))
    fail(ErrorCode::usage, "adamw: weight decay must be nonnegative");
}

void AdamW::begin_step() { ++t_; }

void AdamW::apply(const std::string& name, Tensor& param, const Tensor& grad,
                  double lr, double weight_decay) {
  if (t_ < 1) fail(ErrorCode::usage, "adamw: update before begin_step");
  if (!param.same_shape(grad))
    fail(ErrorCode::dimension, "adamw: parameter and gradient shapes disagree");
  Slot& s = slots_[name];
  if (s.m.size() != param.size()) {
    s.m = param;
    s.m.fill(0.0);
    s.v = s.m;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (int i = 0; i < param.size(); ++i) {
    s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * grad[i];
    s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double m_hat = s.m[i] / bc1;
    const double v_hat = s.v[i] / bc2;
    // Decoupled decay: the regularization term never enters the moments.
    param[i] -=
        lr * (m_hat / (std::sqrt(v_hat) + cfg_.epsilon) + weight_decay * param[i]);
  }
}

void AdamW::update(const std::string& name, Tensor& param, const Tensor& grad,
                   double lr) {
  apply(name, param, grad, lr, cfg_.weight_decay);
}

void AdamW::update_without_decay(const std::string& name, Tensor& param,
                                 const Tensor& grad, double lr) {
  apply(name, param, grad, lr, 0.0);
}

// ---- model ----

Model init_model(int dim, std::uint64_t seed, int hidden, Activation act) {
  Rng rng(seed);
  Model m;
  m.dim = dim;
  m.mgfi = MgfiParams::init(dim, rng, hidden, act);
  m.cmfi = CmfiParams::init(dim);
  m.log_temperature = std::log(100.0);
  return m;
}

// ---- checkpoint ----

namespace {

constexpr char kMagic[4] = {'M', 'G', 'F', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr double kLnEpsilon = 1e-5;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

struct Reader {
  const std::string& bytes;
  size_t off = 0;

  void need(size_t n, const char* what) {
    if (off + n > bytes.size())
      fail(ErrorCode::format, std::string("truncated checkpoint while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    const auto b = [&](size_t i) {
      return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + i]));
    };
    const std::uint32_t v = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
    off += 4;
    return v;
  }
  double f32(const char* what) {
    return static_cast<double>(std::bit_cast<float>(u32(what)));
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(off, n);
    off += n;
    return s;
  }
};

struct NamedRecord {
  std::string name;
  Tensor tensor;
};

void append_record(std::string& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (int i = 0; i < t.size(); ++i) put_f32(out, t[i]);
}

std::vector<std::pair<std::string, const Tensor*>> model_tensors(const Model& m) {
  auto out = named_tensors(m.mgfi);
  auto c = named_tensors(m.cmfi);
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

void require_fixed_epsilon(const LayerNormParams& p, const char* which) {
  if (p.epsilon != kLnEpsilon)
    fail(ErrorCode::usage, std::string("checkpoint format fixes the ") + which +
                               " layer-norm epsilon at 1e-5");
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

}  // namespace

void save_model(const Model& m, const std::string& path) {
  if (m.dim < 1 || m.mgfi.dim() != m.dim || m.cmfi.dim() != m.dim)
    fail(ErrorCode::usage, "model width is inconsistent");
  require_fixed_epsilon(m.mgfi.ln_text, "text");
  require_fixed_epsilon(m.mgfi.ln_video, "video");
  require_fixed_epsilon(m.mgfi.ln_z, "output");
  if (!m.mgfi.share_query_across_granularities)
    require_fixed_epsilon(m.mgfi.ln_word, "word");
  if (!m.mgfi.share_ff_across_granularities)
    require_fixed_epsilon(m.mgfi.ln_o_word, "word-output");
  require_fixed_epsilon(m.cmfi.ln_audio, "audio");

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(m.dim));
  put_u32(out, m.stage_marker);

  std::vector<std::pair<std::string, Tensor>> extra;
  Tensor act = Tensor::vec(1);
  act[0] = m.mgfi.ff.activation == Activation::relu ? 1.0 : 0.0;
  extra.emplace_back("mgfi.ff.activation", act);
  Tensor lt = Tensor::vec(1);
  lt[0] = m.log_temperature;
  extra.emplace_back("objective.log_temperature", lt);

  const auto tensors = model_tensors(m);
  put_u32(out, static_cast<std::uint32_t>(tensors.size() + extra.size()));
  for (const auto& [name, t] : tensors) append_record(out, name, *t);
  for (const auto& [name, t] : extra) append_record(out, name, t);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::io, "cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) fail(ErrorCode::io, "short write to " + path);
}

Model load_model(const std::string& path) {
  const std::string bytes = file_bytes(path);
  Reader r{bytes};
  if (r.str(4, "magic") != std::string(kMagic, 4))
    fail(ErrorCode::format, path + " is not a model checkpoint");
  if (r.u32("version") != kVersion)
    fail(ErrorCode::format, "unsupported checkpoint version");
  const int dim = static_cast<int>(r.u32("width"));
  if (dim < 1) fail(ErrorCode::format, "checkpoint width must be positive");
  const std::uint32_t stage = r.u32("stage");
  if (stage > 2) fail(ErrorCode::format, "unknown checkpoint stage marker");
  const std::uint32_t count = r.u32("record count");

  std::vector<NamedRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("record name length");
    NamedRecord rec;
    rec.name = r.str(name_len, "record name");
    const std::uint32_t rank = r.u32("record rank");
    if (rank < 1 || rank > 2)
      fail(ErrorCode::format, "record " + rec.name + " has unsupported rank");
    std::uint32_t d0 = r.u32("record shape");
    std::uint32_t d1 = rank == 2 ? r.u32("record shape") : 1;
    if (d0 < 1 || d1 < 1 || static_cast<std::uint64_t>(d0) * d1 > (1u << 28))
      fail(ErrorCode::format, "record " + rec.name + " has an invalid shape");
    rec.tensor = rank == 1 ? Tensor::vec(static_cast<int>(d0))
                           : Tensor::mat(static_cast<int>(d0), static_cast<int>(d1));
    for (int k = 0; k < rec.tensor.size(); ++k)
      rec.tensor[k] = r.f32("record payload");
    records.push_back(std::move(rec));
  }
  if (r.off != bytes.size())
    fail(ErrorCode::format, "trailing bytes after the last checkpoint record");

  const auto find = [&](const std::string& name) -> const Tensor* {
    for (const auto& rec : records)
      if (rec.name == name) return &rec.tensor;
    return nullptr;
  };

  // The optional word-branch records reveal the sharing flags; the feed-
  // forward record reveals the hidden width.
  const bool word_query = find("mgfi.wq_word") != nullptr;
  const bool word_ff = find("mgfi.ff_word.w1") != nullptr;
  const Tensor* w1 = find("mgfi.ff.w1");
  const Tensor* act = find("mgfi.ff.activation");
  if (!w1 || !act)
    fail(ErrorCode::format, "checkpoint is missing required records");
  if (act->size() != 1 || (act->data()[0] != 0.0 && act->data()[0] != 1.0))
    fail(ErrorCode::format, "invalid activation record");

  Model m;
  m.dim = dim;
  m.stage_marker = stage;
  {
    Rng rng(0);
    m.mgfi = MgfiParams::init(dim, rng, std::max(1, w1->cols()),
                              act->data()[0] == 1.0 ? Activation::relu
                                                    : Activation::gelu);
  }
  if (word_query) m.mgfi.unshare_query();
  if (word_ff) m.mgfi.unshare_ff();
  m.cmfi = CmfiParams::init(dim);

  // Expected order: model tensors, then the activation and temperature
  // scalars. Enforce the canonical sequence exactly.
  std::vector<std::string> expected;
  for (const auto& [name, t] : model_tensors(m)) expected.push_back(name);
  expected.push_back("mgfi.ff.activation");
  expected.push_back("objective.log_temperature");
  if (records.size() != expected.size())
    fail(ErrorCode::format, "unexpected checkpoint record count");
  for (size_t i = 0; i < expected.size(); ++i)
    if (records[i].name != expected[i])
      fail(ErrorCode::format, "checkpoint records out of order: found " +
                                  records[i].name + " where " + expected[i] +
                                  " belongs");

  auto params = named_tensors(m.mgfi);
  auto cparams = named_tensors(m.cmfi);
  params.insert(params.end(), cparams.begin(), cparams.end());
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& rec = records[i].tensor;
    Tensor& dst = *params[i].second;
    if (!rec.same_shape(dst))
      fail(ErrorCode::format, "record " + records[i].name + " has the wrong shape");
    if (!rec.all_finite())
      fail(ErrorCode::format, "record " + records[i].name + " holds non-finite values");
    dst = rec;
  }
  const Tensor& lt = records.back().tensor;
  if (lt.size() != 1 || !lt.all_finite())
    fail(ErrorCode::format, "invalid temperature record");
  m.log_temperature = lt[0];
  return m;
}

// ---- training ----

const char* stage_name(Stage s) { return s == Stage::vt ? "vt" : "audio"; }

void TrainConfig::validate() const {
  if (epochs < 0) fail(ErrorCode::usage, "epochs must be nonnegative");
  if (batch_size < 1) fail(ErrorCode::usage, "batch size must be positive");
  if (!(lr_mgfi > 0.0) || !(lr_cmfi > 0.0))
    fail(ErrorCode::usage, "learning rates must be positive");
  if (max_steps < 0) fail(ErrorCode::usage, "max steps must be nonnegative");
  objective.validate();
  AdamW probe(adamw);  // reuses the optimizer's own validation
}

TrainResult train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.count() < 1) fail(ErrorCode::usage, "cannot train on an empty dataset");
  if (ds.dim != model.dim)
    fail(ErrorCode::dimension, "dataset width does not match model");

  const bool audio_stage = cfg.stage == Stage::audio;
  const bool want_mgfi = !audio_stage || cfg.train_mgfi_in_audio_stage;
  const bool want_cmfi = audio_stage;

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::trunc);
    if (!log) fail(ErrorCode::io, "cannot open " + cfg.log_path + " for writing");
  }

  AdamW opt(cfg.adamw);
  Rng rng(cfg.seed);
  ObjectiveConfig ocfg = cfg.objective;
  if (!cfg.learn_temperature)
    model.log_temperature = std::log(ocfg.temperature);

  TrainResult res;
  int attempt = 0;
  bool done = false;
  char line[160];
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    const std::vector<int> perm = rng.permutation(ds.count());
    for (size_t start = 0; start < perm.size() && !done;
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(perm.size(), start + static_cast<size_t>(cfg.batch_size));
      const std::span<const int> batch(perm.data() + start, end - start);
      if (cfg.learn_temperature)
        ocfg.temperature = std::exp(model.log_temperature);

      ++attempt;
      MgfiGrads mg = MgfiGrads::zeros_like(model.mgfi);
      CmfiGrads cg = CmfiGrads::zeros_like(model.cmfi);
      BatchResult br;
      try {
        br = batch_loss_and_grads(ds, batch, model.mgfi, model.cmfi, ocfg,
                                  /*include_audio=*/audio_stage,
                                  want_mgfi ? &mg : nullptr,
                                  want_cmfi ? &cg : nullptr);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::degenerate) throw;
        ++res.skipped;
        std::cerr << "warning: skipping degenerate batch at step " << attempt
                  << ": " << e.what() << "\n";
        if (log)
          log << "step " << attempt << " stage " << stage_name(cfg.stage)
              << " epoch " << epoch << " skipped degenerate\n";
        continue;
      }

      opt.begin_step();
      if (want_mgfi) {
        auto params = named_tensors(model.mgfi);
        auto grads = named_tensors(model.mgfi, mg);
        for (size_t i = 0; i < params.size(); ++i)
          opt.update(params[i].first, *params[i].second, *grads[i].second,
                     cfg.lr_mgfi);
      }
      if (want_cmfi) {
        auto params = named_tensors(model.cmfi);
        auto grads = named_tensors(model.cmfi, cg);
        for (size_t i = 0; i < params.size(); ++i)
          opt.update(params[i].first, *params[i].second, *grads[i].second,
                     cfg.lr_cmfi);
      }
      if (cfg.learn_temperature) {
        // Temperature stays out of the weight-decay pool.
        Tensor lt = Tensor::vec(1);
        lt[0] = model.log_temperature;
        Tensor g = Tensor::vec(1);
        g[0] = br.d_log_temperature;
        opt.update_without_decay("objective.log_temperature", lt, g,
                                 audio_stage ? cfg.lr_cmfi : cfg.lr_mgfi);
        model.log_temperature = lt[0];
      }

      StepRecord rec;
      rec.step = attempt;
      rec.stage = cfg.stage;
      rec.epoch = epoch;
      rec.loss = br.loss;
      rec.t2v_r1 = evaluate(br.fused, Direction::t2v).r1;
      rec.v2t_r1 = evaluate(br.fused, Direction::v2t).r1;
      res.steps.push_back(rec);
      if (log) {
        std::snprintf(line, sizeof line,
                      "step %d stage %s epoch %d loss %.17g t2v %.2f v2t %.2f",
                      rec.step, stage_name(cfg.stage), rec.epoch, rec.loss,
                      rec.t2v_r1, rec.v2t_r1);
        log << line << "\n";
      }
      if (cfg.max_steps > 0 &&
          static_cast<int>(res.steps.size()) >= cfg.max_steps)
        done = true;
    }
  }

  res.steps_run = static_cast<int>(res.steps.size());
  if (!res.steps.empty()) {
    res.first_loss = res.steps.front().loss;
    res.last_loss = res.steps.back().loss;
  }
  // A zero-epoch run leaves the model exactly as it came in, marker included.
  if (attempt > 0)
    model.stage_marker =
        audio_stage ? 2u : std::max<std::uint32_t>(model.stage_marker, 1u);
  if (log) {
    log.flush();
    if (!log) fail(ErrorCode::io, "short write to " + cfg.log_path);
  }
  return res;
}

}  // namespace tvr
