#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "sppe/checkpoint.hpp"
#include "sppe/errors.hpp"
#include "sppe/evaluation.hpp"
#include "sppe/ops.hpp"
#include "sppe/rng.hpp"
#include "sppe/transformer.hpp"

namespace sppe {

enum class LossKind { BceMultilabel, CeSoftmax };

struct TrainConfig {
  int batch_size = 16;
  long total_steps = 1000;
  long warmup_steps = 100;
  double peak_lr = 1e-3;
  double decay_rate = 0.0;  // 0 -> auto: lr reaches peak/10 at total_steps
  long checkpoint_interval = 100;
  int swa_count = 10;
  LossKind loss = LossKind::CeSoftmax;
  std::uint64_t seed = 1;

  void validate() const {
    if (total_steps < 1 || batch_size < 1 || checkpoint_interval < 1 ||
        swa_count < 1) {
      throw std::invalid_argument("train config: extents must be positive");
    }
    if (warmup_steps < 0 || warmup_steps >= total_steps) {
      throw std::invalid_argument("train config: warmup_steps must lie in [0, "
                                  "total_steps)");
    }
    if (peak_lr <= 0.0) {
      throw std::invalid_argument("train config: peak_lr must be positive");
    }
    if (decay_rate < 0.0 || decay_rate > 1.0) {
      throw std::invalid_argument("train config: decay_rate must be in [0, 1]");
    }
  }

  double resolved_decay() const {
    if (decay_rate > 0.0) return decay_rate;
    const long span = total_steps - warmup_steps;
    return span <= 0 ? 1.0 : std::pow(0.1, 1.0 / static_cast<double>(span));
  }

  // Audioset-scale preset: 290k steps, 30k warmup, peak 5e-4, batch 64,
  // snapshots every 10k steps, SWA over the last 10.
  static TrainConfig paper() {
    TrainConfig c;
    c.batch_size = 64;
    c.total_steps = 290000;
    c.warmup_steps = 30000;
    c.peak_lr = 5e-4;
    c.checkpoint_interval = 10000;
    c.swa_count = 10;
    c.loss = LossKind::BceMultilabel;
    return c;
  }

  // The learned-relative model trains longer at half batch.
  static TrainConfig paper_learned_relative() {
    TrainConfig c = paper();
    c.batch_size = 32;
    c.total_steps = 470000;
    return c;
  }
};

// Linear warmup to peak_lr over warmup_steps, then exponential decay.
// Continuous at the boundary; lr_at(0) == 0 whenever warmup > 0.
inline double lr_at(long step, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  }
  return cfg.peak_lr *
         std::pow(cfg.resolved_decay(),
                  static_cast<double>(step - cfg.warmup_steps));
}

// Adam (beta1 0.9, beta2 0.999, eps 1e-8, no weight decay) over a fixed set
// of parameter handles. The optimizer is the only writer of parameter data.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor<T>& p : params_) {
      if (!p.requires_grad) {
        throw std::invalid_argument("adam: parameter does not require grad");
      }
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  void step(double lr) {
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(beta1_, t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(beta2_, t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor<T>& p = params_[pi];
      const T* g = p.gptr();
      T* m = m_[pi].data();
      T* v = v_[pi].data();
      T* w = p.ptr();
      const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
      const T lrT = static_cast<T>(lr), epsT = static_cast<T>(eps_);
      for (std::size_t i = 0; i < p.numel(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        w[i] -= lrT * mhat / (std::sqrt(vhat) + epsT);
      }
    }
  }

  long steps_taken() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  double beta1_, beta2_, eps_;
  std::vector<std::vector<T>> m_, v_;
  long t_ = 0;
};

template <typename T>
struct Sample {
  Tensor<T> patches;                // N x patch_dim
  int label = -1;                   // single-label index
  std::vector<std::uint8_t> multi;  // multilabel targets, optional
  std::string id;                   // clip identity for leakage checks
};

template <typename T>
Tensor<T> sample_loss(Tape<T>* tape, const Tensor<T>& logits,
                      const Sample<T>& sample, LossKind loss) {
  if (loss == LossKind::CeSoftmax) {
    return softmax_xent_mean(tape, logits, {sample.label});
  }
  std::vector<T> target(logits.numel(), T(0));
  if (!sample.multi.empty()) {
    for (std::size_t c = 0; c < target.size(); ++c)
      target[c] = static_cast<T>(sample.multi[c]);
  } else {
    target[static_cast<std::size_t>(sample.label)] = T(1);
  }
  return bce_with_logits_mean(tape, logits,
                              Tensor<T>::from(logits.shape, std::move(target)));
}

// One optimization step over a batch: mean loss, one Adam update at
// lr_at(step). Aborts with diagnostics on a non-finite loss.
template <typename T>
double train_step(Model<T>& model, Adam<T>& opt,
                  const std::vector<const Sample<T>*>& batch, long step,
                  const TrainConfig& cfg, Rng* dropout_rng) {
  model.params.zero_grads();
  const T inv_batch = T(1) / static_cast<T>(batch.size());
  double total = 0.0;
  for (const Sample<T>* sample : batch) {
    Tape<T> tape;
    EncoderOut<T> out = encoder_forward(&tape, model, sample->patches, dropout_rng);
    Tensor<T> loss = sample_loss(&tape, out.logits, *sample, cfg.loss);
    const double value = static_cast<double>(loss.at(0));
    if (!std::isfinite(value)) {
      throw NumericError("train_step: non-finite loss at step " +
                         std::to_string(step) + " (sample " + sample->id + ")");
    }
    total += value;
    tape.backward(loss, inv_batch);
  }
  opt.step(lr_at(step, cfg));
  return total / static_cast<double>(batch.size());
}

// Raw logits for every sample, row-major clips x classes, dropout disabled.
template <typename T>
std::vector<double> model_scores(const Model<T>& model,
                                 const std::vector<Sample<T>>& samples) {
  const std::size_t classes = static_cast<std::size_t>(model.cfg.classes);
  std::vector<double> scores(samples.size() * classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EncoderOut<T> out = encoder_forward<T>(nullptr, model, samples[i].patches);
    for (std::size_t c = 0; c < classes; ++c) {
      scores[i * classes + c] = static_cast<double>(out.logits.at(c));
    }
  }
  return scores;
}

template <typename T>
double eval_metric(const Model<T>& model, const std::vector<Sample<T>>& samples,
                   LossKind loss) {
  const std::size_t classes = static_cast<std::size_t>(model.cfg.classes);
  std::vector<double> scores = model_scores(model, samples);
  if (loss == LossKind::CeSoftmax) {
    std::vector<int> labels(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) labels[i] = samples[i].label;
    return accuracy(scores, classes, labels);
  }
  PredictionSet preds;
  preds.clips = samples.size();
  preds.classes = classes;
  preds.scores.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    preds.scores[i] = 1.0 / (1.0 + std::exp(-scores[i]));
  }
  preds.targets.assign(preds.clips * classes, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].multi.empty()) {
      for (std::size_t c = 0; c < classes; ++c)
        preds.targets[i * classes + c] = samples[i].multi[c];
    } else {
      preds.targets[i * classes + static_cast<std::size_t>(samples[i].label)] = 1;
    }
  }
  return mean_average_precision(preds);
}

struct StepLog {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool has_metric = false;
  double metric = 0.0;
};

template <typename T>
struct TrainLoopResult {
  std::vector<StepLog> logs;
  Checkpoint swa;
  double final_metric = 0.0;
};

// Step-based loop: shuffled batches, snapshots every checkpoint_interval
// steps (with a test-set metric), SWA over the last swa_count snapshots at
// the end. The metric of the last log row is the SWA model's.
template <typename T>
TrainLoopResult<T> train_loop(
    Model<T>& model, const std::vector<Sample<T>>& train,
    const std::vector<Sample<T>>& test, const TrainConfig& cfg,
    const std::function<void(const Checkpoint&)>& on_checkpoint = nullptr) {
  cfg.validate();
  if (train.empty()) throw DataError("train_loop: empty training set");

  std::vector<Tensor<T>> handles;
  for (auto& [name, t] : model.params.named) handles.push_back(t);
  Adam<T> opt(std::move(handles));

  Rng root(cfg.seed);
  Rng batch_rng = root.fork("batching");
  Rng dropout_rng = root.fork("dropout");

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  batch_rng.shuffle(order);
  std::size_t pos = 0;

  TrainLoopResult<T> result;
  std::deque<Checkpoint> recent;

  for (long step = 1; step <= cfg.total_steps; ++step) {
    if (pos + static_cast<std::size_t>(cfg.batch_size) > order.size()) {
      batch_rng.shuffle(order);
      pos = 0;
    }
    std::vector<const Sample<T>*> batch;
    batch.reserve(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(&train[order[pos++]]);

    StepLog log;
    log.step = step;
    log.lr = lr_at(step, cfg);
    log.loss = train_step(model, opt, batch, step, cfg,
                          model.cfg.dropout > 0.0 ? &dropout_rng : nullptr);

    const bool last = step == cfg.total_steps;
    if (step % cfg.checkpoint_interval == 0 || last) {
      if (recent.empty() || recent.back().step != static_cast<std::uint64_t>(step)) {
        recent.push_back(to_checkpoint(model.params, static_cast<std::uint64_t>(step)));
        while (recent.size() > static_cast<std::size_t>(cfg.swa_count)) {
          recent.pop_front();
        }
        if (on_checkpoint) on_checkpoint(recent.back());
      }
      if (!test.empty() && !last) {
        log.has_metric = true;
        log.metric = eval_metric(model, test, cfg.loss);
      }
    }
    if (last) {
      result.swa = swa_average({recent.begin(), recent.end()});
      if (!test.empty()) {
        Model<T> swa_model = model;  // shares layout/config; params replaced below
        Rng scratch(cfg.seed);
        Rng init = scratch.fork("param-init");
        swa_model.params = ModelParams<T>::init(model.cfg, model.layout, init);
        load_into_params(result.swa, swa_model.params);
        log.has_metric = true;
        log.metric = eval_metric(swa_model, test, cfg.loss);
        result.final_metric = log.metric;
      }
    }
    result.logs.push_back(log);
  }
  return result;
}

struct FinetuneConfig {
  int phase1_epochs = 10;
  double phase1_lr = 1e-3;
  int phase2_epochs = 40;
  double phase2_lr = 1e-4;
  double phase2_decay = 0.85;
  int batch_size = 8;
  std::uint64_t seed = 1;
};

struct FoldResult {
  int fold = 0;
  double accuracy = 0.0;
  Checkpoint model;  // final fold parameters
};

struct FinetuneResult {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
};

namespace detail {

template <typename T>
void run_epochs(Model<T>& model, Adam<T>& opt,
                const std::vector<const Sample<T>*>& train, int epochs,
                const std::function<double(int)>& lr_for_epoch,
                LossKind loss, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs =
      std::min(train.size(), static_cast<std::size_t>(batch_size));
  for (int e = 1; e <= epochs; ++e) {
    rng.shuffle(order);
    const double lr = lr_for_epoch(e);
    for (std::size_t pos = 0; pos < order.size(); pos += bs) {
      std::vector<const Sample<T>*> batch;
      for (std::size_t i = pos; i < std::min(pos + bs, order.size()); ++i) {
        batch.push_back(train[order[i]]);
      }
      model.params.zero_grads();
      const T inv = T(1) / static_cast<T>(batch.size());
      for (const Sample<T>* s : batch) {
        Tape<T> tape;
        EncoderOut<T> out = encoder_forward(&tape, model, s->patches, nullptr);
        Tensor<T> l = sample_loss(&tape, out.logits, *s, loss);
        if (!std::isfinite(static_cast<double>(l.at(0)))) {
          throw NumericError("finetune: non-finite loss (sample " + s->id + ")");
        }
        tape.backward(l, inv);
      }
      opt.step(lr);
    }
  }
}

}  // namespace detail

// Two-phase fine-tuning over pre-partitioned folds: the head is replaced and
// trained alone for phase1_epochs (all backbone parameters bit-unchanged),
// then the whole model trains with a per-epoch decayed learning rate.
// Returns held-out accuracy per fold.
template <typename T>
FinetuneResult finetune(const Checkpoint& base, const ModelConfig& cfg,
                        const PatchLayout& layout,
                        const std::vector<std::vector<Sample<T>>>& folds,
                        const FinetuneConfig& ft) {
  if (folds.size() < 2) {
    throw DataError("finetune: need at least 2 folds, got " +
                    std::to_string(folds.size()));
  }
  if (cfg.head != HeadActivation::Softmax) {
    throw std::invalid_argument("finetune: head must be softmax");
  }
  // Fold leakage: the same clip id must not appear in two folds.
  {
    std::vector<std::string> seen;
    for (const auto& fold : folds) {
      for (const auto& s : fold) {
        if (std::find(seen.begin(), seen.end(), s.id) != seen.end()) {
          throw DataError("finetune: clip " + s.id + " appears in multiple folds");
        }
        seen.push_back(s.id);
      }
    }
  }

  FinetuneResult result;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    Rng rng(ft.seed);
    Rng fold_rng = rng.fork("fold", k);
    Model<T> model = Model<T>::init(cfg, layout, ft.seed + k);
    // Backbone from the pretrained snapshot; head stays freshly initialized.
    for (auto& [name, tensor] : model.params.named) {
      if (is_head_param(name)) continue;
      const CheckpointTensor& ct = base.get(name);
      if (ct.data.size() != tensor.numel()) {
        throw DataError("finetune: checkpoint tensor " + name +
                        " does not match the model shape");
      }
      for (std::size_t i = 0; i < ct.data.size(); ++i) {
        (*tensor.data)[i] = static_cast<T>(ct.data[i]);
      }
    }

    std::vector<const Sample<T>*> train;
    for (std::size_t j = 0; j < folds.size(); ++j) {
      if (j == k) continue;
      for (const auto& s : folds[j]) train.push_back(&s);
    }

    // Phase 1: head only. Freezing via requires_grad keeps the backbone
    // out of the tape entirely.
    std::vector<Tensor<T>> head_params;
    for (auto& [name, tensor] : model.params.named) {
      if (is_head_param(name)) {
        head_params.push_back(tensor);
      } else {
        tensor.requires_grad = false;
      }
    }
    {
      Adam<T> opt(head_params);
      Rng phase_rng = fold_rng.fork("phase1");
      detail::run_epochs(model, opt, train, ft.phase1_epochs,
                         [&](int) { return ft.phase1_lr; }, LossKind::CeSoftmax,
                         ft.batch_size, phase_rng);
    }

    // Phase 2: full model, fresh optimizer state.
    std::vector<Tensor<T>> all_params;
    for (auto& [name, tensor] : model.params.named) {
      tensor.set_requires_grad(true);
      all_params.push_back(tensor);
    }
    {
      Adam<T> opt(all_params);
      Rng phase_rng = fold_rng.fork("phase2");
      detail::run_epochs(model, opt, train, ft.phase2_epochs,
                         [&](int e) {
                           return ft.phase2_lr * std::pow(ft.phase2_decay, e - 1);
                         },
                         LossKind::CeSoftmax, ft.batch_size, phase_rng);
    }

    std::vector<int> labels(folds[k].size());
    for (std::size_t i = 0; i < folds[k].size(); ++i) labels[i] = folds[k][i].label;
    const double acc = accuracy(model_scores(model, folds[k]),
                                static_cast<std::size_t>(cfg.classes), labels);
    result.folds.push_back(
        {static_cast<int>(k), acc, to_checkpoint(model.params, base.step)});
  }
  double sum = 0.0;
  for (const FoldResult& f : result.folds) sum += f.accuracy;
  result.mean_accuracy = sum / static_cast<double>(result.folds.size());
  return result;
}

}  // namespace sppe
