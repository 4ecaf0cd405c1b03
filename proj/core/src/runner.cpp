#include "sppe/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sppe/checkpoint.hpp"
#include "sppe/errors.hpp"
#include "sppe/features.hpp"
#include "sppe/synthdata.hpp"

namespace sppe {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string checkpoint_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt-%06llu.sppe",
                static_cast<unsigned long long>(step));
  return buf;
}

template <typename T>
struct BuiltData {
  std::vector<Sample<T>> train;
  std::vector<Sample<T>> test;
  std::vector<std::vector<Sample<T>>> folds;  // corpus only
  int classes = 0;
  bool multilabel = false;
  ScaleStats stats{0.0, 1.0};
};

template <typename T>
Sample<T> spec_to_sample(const LabeledSpec& ls, const PatchLayout& layout,
                         const std::string& id) {
  Sample<T> s;
  s.patches = patchify<T>(ls.spec, layout);
  s.label = ls.label;
  s.id = id;
  return s;
}

// Full front end for one clip: power spectrogram -> optional SpecAugment ->
// log-mel -> min/max scaling -> layout crop -> patches.
template <typename T>
Tensor<T> clip_to_patches(const Spectrogram& power, const PatchLayout& layout,
                          const MelFilterbank& mel, const ScaleStats& stats,
                          double specaugment_rate, Rng* aug_rng) {
  Spectrogram linear = power;
  if (aug_rng != nullptr && specaugment_rate > 0.0) {
    SpecAugmentPolicy policy;
    policy.apply_rate = specaugment_rate;
    linear = specaugment(linear, policy, *aug_rng);
  }
  const Spectrogram scaled = scale_minmax(mel.apply_log(linear), stats);
  const Spectrogram cropped =
      crop_frames(scaled, static_cast<std::size_t>(layout.grid_frames()));
  return patchify<T>(cropped, layout);
}

template <typename T>
BuiltData<T> build_synth_data(const RunConfig& cfg) {
  BuiltData<T> data;
  const PatchLayout layout = cfg.layout();
  SynthTask task = cfg.synth_task();
  data.classes = task.classes;
  data.multilabel = false;

  Rng root(cfg.seed);
  SynthTask train_task = task;
  train_task.seed = root.fork("data-train").next_u64();
  train_task.count = cfg.train_size;
  SynthTask test_task = task;
  test_task.seed = root.fork("data-test").next_u64();
  test_task.count = cfg.test_size;

  const std::vector<LabeledSpec> train_specs = gen_task(train_task);
  for (std::size_t i = 0; i < train_specs.size(); ++i) {
    data.train.push_back(
        spec_to_sample<T>(train_specs[i], layout, "train/" + std::to_string(i)));
  }
  if (cfg.test_size > 0) {
    const std::vector<LabeledSpec> test_specs = gen_task(test_task);
    for (std::size_t i = 0; i < test_specs.size(); ++i) {
      data.test.push_back(
          spec_to_sample<T>(test_specs[i], layout, "test/" + std::to_string(i)));
    }
  }
  return data;
}

template <typename T>
BuiltData<T> build_corpus_data(const RunConfig& cfg, bool for_training) {
  BuiltData<T> data;
  const PatchLayout layout = cfg.layout();
  if (layout.grid_bins() != 64) {
    throw ConfigError(
        "corpus runs require f_patches * patch_mels == 64 (the mel front end "
        "yields 64 bins), got " + std::to_string(layout.grid_bins()));
  }
  const Corpus corpus = load_corpus(cfg.corpus);
  data.classes = static_cast<int>(corpus.classes.size());
  for (const CorpusClip& clip : corpus.clips) {
    if (clip.entry.labels.size() > 1) data.multilabel = true;
  }

  const Stft stft;
  const MelFilterbank mel;
  std::vector<Spectrogram> powers;
  powers.reserve(corpus.clips.size());
  for (const CorpusClip& clip : corpus.clips) {
    powers.push_back(stft.power(clip.audio));
  }

  // The highest fold is held out as the test split for plain training runs.
  const int test_fold = corpus.n_folds > 1 ? corpus.n_folds - 1 : -1;

  if (cfg.stats_max > cfg.stats_min) {
    data.stats = {cfg.stats_min, cfg.stats_max};
  } else if (for_training) {
    // Dataset min/max over the training split, post-log, pre-SpecAugment.
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
      if (corpus.clips[i].entry.fold == test_fold) continue;
      const Spectrogram lm = mel.apply_log(powers[i]);
      for (const double v : lm.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (!(hi > lo)) throw DataError("corpus: degenerate feature statistics");
    data.stats = {lo, hi};
  } else {
    throw DataError("corpus eval: config carries no feature statistics "
                    "(stats_min/stats_max); run training first");
  }

  Rng root(cfg.seed);
  const LossKind loss = cfg.resolved_loss(data.multilabel);
  data.folds.resize(static_cast<std::size_t>(corpus.n_folds));
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    const CorpusClip& clip = corpus.clips[i];
    const bool is_test = clip.entry.fold == test_fold;
    Rng aug_rng = root.fork("specaugment", i);
    Sample<T> s;
    // Augmentation applies to training presentations only.
    Rng* aug = (for_training && !is_test) ? &aug_rng : nullptr;
    s.patches = clip_to_patches<T>(powers[i], layout, mel, data.stats,
                                   cfg.specaugment_rate, aug);
    s.id = clip.entry.path;
    const std::vector<int> labels = corpus.label_indices(clip.entry);
    s.label = labels[0];
    if (loss == LossKind::BceMultilabel) {
      s.multi.assign(static_cast<std::size_t>(data.classes), 0);
      for (const int c : labels) s.multi[static_cast<std::size_t>(c)] = 1;
    }
    data.folds[static_cast<std::size_t>(clip.entry.fold)].push_back(s);
    if (is_test) {
      data.test.push_back(std::move(s));
    } else {
      data.train.push_back(std::move(s));
    }
  }
  return data;
}

template <typename T>
BuiltData<T> build_datasets(const RunConfig& cfg, bool for_training) {
  if (cfg.uses_corpus()) return build_corpus_data<T>(cfg, for_training);
  return build_synth_data<T>(cfg);
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<StepLog>& logs,
                       const std::string& metric_name) {
  std::ofstream out(path);
  if (!out) throw DataError("metrics: cannot write " + path.string());
  out << "step,loss,lr," << metric_name << "\n";
  for (const StepLog& log : logs) {
    out << log.step << ',' << fmt_double(log.loss) << ',' << fmt_double(log.lr)
        << ',';
    if (log.has_metric) out << fmt_double(log.metric);
    out << '\n';
  }
}

template <typename T>
TrainOutcome run_train_impl(RunConfig& cfg) {
  const PatchLayout layout = cfg.layout();
  BuiltData<T> data = build_datasets<T>(cfg, /*for_training=*/true);
  if (cfg.classes == 0) cfg.classes = data.classes;
  if (cfg.classes != data.classes) {
    throw ConfigError("config: classes " + std::to_string(cfg.classes) +
                      " does not match the data source (" +
                      std::to_string(data.classes) + ")");
  }
  const LossKind loss = cfg.resolved_loss(data.multilabel);
  cfg.loss = loss == LossKind::BceMultilabel ? "bce" : "ce";
  cfg.stats_min = data.stats.min;
  cfg.stats_max = data.stats.max;

  const ModelConfig model_cfg = cfg.model_config();
  TrainConfig train_cfg = cfg.train_config();

  const std::filesystem::path run_dir = cfg.out;
  std::filesystem::create_directories(run_dir);

  Model<T> model = Model<T>::init(model_cfg, layout, cfg.seed);
  TrainLoopResult<T> result =
      train_loop(model, data.train, data.test, train_cfg,
                 [&run_dir](const Checkpoint& ckpt) {
                   save_checkpoint(run_dir / checkpoint_name(ckpt.step), ckpt);
                 });

  save_checkpoint(run_dir / "swa.sppe", result.swa);
  const std::string metric_name =
      loss == LossKind::BceMultilabel ? "map" : "accuracy";
  write_metrics_csv(run_dir / "metrics.csv", result.logs, metric_name);

  cfg.config_hash = cfg.model_hash();
  cfg.write(run_dir / "config.resolved");

  TrainOutcome outcome;
  outcome.run_dir = run_dir;
  outcome.final_metric = result.final_metric;
  outcome.metric_name = metric_name;
  outcome.logs = std::move(result.logs);
  return outcome;
}

template <typename T>
EvalOutcome run_eval_impl(const RunConfig& cfg,
                          const std::filesystem::path& ckpt_path) {
  BuiltData<T> data = build_datasets<T>(cfg, /*for_training=*/false);
  const LossKind loss = cfg.resolved_loss(data.multilabel);
  Model<T> model = Model<T>::init(cfg.model_config(), cfg.layout(), cfg.seed);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  load_into_params(ckpt, model.params);
  if (data.test.empty()) throw DataError("eval: no test samples");
  EvalOutcome outcome;
  outcome.metric = eval_metric(model, data.test, loss);
  outcome.metric_name = loss == LossKind::BceMultilabel ? "map" : "accuracy";
  return outcome;
}

template <typename T>
FinetuneOutcome run_finetune_impl(RunConfig& cfg) {
  if (!cfg.uses_corpus()) {
    throw ConfigError("finetune requires a corpus manifest (set corpus=...)");
  }
  BuiltData<T> data = build_datasets<T>(cfg, /*for_training=*/true);
  cfg.classes = data.classes;
  cfg.loss = "ce";  // the replaced head is softmax single-label
  ModelConfig model_cfg = cfg.model_config();
  model_cfg.head = HeadActivation::Softmax;

  const Checkpoint base = load_checkpoint(cfg.finetune_from);
  const FinetuneResult result = finetune<T>(base, model_cfg, cfg.layout(),
                                            data.folds, cfg.finetune_config());

  const std::filesystem::path run_dir = cfg.out;
  std::filesystem::create_directories(run_dir);
  std::ofstream out(run_dir / "finetune.csv");
  if (!out) throw DataError("finetune: cannot write results CSV");
  out << "fold,accuracy\n";
  for (const FoldResult& f : result.folds) {
    out << f.fold << ',' << fmt_double(f.accuracy) << '\n';
  }
  out << "mean," << fmt_double(result.mean_accuracy) << '\n';
  cfg.config_hash = cfg.model_hash();
  cfg.write(run_dir / "config.resolved");

  FinetuneOutcome outcome;
  outcome.run_dir = run_dir;
  outcome.folds = result.folds;
  outcome.mean_accuracy = result.mean_accuracy;
  return outcome;
}

}  // namespace

TrainOutcome run_train(RunConfig cfg) {
  cfg.validate();
  if (!cfg.finetune_from.empty()) {
    const FinetuneOutcome ft = run_finetune(cfg);
    TrainOutcome outcome;
    outcome.run_dir = ft.run_dir;
    outcome.final_metric = ft.mean_accuracy;
    outcome.metric_name = "accuracy";
    return outcome;
  }
  if (cfg.precision == "f64") return run_train_impl<double>(cfg);
  return run_train_impl<float>(cfg);
}

FinetuneOutcome run_finetune(RunConfig cfg) {
  cfg.validate();
  if (cfg.precision == "f64") return run_finetune_impl<double>(cfg);
  return run_finetune_impl<float>(cfg);
}

EvalOutcome run_eval(const std::filesystem::path& run_dir,
                     const std::vector<std::pair<std::string, std::string>>& overrides,
                     const std::filesystem::path& ckpt_override) {
  const std::filesystem::path cfg_path = run_dir / "config.resolved";
  if (!std::filesystem::exists(cfg_path)) {
    throw DataError("eval: " + cfg_path.string() + " not found");
  }
  RunConfig cfg = RunConfig::from_file(cfg_path);
  const std::string stored_hash = cfg.config_hash;
  cfg.apply_overrides(overrides);
  cfg.validate();

  EvalOutcome outcome;
  if (!stored_hash.empty() && cfg.model_hash() != stored_hash) {
    outcome.hash_mismatch = true;
    std::cerr << "warning: eval config hash " << cfg.model_hash()
              << " does not match the run's recorded hash " << stored_hash
              << "\n";
  }

  std::filesystem::path ckpt_path =
      ckpt_override.empty() ? run_dir / "swa.sppe" : ckpt_override;
  if (!std::filesystem::exists(ckpt_path)) {
    throw DataError("eval: checkpoint " + ckpt_path.string() + " not found");
  }

  EvalOutcome metric_outcome;
  if (cfg.precision == "f64") {
    metric_outcome = run_eval_impl<double>(cfg, ckpt_path);
  } else {
    metric_outcome = run_eval_impl<float>(cfg, ckpt_path);
  }
  outcome.metric = metric_outcome.metric;
  outcome.metric_name = metric_outcome.metric_name;

  std::ofstream out(run_dir / "eval.csv");
  if (out) {
    out << "metric,value\n"
        << outcome.metric_name << ',' << fmt_double(outcome.metric) << '\n';
  }
  return outcome;
}

void run_inspect_pe(const std::filesystem::path& run_dir, int block,
                    std::filesystem::path out_dir,
                    const std::filesystem::path& ckpt_override) {
  const std::filesystem::path cfg_path = run_dir / "config.resolved";
  if (!std::filesystem::exists(cfg_path)) {
    throw DataError("inspect-pe: " + cfg_path.string() + " not found");
  }
  const RunConfig cfg = RunConfig::from_file(cfg_path);
  if (out_dir.empty()) out_dir = run_dir;
  std::filesystem::create_directories(out_dir);

  const std::filesystem::path ckpt_path =
      ckpt_override.empty() ? run_dir / "swa.sppe" : ckpt_override;
  if (!std::filesystem::exists(ckpt_path)) {
    throw DataError("inspect-pe: checkpoint " + ckpt_path.string() + " not found");
  }
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const PatchLayout layout = cfg.layout();
  const PEVariant variant = parse_pe_variant(cfg.pe);
  const PEFeatures features = pe_features(variant);

  if (features.absolute) {
    const CheckpointTensor& p = ckpt.get("pos.absolute");
    const std::vector<double> table(p.data.begin(), p.data.end());
    const std::size_t n = static_cast<std::size_t>(layout.seq_len());
    const std::size_t d = table.size() / n;
    write_similarity_csv(out_dir / "pe_similarity_time.csv",
                         pe_similarity_absolute(table, n, d, layout,
                                                SimilarityAxis::Time));
    write_similarity_csv(out_dir / "pe_similarity_freq.csv",
                         pe_similarity_absolute(table, n, d, layout,
                                                SimilarityAxis::Frequency));
    return;
  }
  if (features.bias == BiasKind::Learned) {
    if (block < 0 || block >= cfg.blocks) {
      throw ConfigError("inspect-pe: block " + std::to_string(block) +
                        " out of range [0, " + std::to_string(cfg.blocks) + ")");
    }
    const std::string prefix = "block." + std::to_string(block) + ".rel.";
    const CheckpointTensor& et = ckpt.get(prefix + "et");
    const CheckpointTensor& ef = ckpt.get(prefix + "ef");
    const std::vector<double> tt(et.data.begin(), et.data.end());
    const std::vector<double> ff(ef.data.begin(), ef.data.end());
    const std::size_t dk = static_cast<std::size_t>(et.dims.back());
    write_similarity_csv(out_dir / "pe_similarity_time.csv",
                         pe_similarity_table(tt, tt.size() / dk, dk,
                                             SimilarityAxis::Time));
    write_similarity_csv(out_dir / "pe_similarity_freq.csv",
                         pe_similarity_table(ff, ff.size() / dk, dk,
                                             SimilarityAxis::Frequency));
    return;
  }
  switch (variant) {
    case PEVariant::None:
      throw ConfigError("inspect-pe: variant 'none' has no positional tables");
    case PEVariant::ALiBi2D:
    case PEVariant::TimeALiBi:
      throw ConfigError("inspect-pe: ALiBi biases are fixed formulas with no "
                        "trainable table");
    case PEVariant::Conditional:
      throw ConfigError("inspect-pe: conditional PE has no static table; its "
                        "embeddings depend on the input");
    default:
      throw ConfigError("inspect-pe: variant has no inspectable tables");
  }
}

ParamCountTable run_count_params(const RunConfig& cfg) {
  RunConfig resolved = cfg;
  if (resolved.classes == 0) {
    if (resolved.uses_corpus()) {
      resolved.classes = static_cast<int>(load_corpus(resolved.corpus).classes.size());
    } else {
      resolved.classes =
          default_classes(parse_task_kind(resolved.task), resolved.layout());
    }
  }
  return count_params(resolved.model_config(), resolved.layout());
}

std::string format_param_table(const ParamCountTable& table) {
  std::ostringstream os;
  std::size_t width = 16;
  for (const ParamCountRow& row : table.rows) {
    width = std::max(width, row.component.size() + 2);
  }
  for (const ParamCountRow& row : table.rows) {
    os << row.component << std::string(width - row.component.size(), ' ')
       << row.count << "\n";
  }
  os << std::string(width, '-') << "\n";
  os << "pe_subtotal" << std::string(width - 11, ' ') << table.pe_subtotal << "\n";
  os << "total" << std::string(width - 5, ' ') << table.total << "\n";
  return os.str();
}

std::filesystem::path run_gen_data(const RunConfig& cfg) {
  cfg.validate();
  GenDataConfig gen;
  gen.kind = parse_task_kind(cfg.task);
  gen.layout = cfg.layout();
  gen.clips = cfg.train_size;
  gen.folds = 5;
  gen.seed = cfg.seed;
  gen.out_dir = cfg.out;
  if (gen.layout.grid_bins() != 64) {
    throw ConfigError(
        "gen-data emits WAVs for the 64-bin mel front end; set f_patches * "
        "patch_mels == 64 (e.g. f_patches=8 patch_mels=8)");
  }
  return generate_wav_corpus(gen);
}

}  // namespace sppe
