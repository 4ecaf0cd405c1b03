#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sppe/features.hpp"
#include "sppe/patching.hpp"
#include "sppe/posenc.hpp"
#include "sppe/synthdata.hpp"
#include "sppe/training.hpp"
#include "sppe/transformer.hpp"

namespace sppe {

PEVariant parse_pe_variant(const std::string& name);

// Flat key-value run configuration. Precedence: CLI overrides > config file
// > preset defaults. The resolved form is serialized alongside every run so
// outputs are reproducible from the run directory alone.
struct RunConfig {
  // model
  int blocks = 2;
  int dim = 64;
  int heads = 4;
  int mlp_ratio = 4;
  int classes = 0;  // 0 = derive from the data source
  std::string pe = "absolute";
  double dropout = 0.0;
  int peg_layers = 5;
  // patch layout
  int t_patches = 8;
  int f_patches = 4;
  int patch_frames = 32;
  int patch_mels = 8;
  // training
  int batch = 16;
  long steps = 1000;
  long warmup = 100;
  double peak_lr = 1e-3;
  double decay = 0.0;  // 0 = auto
  long checkpoint_interval = 250;
  int swa_count = 10;
  std::string loss = "auto";  // auto | ce | bce
  std::uint64_t seed = 1;
  std::string precision = "f32";  // f32 | f64
  // data
  std::string task = "temporal-order";
  std::string corpus;  // manifest path; overrides task when set
  int train_size = 256;
  int test_size = 128;
  double noise = 0.05;
  double specaugment_rate = 0.5;
  double stats_min = 0.0;  // resolved at training time for corpus runs
  double stats_max = 0.0;
  // finetune
  std::string finetune_from;
  int phase1_epochs = 10;
  double phase1_lr = 1e-3;
  int phase2_epochs = 40;
  double phase2_lr = 1e-4;
  double phase2_decay = 0.85;
  // output
  std::string out = "run";
  std::string config_hash;  // recorded on resolve, checked by eval

  // Applies one key=value assignment; throws ConfigError on a bad value.
  // Returns false when the key is unknown (callers collect those).
  bool apply(const std::string& key, const std::string& value);

  void apply_overrides(const std::vector<std::pair<std::string, std::string>>& kv);
  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_file(const std::filesystem::path& path,
                             const RunConfig& base);

  // Paper-scale preset (12 blocks / 768 dim / 12 heads / 31x8 patches).
  static RunConfig paper_scale();

  std::string serialize() const;
  void write(const std::filesystem::path& path) const;

  // Hash of the model-defining keys (model + layout + precision), used to
  // flag checkpoint/config mismatches at eval time.
  std::string model_hash() const;

  PatchLayout layout() const;
  ModelConfig model_config() const;  // classes must be resolved first
  TrainConfig train_config() const;
  SynthTask synth_task() const;
  FinetuneConfig finetune_config() const;
  LossKind resolved_loss(bool multilabel_corpus) const;
  bool uses_corpus() const { return !corpus.empty(); }

  void validate() const;
};

}  // namespace sppe
