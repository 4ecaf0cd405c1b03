#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sppe/runconfig.hpp"
#include "sppe/training.hpp"

namespace sppe {

struct TrainOutcome {
  std::filesystem::path run_dir;
  double final_metric = 0.0;
  std::string metric_name;  // "accuracy" or "map"
  std::vector<StepLog> logs;
};

// Trains per the resolved config and writes the self-describing run
// directory: config.resolved, metrics.csv, periodic checkpoints, swa.sppe.
// When finetune_from is set, runs the two-phase fine-tuning protocol over
// the corpus folds instead and writes finetune.csv.
TrainOutcome run_train(RunConfig cfg);

struct EvalOutcome {
  double metric = 0.0;
  std::string metric_name;
  bool hash_mismatch = false;
};

EvalOutcome run_eval(
    const std::filesystem::path& run_dir,
    const std::vector<std::pair<std::string, std::string>>& overrides = {},
    const std::filesystem::path& ckpt_override = {});

// Writes pe_similarity_time.csv / pe_similarity_freq.csv for variants with
// a static positional table; explains why otherwise.
void run_inspect_pe(const std::filesystem::path& run_dir, int block = 0,
                    std::filesystem::path out_dir = {},
                    const std::filesystem::path& ckpt_override = {});

ParamCountTable run_count_params(const RunConfig& cfg);
std::string format_param_table(const ParamCountTable& table);

std::filesystem::path run_gen_data(const RunConfig& cfg);

struct FinetuneOutcome {
  std::filesystem::path run_dir;
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
};

FinetuneOutcome run_finetune(RunConfig cfg);

}  // namespace sppe
