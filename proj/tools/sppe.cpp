// Command-line front end: train, eval, inspect-pe, count-params, gen-data.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "sppe/errors.hpp"
#include "sppe/runconfig.hpp"
#include "sppe/runner.hpp"

namespace {

struct CommonOpts {
  std::string config_file;
  bool paper_scale = false;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> shortcuts;
};

// Shortcut flags map onto config keys; --set covers everything else.
void add_config_options(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_file, "flat key=value config file");
  cmd->add_flag("--paper-scale", opts.paper_scale,
                "start from the paper-scale preset (12 blocks, 768 dim, 31x8 "
                "patches)");
  cmd->add_option("--set", opts.sets, "override any config key (key=value)")
      ->take_all();
  const auto shortcut = [cmd, &opts](const std::string& flag,
                                     const std::string& key,
                                     const std::string& help) {
    cmd->add_option_function<std::string>(
        flag,
        [&opts, key](const std::string& value) {
          opts.shortcuts.emplace_back(key, value);
        },
        help);
  };
  shortcut("--pe", "pe", "positional-encoding variant");
  shortcut("--task", "task", "synthetic task kind");
  shortcut("--corpus", "corpus", "corpus manifest CSV");
  shortcut("--steps", "steps", "training steps");
  shortcut("--warmup", "warmup", "warmup steps");
  shortcut("--batch", "batch", "batch size");
  shortcut("--lr", "peak_lr", "peak learning rate");
  shortcut("--seed", "seed", "RNG seed");
  shortcut("--out", "out", "output directory");
  shortcut("--blocks", "blocks", "transformer blocks");
  shortcut("--dim", "dim", "embedding dimension");
  shortcut("--heads", "heads", "attention heads");
  shortcut("--classes", "classes", "number of classes");
  shortcut("--precision", "precision", "f32 or f64");
  shortcut("--noise", "noise", "synthetic task noise level");
  shortcut("--train-size", "train_size", "synthetic training samples");
  shortcut("--test-size", "test_size", "synthetic test samples");
  shortcut("--t-patches", "t_patches", "time chunks in the patch grid");
  shortcut("--f-patches", "f_patches", "frequency bands in the patch grid");
  shortcut("--finetune-from", "finetune_from", "base checkpoint to fine-tune");
}

sppe::RunConfig resolve_config(const CommonOpts& opts) {
  sppe::RunConfig cfg =
      opts.paper_scale ? sppe::RunConfig::paper_scale() : sppe::RunConfig();
  if (!opts.config_file.empty()) {
    cfg = sppe::RunConfig::from_file(opts.config_file, cfg);
  }
  std::vector<std::pair<std::string, std::string>> overrides = opts.shortcuts;
  for (const std::string& kv : opts.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw sppe::ConfigError("--set wants key=value, got '" + kv + "'");
    }
    overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.apply_overrides(overrides);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spectrogram transformer positional-encoding workbench"};
  app.require_subcommand(1);

  CommonOpts train_opts;
  CLI::App* train = app.add_subcommand("train", "train a model, write a run dir");
  add_config_options(train, train_opts);

  std::string eval_run, eval_ckpt;
  CommonOpts eval_opts;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a finished run");
  eval->add_option("--run", eval_run, "run directory")->required();
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file (default: swa.sppe)");
  eval->add_option("--set", eval_opts.sets, "override config keys")->take_all();

  std::string inspect_run, inspect_out, inspect_ckpt;
  int inspect_block = 0;
  CLI::App* inspect =
      app.add_subcommand("inspect-pe", "export positional-embedding similarity CSVs");
  inspect->add_option("--run", inspect_run, "run directory")->required();
  inspect->add_option("--block", inspect_block,
                      "block index for learned-relative tables");
  inspect->add_option("--out", inspect_out, "output directory (default: run dir)");
  inspect->add_option("--ckpt", inspect_ckpt, "checkpoint file (default: swa.sppe)");

  CommonOpts count_opts;
  CLI::App* count =
      app.add_subcommand("count-params", "parameter counts by component");
  add_config_options(count, count_opts);

  CommonOpts gen_opts;
  CLI::App* gen = app.add_subcommand("gen-data", "synthesize a WAV corpus");
  add_config_options(gen, gen_opts);
  const auto clips_opt = [&gen_opts](const std::string& value) {
    gen_opts.shortcuts.emplace_back("train_size", value);
  };
  gen->add_option_function<std::string>("--clips", clips_opt, "number of clips");

  try {
    app.parse(argc, argv);

    if (train->parsed()) {
      const sppe::RunConfig cfg = resolve_config(train_opts);
      const sppe::TrainOutcome outcome = sppe::run_train(cfg);
      std::printf("run dir: %s\n", outcome.run_dir.string().c_str());
      std::printf("final %s: %.6f\n", outcome.metric_name.c_str(),
                  outcome.final_metric);
    } else if (eval->parsed()) {
      std::vector<std::pair<std::string, std::string>> overrides;
      for (const std::string& kv : eval_opts.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
          throw sppe::ConfigError("--set wants key=value, got '" + kv + "'");
        }
        overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
      }
      const sppe::EvalOutcome outcome =
          sppe::run_eval(eval_run, overrides,
                         eval_ckpt.empty() ? std::filesystem::path()
                                           : std::filesystem::path(eval_ckpt));
      std::printf("%s: %.9f\n", outcome.metric_name.c_str(), outcome.metric);
    } else if (inspect->parsed()) {
      sppe::run_inspect_pe(inspect_run, inspect_block,
                           inspect_out.empty() ? std::filesystem::path()
                                               : std::filesystem::path(inspect_out),
                           inspect_ckpt.empty()
                               ? std::filesystem::path()
                               : std::filesystem::path(inspect_ckpt));
      std::printf("wrote pe_similarity_time.csv and pe_similarity_freq.csv\n");
    } else if (count->parsed()) {
      const sppe::RunConfig cfg = resolve_config(count_opts);
      const sppe::ParamCountTable table = sppe::run_count_params(cfg);
      std::fputs(sppe::format_param_table(table).c_str(), stdout);
    } else if (gen->parsed()) {
      const sppe::RunConfig cfg = resolve_config(gen_opts);
      const std::filesystem::path manifest = sppe::run_gen_data(cfg);
      std::printf("manifest: %s\n", manifest.string().c_str());
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const sppe::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const sppe::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const sppe::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
