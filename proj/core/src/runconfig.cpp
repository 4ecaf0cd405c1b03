#include "sppe/runconfig.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "sppe/errors.hpp"

namespace sppe {

PEVariant parse_pe_variant(const std::string& name) {
  for (const auto& [variant, vname] : pe_variant_names()) {
    if (name == vname) return variant;
  }
  std::string valid;
  for (const auto& [variant, vname] : pe_variant_names()) {
    if (!valid.empty()) valid += ", ";
    valid += vname;
  }
  throw ConfigError("unknown pe variant '" + name + "'; valid variants: " + valid);
}

namespace {

long parse_long(const std::string& key, const std::string& value) {
  long out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config: key '" + key + "' wants an integer, got '" +
                      value + "'");
  }
  return out;
}

int parse_int(const std::string& key, const std::string& value) {
  return static_cast<int>(parse_long(key, value));
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config: key '" + key + "' wants an unsigned integer, got '" +
                      value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' wants a number, got '" + value +
                      "'");
  }
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

void format_double(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

}  // namespace

bool RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "blocks") blocks = parse_int(key, value);
  else if (key == "dim") dim = parse_int(key, value);
  else if (key == "heads") heads = parse_int(key, value);
  else if (key == "mlp_ratio") mlp_ratio = parse_int(key, value);
  else if (key == "classes") classes = parse_int(key, value);
  else if (key == "pe") pe = value;
  else if (key == "dropout") dropout = parse_double(key, value);
  else if (key == "peg_layers") peg_layers = parse_int(key, value);
  else if (key == "t_patches") t_patches = parse_int(key, value);
  else if (key == "f_patches") f_patches = parse_int(key, value);
  else if (key == "patch_frames") patch_frames = parse_int(key, value);
  else if (key == "patch_mels") patch_mels = parse_int(key, value);
  else if (key == "batch") batch = parse_int(key, value);
  else if (key == "steps") steps = parse_long(key, value);
  else if (key == "warmup") warmup = parse_long(key, value);
  else if (key == "peak_lr") peak_lr = parse_double(key, value);
  else if (key == "decay") decay = parse_double(key, value);
  else if (key == "checkpoint_interval") checkpoint_interval = parse_long(key, value);
  else if (key == "swa_count") swa_count = parse_int(key, value);
  else if (key == "loss") loss = value;
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "precision") precision = value;
  else if (key == "task") task = value;
  else if (key == "corpus") corpus = value;
  else if (key == "train_size") train_size = parse_int(key, value);
  else if (key == "test_size") test_size = parse_int(key, value);
  else if (key == "noise") noise = parse_double(key, value);
  else if (key == "specaugment_rate") specaugment_rate = parse_double(key, value);
  else if (key == "stats_min") stats_min = parse_double(key, value);
  else if (key == "stats_max") stats_max = parse_double(key, value);
  else if (key == "finetune_from") finetune_from = value;
  else if (key == "phase1_epochs") phase1_epochs = parse_int(key, value);
  else if (key == "phase1_lr") phase1_lr = parse_double(key, value);
  else if (key == "phase2_epochs") phase2_epochs = parse_int(key, value);
  else if (key == "phase2_lr") phase2_lr = parse_double(key, value);
  else if (key == "phase2_decay") phase2_decay = parse_double(key, value);
  else if (key == "out") out = value;
  else if (key == "config_hash") config_hash = value;
  else return false;
  return true;
}

void RunConfig::apply_overrides(
    const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string unknown;
  for (const auto& [key, value] : kv) {
    if (!apply(key, value)) {
      if (!unknown.empty()) unknown += ", ";
      unknown += key;
    }
  }
  if (!unknown.empty()) {
    throw ConfigError("config: unknown keys: " + unknown);
  }
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  return from_file(path, RunConfig());
}

RunConfig RunConfig::from_file(const std::filesystem::path& path,
                               const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  RunConfig cfg = base;
  std::string line, unknown;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line.resize(comment);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: " + path.string() + ":" + std::to_string(lineno) +
                        ": expected key = value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!cfg.apply(key, value)) {
      if (!unknown.empty()) unknown += ", ";
      unknown += key;
    }
  }
  if (!unknown.empty()) {
    throw ConfigError("config: " + path.string() + ": unknown keys: " + unknown);
  }
  return cfg;
}

RunConfig RunConfig::paper_scale() {
  RunConfig cfg;
  cfg.blocks = 12;
  cfg.dim = 768;
  cfg.heads = 12;
  cfg.classes = 527;
  cfg.dropout = 0.1;
  cfg.t_patches = 31;
  cfg.f_patches = 8;
  cfg.batch = 64;
  cfg.steps = 290000;
  cfg.warmup = 30000;
  cfg.peak_lr = 5e-4;
  cfg.checkpoint_interval = 10000;
  cfg.loss = "bce";
  return cfg;
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os.precision(17);
  const auto put = [&os](const char* key, const auto& value) {
    os << key << " = " << value << "\n";
  };
  const auto putd = [&os](const char* key, double value) {
    os << key << " = ";
    format_double(os, value);
    os << "\n";
  };
  put("batch", batch);
  put("blocks", blocks);
  put("checkpoint_interval", checkpoint_interval);
  put("classes", classes);
  if (!config_hash.empty()) put("config_hash", config_hash);
  put("corpus", corpus);
  putd("decay", decay);
  put("dim", dim);
  putd("dropout", dropout);
  put("f_patches", f_patches);
  put("finetune_from", finetune_from);
  put("heads", heads);
  put("loss", loss);
  put("mlp_ratio", mlp_ratio);
  putd("noise", noise);
  put("out", out);
  put("patch_frames", patch_frames);
  put("patch_mels", patch_mels);
  put("pe", pe);
  putd("peak_lr", peak_lr);
  put("peg_layers", peg_layers);
  put("phase1_epochs", phase1_epochs);
  putd("phase1_lr", phase1_lr);
  putd("phase2_decay", phase2_decay);
  put("phase2_epochs", phase2_epochs);
  putd("phase2_lr", phase2_lr);
  put("precision", precision);
  put("seed", seed);
  putd("specaugment_rate", specaugment_rate);
  putd("stats_max", stats_max);
  putd("stats_min", stats_min);
  put("steps", steps);
  put("swa_count", swa_count);
  put("t_patches", t_patches);
  put("task", task);
  put("test_size", test_size);
  put("train_size", train_size);
  put("warmup", warmup);
  return os.str();
}

void RunConfig::write(const std::filesystem::path& path) const {
  std::ofstream out_file(path);
  if (!out_file) throw DataError("config: cannot write " + path.string());
  out_file << serialize();
}

std::string RunConfig::model_hash() const {
  std::ostringstream os;
  os << pe << "|" << blocks << "|" << dim << "|" << heads << "|" << mlp_ratio
     << "|" << classes << "|" << peg_layers << "|" << t_patches << "|"
     << f_patches << "|" << patch_frames << "|" << patch_mels << "|" << precision;
  const std::string s = os.str();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PatchLayout RunConfig::layout() const {
  return PatchLayout{t_patches, f_patches, patch_frames, patch_mels, true};
}

ModelConfig RunConfig::model_config() const {
  if (classes < 1) {
    throw ConfigError("config: classes not resolved (set classes or a data source)");
  }
  ModelConfig cfg;
  cfg.blocks = blocks;
  cfg.dim = dim;
  cfg.heads = heads;
  cfg.mlp_ratio = mlp_ratio;
  cfg.classes = classes;
  cfg.pe = parse_pe_variant(pe);
  cfg.dropout = dropout;
  cfg.peg_layers = peg_layers;
  cfg.head = loss == "bce" ? HeadActivation::SigmoidMultilabel
                           : HeadActivation::Softmax;
  cfg.validate();
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.batch_size = batch;
  cfg.total_steps = steps;
  cfg.warmup_steps = warmup;
  cfg.peak_lr = peak_lr;
  cfg.decay_rate = decay;
  cfg.checkpoint_interval = checkpoint_interval;
  cfg.swa_count = swa_count;
  cfg.seed = seed;
  cfg.loss = loss == "bce" ? LossKind::BceMultilabel : LossKind::CeSoftmax;
  cfg.validate();
  return cfg;
}

SynthTask RunConfig::synth_task() const {
  SynthTask t;
  t.kind = parse_task_kind(task);
  t.layout = layout();
  t.classes = classes > 0 ? classes : default_classes(t.kind, t.layout);
  t.noise = noise;
  t.seed = seed;
  t.count = train_size;
  return t;
}

FinetuneConfig RunConfig::finetune_config() const {
  FinetuneConfig cfg;
  cfg.phase1_epochs = phase1_epochs;
  cfg.phase1_lr = phase1_lr;
  cfg.phase2_epochs = phase2_epochs;
  cfg.phase2_lr = phase2_lr;
  cfg.phase2_decay = phase2_decay;
  cfg.batch_size = batch;
  cfg.seed = seed;
  return cfg;
}

LossKind RunConfig::resolved_loss(bool multilabel_corpus) const {
  if (loss == "ce") return LossKind::CeSoftmax;
  if (loss == "bce") return LossKind::BceMultilabel;
  if (loss == "auto") {
    return uses_corpus() && multilabel_corpus ? LossKind::BceMultilabel
                                              : LossKind::CeSoftmax;
  }
  throw ConfigError("config: loss must be auto, ce or bce, got '" + loss + "'");
}

void RunConfig::validate() const {
  parse_pe_variant(pe);
  if (precision != "f32" && precision != "f64") {
    throw ConfigError("config: precision must be f32 or f64, got '" + precision +
                      "'");
  }
  if (loss != "auto" && loss != "ce" && loss != "bce") {
    throw ConfigError("config: loss must be auto, ce or bce, got '" + loss + "'");
  }
  if (!uses_corpus()) parse_task_kind(task);
  if (t_patches < 1 || f_patches < 1 || patch_frames < 1 || patch_mels < 1) {
    throw ConfigError("config: layout extents must be positive");
  }
  if (train_size < 1 || test_size < 0) {
    throw ConfigError("config: train_size must be >= 1 and test_size >= 0");
  }
}

}  // namespace sppe
