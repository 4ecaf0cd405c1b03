#include "sppe/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "sppe/errors.hpp"
#include "sppe/features.hpp"

namespace sppe {

TaskKind parse_task_kind(const std::string& name) {
  if (name == "temporal-order") return TaskKind::TemporalOrder;
  if (name == "frequency-band") return TaskKind::FrequencyBand;
  if (name == "event-count") return TaskKind::EventCount;
  throw ConfigError("unknown task '" + name +
                    "'; valid tasks: temporal-order, frequency-band, event-count");
}

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::TemporalOrder: return "temporal-order";
    case TaskKind::FrequencyBand: return "frequency-band";
    case TaskKind::EventCount: return "event-count";
  }
  return "?";
}

int default_classes(TaskKind kind, const PatchLayout& layout) {
  switch (kind) {
    case TaskKind::TemporalOrder: return 2;
    case TaskKind::FrequencyBand: return layout.f_patches;
    case TaskKind::EventCount: return std::min(4, layout.t_patches);
  }
  return 2;
}

namespace {

Spectrogram noise_grid(const PatchLayout& layout, double noise, Rng& rng) {
  Spectrogram spec(static_cast<std::size_t>(layout.grid_bins()),
                   static_cast<std::size_t>(layout.grid_frames()),
                   SpecDomain::ScaledLogMel);
  for (double& v : spec.values) {
    v = std::clamp(noise * rng.normal(), 0.0, 1.0);
  }
  return spec;
}

// Paints `amp` over the full (band x chunk) block, keeping values in [0, 1].
void paint_event(Spectrogram& spec, const PatchLayout& layout, int band,
                 int chunk, double amp, double noise, Rng& rng) {
  for (int m = 0; m < layout.patch_mels; ++m) {
    for (int fr = 0; fr < layout.patch_frames; ++fr) {
      const auto b = static_cast<std::size_t>(band * layout.patch_mels + m);
      const auto t = static_cast<std::size_t>(chunk * layout.patch_frames + fr);
      spec.at(b, t) = std::clamp(amp + noise * rng.normal(), 0.0, 1.0);
    }
  }
}

void swap_chunk_columns(Spectrogram& spec, const PatchLayout& layout, int chunk_a,
                        int chunk_b) {
  for (std::size_t b = 0; b < spec.bins; ++b) {
    for (int fr = 0; fr < layout.patch_frames; ++fr) {
      std::swap(spec.at(b, static_cast<std::size_t>(chunk_a * layout.patch_frames + fr)),
                spec.at(b, static_cast<std::size_t>(chunk_b * layout.patch_frames + fr)));
    }
  }
}

std::vector<LabeledSpec> gen_temporal_order(const SynthTask& task) {
  const PatchLayout& layout = task.layout;
  if (layout.t_patches < 2 || layout.f_patches < 2) {
    throw DataError("temporal-order: grid too small for two events (need >= 2 "
                    "time chunks and 2 bands)");
  }
  if (task.classes != 2) {
    throw ConfigError("temporal-order: classes must be 2, got " +
                      std::to_string(task.classes));
  }
  if (task.count % 2 != 0) {
    throw ConfigError("temporal-order: count must be even (twin pairs), got " +
                      std::to_string(task.count));
  }
  Rng root(task.seed);
  std::vector<LabeledSpec> out;
  out.reserve(static_cast<std::size_t>(task.count));
  for (int pair = 0; pair < task.count / 2; ++pair) {
    Rng rng = root.fork("pair", static_cast<std::uint64_t>(pair));
    const int band_lo = rng.uniform_int(0, layout.f_patches / 2 - 1);
    const int band_hi = rng.uniform_int(layout.f_patches / 2, layout.f_patches - 1);
    const int t_lo = rng.uniform_int(0, layout.t_patches - 1);
    int t_hi = rng.uniform_int(0, layout.t_patches - 2);
    if (t_hi >= t_lo) ++t_hi;

    // Distinct amplitudes mark which event is the low-band one; the class
    // (their order) is still carried only by patch positions.
    LabeledSpec a;
    a.spec = noise_grid(layout, task.noise, rng);
    paint_event(a.spec, layout, band_lo, t_lo, 0.6, task.noise, rng);
    paint_event(a.spec, layout, band_hi, t_hi, 0.9, task.noise, rng);
    a.label = t_lo < t_hi ? 0 : 1;

    // Twin: the two event chunk columns swapped wholesale (noise included),
    // so the patch multiset is preserved exactly while the label flips.
    LabeledSpec b;
    b.spec = a.spec;
    swap_chunk_columns(b.spec, layout, t_lo, t_hi);
    b.label = 1 - a.label;

    out.push_back(std::move(a));
    out.push_back(std::move(b));
  }
  Rng shuffle_rng = root.fork("shuffle");
  shuffle_rng.shuffle(out);
  return out;
}

std::vector<LabeledSpec> gen_frequency_band(const SynthTask& task) {
  const PatchLayout& layout = task.layout;
  if (task.classes != layout.f_patches) {
    throw ConfigError("frequency-band: classes must equal f_patches (" +
                      std::to_string(layout.f_patches) + "), got " +
                      std::to_string(task.classes));
  }
  Rng root(task.seed);
  std::vector<LabeledSpec> out;
  out.reserve(static_cast<std::size_t>(task.count));
  for (int i = 0; i < task.count; ++i) {
    Rng rng = root.fork("sample", static_cast<std::uint64_t>(i));
    const int band = i % layout.f_patches;  // balanced within +-1
    const int chunk = rng.uniform_int(0, layout.t_patches - 1);
    // Amplitude identifies the band, so the task is solvable from content.
    const double amp =
        0.35 + 0.6 * static_cast<double>(band + 1) / layout.f_patches;
    LabeledSpec s;
    s.spec = noise_grid(layout, task.noise, rng);
    paint_event(s.spec, layout, band, chunk, amp, task.noise, rng);
    s.label = band;
    out.push_back(std::move(s));
  }
  Rng shuffle_rng = root.fork("shuffle");
  shuffle_rng.shuffle(out);
  return out;
}

std::vector<LabeledSpec> gen_event_count(const SynthTask& task) {
  const PatchLayout& layout = task.layout;
  if (task.classes < 1 || task.classes > layout.t_patches) {
    throw ConfigError("event-count: classes must lie in [1, t_patches], got " +
                      std::to_string(task.classes));
  }
  Rng root(task.seed);
  std::vector<LabeledSpec> out;
  out.reserve(static_cast<std::size_t>(task.count));
  for (int i = 0; i < task.count; ++i) {
    Rng rng = root.fork("sample", static_cast<std::uint64_t>(i));
    const int k = i % task.classes + 1;
    std::vector<int> chunks(static_cast<std::size_t>(layout.t_patches));
    for (int c = 0; c < layout.t_patches; ++c) chunks[static_cast<std::size_t>(c)] = c;
    rng.shuffle(chunks);
    LabeledSpec s;
    s.spec = noise_grid(layout, task.noise, rng);
    for (int e = 0; e < k; ++e) {
      const int band = rng.uniform_int(0, layout.f_patches - 1);
      paint_event(s.spec, layout, band, chunks[static_cast<std::size_t>(e)], 0.85,
                  task.noise, rng);
    }
    s.label = k - 1;
    out.push_back(std::move(s));
  }
  Rng shuffle_rng = root.fork("shuffle");
  shuffle_rng.shuffle(out);
  return out;
}

}  // namespace

std::vector<LabeledSpec> gen_task(const SynthTask& task) {
  if (task.count < 1) throw ConfigError("gen_task: count must be positive");
  switch (task.kind) {
    case TaskKind::TemporalOrder: return gen_temporal_order(task);
    case TaskKind::FrequencyBand: return gen_frequency_band(task);
    case TaskKind::EventCount: return gen_event_count(task);
  }
  throw ConfigError("gen_task: unknown kind");
}

std::vector<std::vector<std::size_t>> Corpus::fold_groups() const {
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(n_folds));
  for (std::size_t i = 0; i < clips.size(); ++i) {
    groups[static_cast<std::size_t>(clips[i].entry.fold)].push_back(i);
  }
  return groups;
}

std::vector<int> Corpus::label_indices(const ManifestEntry& entry) const {
  std::vector<int> out;
  for (const std::string& label : entry.labels) {
    const auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) {
      throw DataError("corpus: unknown label " + label);
    }
    out.push_back(static_cast<int>(it - classes.begin()));
  }
  return out;
}

Corpus load_corpus(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("corpus: cannot open manifest " + manifest.string());
  const std::filesystem::path base = manifest.parent_path();

  Corpus corpus;
  std::set<std::string> label_set;
  std::set<std::string> seen_paths;
  std::set<int> folds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line == "path,labels,fold") continue;  // optional header
    std::istringstream row(line);
    ManifestEntry entry;
    std::string labels_field, fold_field;
    if (!std::getline(row, entry.path, ',') ||
        !std::getline(row, labels_field, ',') || !std::getline(row, fold_field)) {
      throw DataError("corpus: malformed manifest line " + std::to_string(lineno) +
                      ": " + line);
    }
    std::istringstream labels(labels_field);
    std::string label;
    while (std::getline(labels, label, ';')) {
      if (!label.empty()) entry.labels.push_back(label);
    }
    if (entry.labels.empty()) {
      throw DataError("corpus: no labels on manifest line " + std::to_string(lineno));
    }
    try {
      entry.fold = std::stoi(fold_field);
    } catch (const std::exception&) {
      throw DataError("corpus: bad fold '" + fold_field + "' on line " +
                      std::to_string(lineno));
    }
    if (entry.fold < 0) {
      throw DataError("corpus: negative fold on line " + std::to_string(lineno));
    }
    if (!seen_paths.insert(entry.path).second) {
      throw DataError("corpus: clip " + entry.path +
                      " appears more than once (fold leakage)");
    }

    const std::filesystem::path full = base / entry.path;
    if (!std::filesystem::exists(full)) {
      throw DataError("corpus: missing file " + full.string());
    }
    CorpusClip clip;
    clip.entry = entry;
    clip.audio = read_wav(full);  // validates the WAV contract

    for (const std::string& l : entry.labels) label_set.insert(l);
    folds.insert(entry.fold);
    corpus.clips.push_back(std::move(clip));
  }
  if (corpus.clips.empty()) throw DataError("corpus: empty manifest");

  // Folds must be the contiguous range 0..max.
  const int max_fold = *folds.rbegin();
  for (int f = 0; f <= max_fold; ++f) {
    if (!folds.contains(f)) {
      throw DataError("corpus: fold gap, fold " + std::to_string(f) +
                      " has no clips (folds 0.." + std::to_string(max_fold) + ")");
    }
  }
  corpus.n_folds = max_fold + 1;
  corpus.classes.assign(label_set.begin(), label_set.end());
  return corpus;
}

namespace {

// Tone frequency at the center of mel band `band` for the given layout,
// mirroring the 64-mel / 0-8000 Hz front-end geometry.
double band_center_hz(const PatchLayout& layout, int band) {
  const double mel_hi = MelFilterbank::hz_to_mel(8000.0);
  const double n_mels = static_cast<double>(layout.grid_bins());
  const double mel_center =
      mel_hi * (static_cast<double>(band * layout.patch_mels) +
                0.5 * layout.patch_mels) /
      n_mels;
  return MelFilterbank::mel_to_hz(mel_center);
}

void paint_tone(std::vector<double>& samples, double hz, std::size_t begin,
                std::size_t end, double amp) {
  for (std::size_t n = begin; n < std::min(end, samples.size()); ++n) {
    samples[n] += amp * std::sin(2.0 * M_PI * hz * static_cast<double>(n) / 16000.0);
  }
}

}  // namespace

std::filesystem::path generate_wav_corpus(const GenDataConfig& cfg) {
  if (cfg.clips < cfg.folds || cfg.folds < 1) {
    throw ConfigError("gen-data: need clips >= folds >= 1");
  }
  const PatchLayout& layout = cfg.layout;
  std::filesystem::create_directories(cfg.out_dir / "clips");

  const std::size_t n_samples =
      static_cast<std::size_t>(layout.grid_frames() - 1) * Stft::kHop +
      Stft::kWindow + Stft::kHop;
  const std::size_t chunk_samples =
      static_cast<std::size_t>(layout.patch_frames) * Stft::kHop;

  Rng root(cfg.seed);
  std::ofstream manifest(cfg.out_dir / "manifest.csv");
  if (!manifest) {
    throw DataError("gen-data: cannot write manifest under " +
                    cfg.out_dir.string());
  }
  manifest << "path,labels,fold\n";

  const int classes = default_classes(cfg.kind, layout);
  for (int i = 0; i < cfg.clips; ++i) {
    Rng rng = root.fork("clip", static_cast<std::uint64_t>(i));
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(n_samples, 0.0);
    for (double& s : clip.samples) s = 0.002 * rng.normal();

    std::string label;
    if (cfg.kind == TaskKind::FrequencyBand) {
      const int band = i % classes;
      paint_tone(clip.samples, band_center_hz(layout, band), 0, n_samples, 0.3);
      label = "band" + std::to_string(band);
    } else if (cfg.kind == TaskKind::TemporalOrder) {
      const int lo_first = i % 2;
      const double lo_hz = band_center_hz(layout, 0);
      const double hi_hz = band_center_hz(layout, layout.f_patches - 1);
      const std::size_t a0 = 0, b0 = chunk_samples * 2;
      paint_tone(clip.samples, lo_first ? hi_hz : lo_hz, a0, a0 + chunk_samples, 0.3);
      paint_tone(clip.samples, lo_first ? lo_hz : hi_hz, b0, b0 + chunk_samples, 0.3);
      label = "order" + std::to_string(lo_first);
    } else {
      const int k = i % classes + 1;
      std::vector<int> chunks(static_cast<std::size_t>(layout.t_patches));
      for (int c = 0; c < layout.t_patches; ++c) chunks[static_cast<std::size_t>(c)] = c;
      rng.shuffle(chunks);
      for (int e = 0; e < k; ++e) {
        const std::size_t start =
            static_cast<std::size_t>(chunks[static_cast<std::size_t>(e)]) *
            chunk_samples;
        paint_tone(clip.samples, band_center_hz(layout, layout.f_patches / 2),
                   start, start + chunk_samples, 0.3);
      }
      label = "count" + std::to_string(k);
    }

    char name[32];
    std::snprintf(name, sizeof(name), "clips/clip_%04d.wav", i);
    write_wav(cfg.out_dir / name, clip);
    manifest << name << "," << label << "," << i % cfg.folds << "\n";
  }
  return cfg.out_dir / "manifest.csv";
}

}  // namespace sppe
