#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sppe/patching.hpp"
#include "sppe/rng.hpp"
#include "sppe/spectrogram.hpp"
#include "sppe/wav.hpp"

namespace sppe {

enum class TaskKind { TemporalOrder, FrequencyBand, EventCount };

TaskKind parse_task_kind(const std::string& name);
const char* to_string(TaskKind kind);

// Labeled synthetic spectrogram tasks at desk scale. Events are aligned to
// patch boundaries so that within-patch content carries no information about
// where a patch sits in the grid.
struct SynthTask {
  TaskKind kind = TaskKind::TemporalOrder;
  PatchLayout layout = PatchLayout::desk();
  int classes = 2;
  double noise = 0.05;
  std::uint64_t seed = 1;
  int count = 128;
};

struct LabeledSpec {
  Spectrogram spec;
  int label = 0;
};

int default_classes(TaskKind kind, const PatchLayout& layout);

// Temporal-order: two tone events in a low and a high band at distinct time
// chunks; label 0 iff the low-band event comes first. Samples are generated
// in twin pairs that share one patch multiset (the two event chunk columns
// swapped wholesale, noise included) and carry opposite labels, so a
// permutation-invariant classifier cannot beat chance. Count must be even.
//
// Frequency-band: a single band-filling event whose amplitude identifies the
// band; label = band index, solvable with no positional information.
//
// Event-count: k events at distinct time chunks, label k-1.
std::vector<LabeledSpec> gen_task(const SynthTask& task);

// Corpus ingestion for real WAV folders. Manifest: CSV with columns
// path,labels(semicolon-separated),fold; paths relative to the manifest.
struct ManifestEntry {
  std::string path;
  std::vector<std::string> labels;
  int fold = 0;
};

struct CorpusClip {
  ManifestEntry entry;
  AudioClip audio;
};

struct Corpus {
  std::vector<CorpusClip> clips;      // manifest order
  std::vector<std::string> classes;   // sorted unique label names
  int n_folds = 0;

  std::vector<std::vector<std::size_t>> fold_groups() const;
  std::vector<int> label_indices(const ManifestEntry& entry) const;
};

Corpus load_corpus(const std::filesystem::path& manifest);

// Synthesizes a tone-based 16 kHz WAV corpus for the given task (clips/ +
// manifest.csv under out_dir) so that the full ingestion path can be driven
// end to end.
struct GenDataConfig {
  TaskKind kind = TaskKind::FrequencyBand;
  PatchLayout layout = PatchLayout{3, 8, 32, 8, true};
  int clips = 40;
  int folds = 5;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "data";
};

std::filesystem::path generate_wav_corpus(const GenDataConfig& cfg);

}  // namespace sppe
