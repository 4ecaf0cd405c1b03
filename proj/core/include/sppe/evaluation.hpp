#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sppe/patching.hpp"

namespace sppe {

struct PredictionSet {
  std::size_t clips = 0;
  std::size_t classes = 0;
  std::vector<double> scores;        // clips x classes, row-major
  std::vector<std::uint8_t> targets; // clips x classes, values in {0, 1}
};

// Mean average precision: per-class AP via rank-order precision-recall
// (precision accumulated at each positive's rank, no interpolation),
// averaged over classes with at least one positive. Ties in score rank by
// ascending clip index. Classes without positives are skipped and, when
// `skipped` is non-null, reported there.
double mean_average_precision(const PredictionSet& preds,
                              std::vector<std::size_t>* skipped = nullptr);

// Fraction of argmax matches; argmax ties resolve to the lowest class index.
double accuracy(const std::vector<double>& scores, std::size_t classes,
                const std::vector<int>& labels);

enum class SimilarityAxis { Time, Frequency };

struct SimilarityMatrix {
  std::size_t n = 0;
  std::vector<double> values;  // n x n, symmetric, entries in [-1, 1]
  SimilarityAxis axis = SimilarityAxis::Time;

  double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

// Absolute-PE diagnostics: for each time index, concatenate the embedding
// rows sharing that time (in frequency order) and compute pairwise cosine
// similarity; the frequency axis is analogous.
SimilarityMatrix pe_similarity_absolute(const std::vector<double>& p,
                                        std::size_t n_rows, std::size_t dim,
                                        const PatchLayout& layout,
                                        SimilarityAxis axis);

// Learned-relative diagnostics: pairwise cosine similarity of the rows of
// E^t (time axis) or E^f (frequency axis).
SimilarityMatrix pe_similarity_table(const std::vector<double>& table,
                                     std::size_t rows, std::size_t dim,
                                     SimilarityAxis axis);

void write_similarity_csv(const std::filesystem::path& path,
                          const SimilarityMatrix& m);

}  // namespace sppe
