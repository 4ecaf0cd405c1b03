#include "sppe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sppe/errors.hpp"

namespace sppe {

namespace {

double average_precision(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& targets) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Descending score; stable keeps ascending clip index for ties.
  std::stable_sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::size_t positives_seen = 0, total_positives = 0;
  for (const std::uint8_t t : targets) total_positives += t;
  double ap = 0.0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    if (targets[order[rank]] != 0) {
      ++positives_seen;
      ap += static_cast<double>(positives_seen) / static_cast<double>(rank + 1);
    }
  }
  return ap / static_cast<double>(total_positives);
}

double cosine(const double* a, const double* b, std::size_t n) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

SimilarityMatrix pairwise_cosine(const std::vector<std::vector<double>>& vecs,
                                 SimilarityAxis axis) {
  SimilarityMatrix m;
  m.n = vecs.size();
  m.axis = axis;
  m.values.assign(m.n * m.n, 0.0);
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = i; j < m.n; ++j) {
      const double c = cosine(vecs[i].data(), vecs[j].data(), vecs[i].size());
      m.values[i * m.n + j] = c;
      m.values[j * m.n + i] = c;
    }
  }
  return m;
}

}  // namespace

double mean_average_precision(const PredictionSet& preds,
                              std::vector<std::size_t>* skipped) {
  if (preds.clips == 0 || preds.classes == 0) {
    throw std::invalid_argument("mean_average_precision: empty prediction set");
  }
  if (preds.scores.size() != preds.clips * preds.classes ||
      preds.targets.size() != preds.clips * preds.classes) {
    throw std::invalid_argument("mean_average_precision: shape mismatch");
  }
  double sum = 0.0;
  std::size_t eligible = 0;
  std::vector<double> class_scores(preds.clips);
  std::vector<std::uint8_t> class_targets(preds.clips);
  for (std::size_t c = 0; c < preds.classes; ++c) {
    std::size_t positives = 0;
    for (std::size_t i = 0; i < preds.clips; ++i) {
      class_scores[i] = preds.scores[i * preds.classes + c];
      class_targets[i] = preds.targets[i * preds.classes + c];
      positives += class_targets[i];
    }
    if (positives == 0) {
      if (skipped != nullptr) skipped->push_back(c);
      continue;
    }
    sum += average_precision(class_scores, class_targets);
    ++eligible;
  }
  if (eligible == 0) {
    throw DataError("mean_average_precision: no class has a positive target");
  }
  return sum / static_cast<double>(eligible);
}

double accuracy(const std::vector<double>& scores, std::size_t classes,
                const std::vector<int>& labels) {
  if (classes == 0 || labels.empty() || scores.size() != labels.size() * classes) {
    throw std::invalid_argument("accuracy: shape mismatch");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = scores.data() + i * classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;  // strict: ties keep the lowest index
    }
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

SimilarityMatrix pe_similarity_absolute(const std::vector<double>& p,
                                        std::size_t n_rows, std::size_t dim,
                                        const PatchLayout& layout,
                                        SimilarityAxis axis) {
  if (n_rows != static_cast<std::size_t>(layout.seq_len()) ||
      p.size() != n_rows * dim) {
    throw std::invalid_argument("pe_similarity_absolute: table " +
                                std::to_string(p.size()) +
                                " does not match layout");
  }
  const std::size_t t = static_cast<std::size_t>(layout.t_patches);
  const std::size_t f = static_cast<std::size_t>(layout.f_patches);
  std::vector<std::vector<double>> vecs;
  if (axis == SimilarityAxis::Time) {
    vecs.assign(t, std::vector<double>());
    for (std::size_t ti = 0; ti < t; ++ti) {
      vecs[ti].reserve(f * dim);
      for (std::size_t fi = 0; fi < f; ++fi) {
        const std::size_t row = ti * f + fi;
        vecs[ti].insert(vecs[ti].end(), p.begin() + row * dim,
                        p.begin() + (row + 1) * dim);
      }
    }
  } else {
    vecs.assign(f, std::vector<double>());
    for (std::size_t fi = 0; fi < f; ++fi) {
      vecs[fi].reserve(t * dim);
      for (std::size_t ti = 0; ti < t; ++ti) {
        const std::size_t row = ti * f + fi;
        vecs[fi].insert(vecs[fi].end(), p.begin() + row * dim,
                        p.begin() + (row + 1) * dim);
      }
    }
  }
  return pairwise_cosine(vecs, axis);
}

SimilarityMatrix pe_similarity_table(const std::vector<double>& table,
                                     std::size_t rows, std::size_t dim,
                                     SimilarityAxis axis) {
  if (table.size() != rows * dim) {
    throw std::invalid_argument("pe_similarity_table: size mismatch");
  }
  std::vector<std::vector<double>> vecs(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    vecs[i].assign(table.begin() + i * dim, table.begin() + (i + 1) * dim);
  }
  return pairwise_cosine(vecs, axis);
}

void write_similarity_csv(const std::filesystem::path& path,
                          const SimilarityMatrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("similarity csv: cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = 0; j < m.n; ++j) {
      if (j > 0) out << ',';
      out << m.at(i, j);
    }
    out << '\n';
  }
}

}  // namespace sppe
