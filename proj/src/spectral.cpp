#include <cmath>

#include "hscp/error.hpp"
#include "hscp/spectral.hpp"

namespace hscp {

Matrix laplacian(const Matrix& s) {
  if (s.rows != s.cols) throw ValidationError("similarity matrix must be square");
  const std::size_t n = s.rows;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double degree = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (s(i, j) < 0.0) throw ValidationError("similarity matrix has a negative entry");
      degree += s(i, j);
    }
    if (!(degree > 0.0)) throw NumericalError("zero degree at row " + std::to_string(i));
    inv_sqrt[i] = 1.0 / std::sqrt(degree);
  }
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) l(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt[i] * s(i, j) * inv_sqrt[j];
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) l(i, j) = l(j, i) = 0.5 * (l(i, j) + l(j, i));
  }
  return l;
}

SpectralEmbedding embed(const Matrix& lap, std::size_t k, EigenMethod method) {
  const std::size_t n = lap.rows;
  if (k < 1 || k > n) {
    throw ValidationError("embedding dimension " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  const EigenDecomposition eig = eig_sym(lap, method);
  SpectralEmbedding out;
  out.eigenvalues.assign(eig.values.begin(), eig.values.begin() + static_cast<std::ptrdiff_t>(k));
  out.y = Matrix(n, k);
  for (std::size_t r = 0; r < n; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < k; ++c) norm += eig.vectors(r, c) * eig.vectors(r, c);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    for (std::size_t c = 0; c < k; ++c) out.y(r, c) = eig.vectors(r, c) / norm;
  }
  return out;
}

Clustering spectral_cluster(const SimilarityMatrix& s, std::size_t k, std::uint64_t seed,
                            const KMeansOptions& options) {
  const std::size_t n = s.size();
  if (k < 1 || k > n) {
    throw ValidationError("cluster count " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  const SpectralEmbedding e = embed(laplacian(s), k);
  return kmeans(e.y, k, seed, options);
}

EigengapReport eigengap(const Matrix& lap) {
  EigengapReport report;
  report.eigenvalues = eig_sym(lap).values;
  for (std::size_t i = 1; i < report.eigenvalues.size(); ++i) {
    const double gap = report.eigenvalues[i] - report.eigenvalues[i - 1];
    if (gap > report.largest_gap) {
      report.largest_gap = gap;
      report.suggested_k = i;
    }
  }
  return report;
}

}  // namespace hscp
