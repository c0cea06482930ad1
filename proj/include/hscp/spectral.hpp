#pragma once

#include <cstdint>
#include <vector>

#include "hscp/matrix.hpp"
#include "hscp/parallel.hpp"
#include "hscp/similarity.hpp"

namespace hscp {

/// I - D^-1/2 S D^-1/2 with D the row sums of S, symmetrized after construction.
Matrix laplacian(const Matrix& s);
inline Matrix laplacian(const SimilarityMatrix& s) { return laplacian(s.values); }

enum class EigenMethod {
  automatic,    // Jacobi up to kJacobiLimit, tridiagonal QL above
  jacobi,       // cyclic Jacobi rotations
  tridiagonal,  // Householder reduction + implicit QL (Eigen)
};

inline constexpr std::size_t kJacobiLimit = 512;

struct EigenDecomposition {
  std::vector<double> values;  // ascending
  Matrix vectors;              // column i pairs with values[i]; largest-magnitude entry positive
};

/// Symmetric eigendecomposition. Throws NumericalError if Jacobi fails to
/// converge within 100 sweeps.
EigenDecomposition eig_sym(const Matrix& a, EigenMethod method = EigenMethod::automatic);

struct SpectralEmbedding {
  Matrix y;                         // n x k, rows unit length (zero rows stay zero)
  std::vector<double> eigenvalues;  // the k selected, ascending
};

/// Eigenvectors of the k smallest eigenvalues (zeros included), row-normalized.
SpectralEmbedding embed(const Matrix& lap, std::size_t k, EigenMethod method = EigenMethod::automatic);

struct Clustering {
  std::vector<std::int64_t> assignments;  // cluster ids numbered by first appearance
  Matrix centroids;                       // k x dim
  double inertia = 0.0;
};

struct KMeansOptions {
  unsigned restarts = 10;
  unsigned max_iterations = 300;
  Parallelism par{};
};

/// Lloyd iterations from k-means++ seeding; best of `restarts` runs by inertia,
/// ties going to the earliest restart.
Clustering kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

Clustering spectral_cluster(const SimilarityMatrix& s, std::size_t k, std::uint64_t seed,
                            const KMeansOptions& options = {});

struct EigengapReport {
  std::vector<double> eigenvalues;  // ascending Laplacian spectrum
  std::size_t suggested_k = 1;      // position of the largest gap
  double largest_gap = 0.0;
};

/// Advisory only; never used to choose k automatically.
EigengapReport eigengap(const Matrix& lap);

}  // namespace hscp
