#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hscp/activations.hpp"
#include "hscp/graph.hpp"
#include "hscp/matrix.hpp"

namespace hscp::test {

std::filesystem::path fixture_path(const std::string& name);  // tests/fixtures/<name>
std::filesystem::path graph_path(const std::string& name);    // graphs/<name>

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Gaussian entries, rows x cols.
Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng);
/// Random symmetric matrix with entries in [-1, 1].
Matrix random_symmetric(std::size_t n, std::mt19937_64& rng);
/// Gram of a random b x d float matrix.
Matrix random_gram(std::size_t b, std::size_t d, std::mt19937_64& rng);

Tensor random_tensor(std::array<std::int64_t, 4> shape, std::mt19937_64& rng);

/// Synthetic activations for every prunable unit and channel-prunable node of
/// `graph`, shaped by propagate_shapes. Each node mixes a shared latent code
/// with node-specific noise; `overlap` in [0, 1] sets how much successive
/// units share, so similarity decays smoothly with topological distance.
ActivationSet synthetic_activations(const ModelGraph& graph, std::int64_t batch, std::uint64_t seed,
                                    double overlap = 0.5);

/// Copy of `set` in which unit `to` records exactly the activations of `from`.
ActivationSet duplicate_unit(const ActivationSet& set, const std::string& from, const std::string& to);

// Independent reference implementations.

/// Row dot products with a plain double loop.
Matrix gram_oracle(const FlatView& view);

/// Unbiased HSIC evaluated literally: materializes the zero-diagonal Grams and
/// their full product.
double hsic_oracle(const Matrix& k, const Matrix& l);

/// Normalized cut of a labeling: sum over clusters of cut(A, complement) / vol(A).
double normalized_cut(const Matrix& s, const std::vector<int>& labels);

/// Minimum-normalized-cut partition of the n <= 10 vertices into exactly k
/// nonempty clusters, by enumeration. Labels numbered by first appearance.
std::vector<int> min_ncut_partition(const Matrix& s, int k);

/// Minimum k-means inertia over all 2-partitions of the points, by enumeration.
double min_two_partition_inertia(const Matrix& points, std::vector<int>* labels = nullptr);

/// True when two labelings induce the same partition.
template <typename A, typename B>
bool same_partition(const std::vector<A>& a, const std::vector<B>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
    }
  }
  return true;
}

/// Block-diagonal affinity: 1 inside blocks, U[0, noise] across, symmetric, unit diagonal.
Matrix planted_blocks(const std::vector<int>& sizes, double noise, std::mt19937_64& rng,
                      std::vector<int>* truth = nullptr);

/// Writes `samples` as raw complex64 little-endian.
void write_iq(const std::filesystem::path& path, const std::vector<std::complex<float>>& samples);

/// Frobenius norm of a - b.
double frobenius_diff(const Matrix& a, const Matrix& b);

/// Reads a whole file.
std::string slurp(const std::filesystem::path& path);

}  // namespace hscp::test
