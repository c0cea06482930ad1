#include <limits>
#include <numeric>

#include "hscp/error.hpp"
#include "hscp/rng.hpp"
#include "hscp/spectral.hpp"

namespace hscp {
namespace {

double sq_distance(const Matrix& points, std::size_t row, const Matrix& centroids, std::size_t c) {
  double sum = 0.0;
  for (std::size_t d = 0; d < points.cols; ++d) {
    const double diff = points(row, d) - centroids(c, d);
    sum += diff * diff;
  }
  return sum;
}

void copy_row(const Matrix& from, std::size_t r, Matrix& to, std::size_t c) {
  for (std::size_t d = 0; d < from.cols; ++d) to(c, d) = from(r, d);
}

Matrix seed_centroids(const Matrix& points, std::size_t k, std::uint64_t seed) {
  const std::size_t n = points.rows;
  std::uint64_t state = seed;
  Matrix centroids(k, points.cols);
  copy_row(points, std::min(n - 1, static_cast<std::size_t>(unit_interval(splitmix64(state)) * n)), centroids, 0);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_distance(points, i, centroids, c - 1));
      total += nearest[i];
    }
    const double u = unit_interval(splitmix64(state));
    std::size_t pick = std::min(n - 1, static_cast<std::size_t>(u * n));
    if (total > 0.0) {
      const double target = u * total;
      double running = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        running += nearest[i];
        pick = i;
        if (running > target && nearest[i] > 0.0) break;
      }
    }
    copy_row(points, pick, centroids, c);
  }
  return centroids;
}

void assign(const Matrix& points, const Matrix& centroids, std::vector<std::int64_t>& labels) {
  for (std::size_t i = 0; i < points.rows; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::int64_t arg = 0;
    for (std::size_t c = 0; c < centroids.rows; ++c) {
      const double d = sq_distance(points, i, centroids, c);
      if (d < best) {
        best = d;
        arg = static_cast<std::int64_t>(c);
      }
    }
    labels[i] = arg;
  }
}

/// Gives each empty cluster the point farthest from its centroid among clusters of size >= 2.
void repair_empty(const Matrix& points, Matrix& centroids, std::vector<std::int64_t>& labels) {
  const std::size_t k = centroids.rows;
  std::vector<std::size_t> sizes(k, 0);
  for (auto l : labels) ++sizes[static_cast<std::size_t>(l)];
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] != 0) continue;
    double far = -1.0;
    std::size_t pick = 0;
    for (std::size_t i = 0; i < points.rows; ++i) {
      const auto owner = static_cast<std::size_t>(labels[i]);
      if (sizes[owner] < 2) continue;
      const double d = sq_distance(points, i, centroids, owner);
      if (d > far) {
        far = d;
        pick = i;
      }
    }
    --sizes[static_cast<std::size_t>(labels[pick])];
    labels[pick] = static_cast<std::int64_t>(c);
    sizes[c] = 1;
    copy_row(points, pick, centroids, c);
  }
}

void update_centroids(const Matrix& points, const std::vector<std::int64_t>& labels, Matrix& centroids) {
  std::vector<std::size_t> sizes(centroids.rows, 0);
  std::fill(centroids.data.begin(), centroids.data.end(), 0.0);
  for (std::size_t i = 0; i < points.rows; ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++sizes[c];
    for (std::size_t d = 0; d < points.cols; ++d) centroids(c, d) += points(i, d);
  }
  for (std::size_t c = 0; c < centroids.rows; ++c) {
    for (std::size_t d = 0; d < points.cols; ++d) centroids(c, d) /= static_cast<double>(sizes[c]);
  }
}

double inertia_of(const Matrix& points, const Matrix& centroids, const std::vector<std::int64_t>& labels) {
  double sum = 0.0;
  for (std::size_t i = 0; i < points.rows; ++i) sum += sq_distance(points, i, centroids, static_cast<std::size_t>(labels[i]));
  return sum;
}

Clustering lloyd(const Matrix& points, std::size_t k, std::uint64_t seed, unsigned max_iterations) {
  Clustering result;
  result.centroids = seed_centroids(points, k, seed);
  result.assignments.assign(points.rows, 0);
  assign(points, result.centroids, result.assignments);
  repair_empty(points, result.centroids, result.assignments);
  std::vector<std::int64_t> next(points.rows);
  for (unsigned it = 0; it < max_iterations; ++it) {
    update_centroids(points, result.assignments, result.centroids);
    assign(points, result.centroids, next);
    repair_empty(points, result.centroids, next);
    if (next == result.assignments) break;
    result.assignments.swap(next);
  }
  update_centroids(points, result.assignments, result.centroids);
  result.inertia = inertia_of(points, result.centroids, result.assignments);
  return result;
}

/// Renumbers clusters in order of first appearance.
void relabel(Clustering& c) {
  const std::size_t k = c.centroids.rows;
  std::vector<std::int64_t> map(k, -1);
  std::int64_t next = 0;
  for (auto& l : c.assignments) {
    auto& m = map[static_cast<std::size_t>(l)];
    if (m < 0) m = next++;
    l = m;
  }
  Matrix centroids(k, c.centroids.cols);
  for (std::size_t old = 0; old < k; ++old) {
    for (std::size_t d = 0; d < centroids.cols; ++d) centroids(static_cast<std::size_t>(map[old]), d) = c.centroids(old, d);
  }
  c.centroids = std::move(centroids);
}

}  // namespace

Clustering kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
  const std::size_t n = points.rows;
  if (k < 1) throw ValidationError("k-means needs at least one cluster");
  if (n < k) throw ValidationError("k-means with " + std::to_string(k) + " clusters needs at least as many points, got " +
                                   std::to_string(n));
  if (k == n) {
    Clustering identity;
    identity.assignments.resize(n);
    std::iota(identity.assignments.begin(), identity.assignments.end(), 0);
    identity.centroids = points;
    return identity;
  }
  const unsigned restarts = std::max(1u, options.restarts);
  std::vector<Clustering> runs(restarts);
  parallel_for(restarts, options.par, [&](std::size_t r) {
    runs[r] = lloyd(points, k, derive_seed(seed, static_cast<std::uint64_t>(r)), options.max_iterations);
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].inertia < runs[best].inertia) best = r;
  }
  Clustering result = std::move(runs[best]);
  relabel(result);
  return result;
}

}  // namespace hscp
