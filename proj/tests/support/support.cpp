#include "support.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "hscp/rng.hpp"

namespace hscp::test {

std::filesystem::path fixture_path(const std::string& name) {
  return std::filesystem::path(HSCP_SOURCE_DIR) / "tests" / "fixtures" / name;
}

std::filesystem::path graph_path(const std::string& name) {
  return std::filesystem::path(HSCP_SOURCE_DIR) / "graphs" / name;
}

TempDir::TempDir(const std::string& tag) {
  static std::uint64_t counter = 0;
  std::random_device rd;
  const auto stamp = (static_cast<std::uint64_t>(rd()) << 20) ^ ++counter;
  path_ = std::filesystem::temp_directory_path() / ("hscp-" + tag + "-" + std::to_string(stamp));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.data) v = n(rng);
  return m;
}

Matrix random_symmetric(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) m(i, j) = m(j, i) = u(rng);
  }
  return m;
}

Matrix random_gram(std::size_t b, std::size_t d, std::mt19937_64& rng) {
  const Matrix x = random_matrix(b, d, rng);
  Matrix g(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += x(i, k) * x(j, k);
      g(i, j) = s;
    }
  }
  return g;
}

Tensor random_tensor(std::array<std::int64_t, 4> shape, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor t;
  t.shape = shape;
  t.data.resize(static_cast<std::size_t>(shape[0] * shape[1] * shape[2] * shape[3]));
  for (float& v : t.data) v = n(rng);
  return t;
}

ActivationSet synthetic_activations(const ModelGraph& graph, std::int64_t batch, std::uint64_t seed, double overlap) {
  constexpr std::size_t kLatent = 16;
  const auto b = static_cast<std::size_t>(batch);
  const auto units = prunable_units(graph);
  const auto shapes = propagate_shapes(graph, graph.input_shape);
  const GraphIndex index(graph);

  // Latent code per unit: an AR(1) chain along topological order.
  std::mt19937_64 rng(seed);
  std::map<std::string, Matrix> latent;
  Matrix h = random_matrix(b, kLatent, rng);
  const double fresh = std::sqrt(std::max(0.0, 1.0 - overlap * overlap));
  for (const auto& u : units) {
    const Matrix noise = random_matrix(b, kLatent, rng);
    for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] = overlap * h.data[i] + fresh * noise.data[i];
    latent[u] = h;
  }

  std::vector<std::string> ids = units;
  for (const auto& id : channel_prunable_nodes(graph)) ids.push_back(id);

  ActivationSet set(batch);
  for (const auto& id : ids) {
    if (set.contains(id)) continue;
    const Node& node = graph.nodes[index.index_of(id)];
    const Shape& s = shapes[index.index_of(id)];
    const std::string& owner = node.unit.empty() ? id : node.unit;
    const Matrix& z = latent.count(owner) ? latent.at(owner) : latent.begin()->second;
    std::mt19937_64 node_rng(derive_seed(seed, id));
    std::normal_distribution<double> n(0.0, 1.0);
    const auto hw = static_cast<std::size_t>(s.h * s.w);
    Tensor t;
    t.shape = {batch, s.c, s.h, s.w};
    t.data.resize(b * static_cast<std::size_t>(s.c) * hw);
    for (std::int64_t p = 0; p < s.c; ++p) {
      // Each channel reads a 4-dimensional slice of the latent code.
      std::vector<std::size_t> dims;
      for (std::size_t k = 0; k < 4; ++k) dims.push_back((static_cast<std::size_t>(p) * 3 + k) % kLatent);
      Matrix proj(dims.size(), hw);
      for (double& v : proj.data) v = n(node_rng);
      for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t e = 0; e < hw; ++e) {
          double v = 0.1 * n(node_rng);
          for (std::size_t k = 0; k < dims.size(); ++k) v += z(r, dims[k]) * proj(k, e);
          t.data[(r * static_cast<std::size_t>(s.c) + static_cast<std::size_t>(p)) * hw + e] = static_cast<float>(v);
        }
      }
    }
    set.insert(id, std::move(t));
  }
  return set;
}

Matrix gram_oracle(const FlatView& view) {
  Matrix g(view.rows, view.rows);
  for (std::size_t i = 0; i < view.rows; ++i) {
    for (std::size_t j = 0; j < view.rows; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < view.cols; ++c) s += static_cast<double>(view(i, c)) * static_cast<double>(view(j, c));
      g(i, j) = s;
    }
  }
  return g;
}

double hsic_oracle(const Matrix& k, const Matrix& l) {
  const std::size_t b = k.rows;
  Matrix kt = k, lt = l;
  for (std::size_t i = 0; i < b; ++i) kt(i, i) = lt(i, i) = 0.0;
  Matrix prod(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t m = 0; m < b; ++m) prod(i, j) += kt(i, m) * lt(m, j);
    }
  }
  double trace = 0.0, sum_k = 0.0, sum_l = 0.0, sum_prod = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    trace += prod(i, i);
    for (std::size_t j = 0; j < b; ++j) {
      sum_k += kt(i, j);
      sum_l += lt(i, j);
      sum_prod += prod(i, j);
    }
  }
  const double n = static_cast<double>(b);
  return (trace + sum_k * sum_l / ((n - 1) * (n - 2)) - 2.0 / (n - 2) * sum_prod) / (n * (n - 3));
}

double normalized_cut(const Matrix& s, const std::vector<int>& labels) {
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    double cut = 0.0, vol = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      for (std::size_t j = 0; j < labels.size(); ++j) {
        vol += s(i, j);
        if (labels[j] != c) cut += s(i, j);
      }
    }
    total += cut / vol;
  }
  return total;
}

std::vector<int> min_ncut_partition(const Matrix& s, int k) {
  const std::size_t n = s.rows;
  std::vector<int> labels(n, 0), best;
  double best_cut = std::numeric_limits<double>::infinity();
  // Restricted growth strings enumerate each set partition exactly once.
  std::function<void(std::size_t, int)> walk = [&](std::size_t i, int used) {
    if (i == n) {
      if (used != k) return;
      const double c = normalized_cut(s, labels);
      if (c < best_cut - 1e-12) {
        best_cut = c;
        best = labels;
      }
      return;
    }
    if (used + static_cast<int>(n - i) < k) return;
    for (int c = 0; c <= std::min(used, k - 1); ++c) {
      labels[i] = c;
      walk(i + 1, std::max(used, c + 1));
    }
  };
  walk(0, 0);
  return best;
}

double min_two_partition_inertia(const Matrix& points, std::vector<int>* out) {
  const std::size_t n = points.rows;
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 1; mask + 1 < (1ULL << n); ++mask) {
    if (mask & 1ULL) continue;  // fix point 0 in cluster 0 to skip mirrored labelings
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = (mask >> i) & 1ULL ? 1 : 0;
    double inertia = 0.0;
    for (int c = 0; c < 2; ++c) {
      std::vector<double> mean(points.cols, 0.0);
      double count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != c) continue;
        ++count;
        for (std::size_t d = 0; d < points.cols; ++d) mean[d] += points(i, d);
      }
      for (double& m : mean) m /= count;
      for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != c) continue;
        for (std::size_t d = 0; d < points.cols; ++d) inertia += (points(i, d) - mean[d]) * (points(i, d) - mean[d]);
      }
    }
    if (inertia < best) {
      best = inertia;
      if (out) *out = labels;
    }
  }
  return best;
}

Matrix planted_blocks(const std::vector<int>& sizes, double noise, std::mt19937_64& rng, std::vector<int>* truth) {
  std::vector<int> labels;
  for (std::size_t blk = 0; blk < sizes.size(); ++blk) labels.insert(labels.end(), static_cast<std::size_t>(sizes[blk]), static_cast<int>(blk));
  const std::size_t n = labels.size();
  std::uniform_real_distribution<double> u(0.0, noise);
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) s(i, j) = s(j, i) = labels[i] == labels[j] ? 1.0 : u(rng);
  }
  if (truth) *truth = labels;
  return s;
}

void write_iq(const std::filesystem::path& path, const std::vector<std::complex<float>>& samples) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(samples.data()), static_cast<std::streamsize>(samples.size() * sizeof(samples[0])));
}

double frobenius_diff(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return std::sqrt(s);
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ActivationSet duplicate_unit(const ActivationSet& set, const std::string& from, const std::string& to) {
  ActivationSet out(set.batch_size());
  for (const auto& [id, t] : set.entries()) out.insert(id, id == to ? set.at(from) : t);
  return out;
}

}  // namespace hscp::test
