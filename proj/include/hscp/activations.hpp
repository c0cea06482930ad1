#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hscp {

/// Dense float32 tensor in C order, shape (b, c, h, w).
struct Tensor {
  std::array<std::int64_t, 4> shape{};
  std::vector<float> data;

  std::int64_t batch() const { return shape[0]; }
  std::int64_t channels() const { return shape[1]; }
  std::int64_t spatial() const { return shape[2] * shape[3]; }
  std::int64_t sample_size() const { return shape[1] * shape[2] * shape[3]; }
};

/// Per-node activations recorded for one probe batch.
class ActivationSet {
 public:
  /// Smallest batch the unbiased HSIC estimator accepts (its b(b-3) denominator).
  static constexpr std::int64_t kMinBatch = 4;

  ActivationSet() = default;
  explicit ActivationSet(std::int64_t batch_size) : batch_size_(batch_size) {}

  std::int64_t batch_size() const { return batch_size_; }
  const std::map<std::string, Tensor, std::less<>>& entries() const { return entries_; }
  bool contains(std::string_view id) const { return entries_.find(id) != entries_.end(); }
  const Tensor& at(std::string_view id) const;

  /// Throws ValidationError if the tensor's leading dimension differs from the batch.
  void insert(std::string id, Tensor tensor);

 private:
  std::int64_t batch_size_ = 0;
  std::map<std::string, Tensor, std::less<>> entries_;
};

/// Manifest plus one raw little-endian float32 file per entry.
ActivationSet read_activations(const std::filesystem::path& manifest_path);
void write_activations(const ActivationSet& set, const std::filesystem::path& manifest_path);

/// Row-major b x cols matrix over tensor storage (no copy). Row n starts at
/// data[n * row_stride]; columns are contiguous.
struct FlatView {
  std::span<const float> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t row_stride = 0;

  std::span<const float> row(std::size_t r) const { return data.subspan(r * row_stride, cols); }
  float operator()(std::size_t r, std::size_t c) const { return data[r * row_stride + c]; }
};

/// b x (c*h*w) view of a node's activations.
FlatView layer_view(const ActivationSet& set, std::string_view node_id);
/// b x (h*w) view of channel p of a node's activations.
FlatView channel_view(const ActivationSet& set, std::string_view node_id, std::int64_t channel);
FlatView channel_view(const Tensor& tensor, std::int64_t channel);

}  // namespace hscp
