#include "hscp/activations.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "hscp/error.hpp"

namespace hscp {
namespace {

std::string file_stem_for(std::string_view id) {
  std::string stem;
  for (char c : id) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                      c == '_' || c == '-';
    stem.push_back(keep ? c : '_');
  }
  return stem.empty() ? "tensor" : stem;
}

void swap_if_big_endian(std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (float& v : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      bits = __builtin_bswap32(bits);
      std::memcpy(&v, &bits, sizeof bits);
    }
  }
}

}  // namespace

const Tensor& ActivationSet::at(std::string_view id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw ValidationError("no activations recorded for node '" + std::string(id) + "'");
  return it->second;
}

void ActivationSet::insert(std::string id, Tensor tensor) {
  for (std::int64_t d : tensor.shape) {
    if (d <= 0) throw ValidationError("tensor '" + id + "' has a non-positive dimension");
  }
  if (tensor.batch() != batch_size_) {
    throw ValidationError("batch mismatch: tensor '" + id + "' has leading dimension " +
                          std::to_string(tensor.batch()) + ", set batch is " + std::to_string(batch_size_));
  }
  const auto expected = static_cast<std::size_t>(tensor.batch() * tensor.sample_size());
  if (tensor.data.size() != expected) {
    throw ValidationError("tensor '" + id + "' holds " + std::to_string(tensor.data.size()) +
                          " values, shape requires " + std::to_string(expected));
  }
  entries_.insert_or_assign(std::move(id), std::move(tensor));
}

ActivationSet read_activations(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open activation manifest " + manifest_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("parse error in " + manifest_path.string() + ": " + e.what());
  }
  const auto base = manifest_path.parent_path();
  try {
    if (doc.at("version").get<int>() != 1) throw ValidationError("unsupported activation manifest version");
    const std::int64_t b = doc.at("batch_size").get<std::int64_t>();
    if (b < ActivationSet::kMinBatch) {
      throw ValidationError("batch size " + std::to_string(b) + " is below the minimum of " +
                            std::to_string(ActivationSet::kMinBatch));
    }
    ActivationSet set(b);
    for (const auto& entry : doc.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      if (entry.value("dtype", std::string("f32")) != "f32") throw ValidationError("tensor '" + name + "': dtype must be f32");
      if (entry.value("byte_order", std::string("le")) != "le") {
        throw ValidationError("tensor '" + name + "': byte_order must be le");
      }
      const auto dims = entry.at("shape").get<std::vector<std::int64_t>>();
      if (dims.size() != 4) throw ValidationError("tensor '" + name + "': shape must be [b, c, h, w]");
      Tensor t;
      std::copy(dims.begin(), dims.end(), t.shape.begin());
      if (t.shape[0] != b) {
        throw ValidationError("batch mismatch: tensor '" + name + "' has leading dimension " +
                              std::to_string(t.shape[0]) + ", manifest batch is " + std::to_string(b));
      }
      const auto path = base / entry.at("file").get<std::string>();
      std::error_code ec;
      const auto bytes = std::filesystem::file_size(path, ec);
      if (ec) throw IoError("missing tensor file " + path.string());
      const auto count = static_cast<std::uint64_t>(t.shape[0] * t.shape[1] * t.shape[2] * t.shape[3]);
      if (bytes != count * sizeof(float)) {
        throw ValidationError("shape mismatch: tensor '" + name + "' declares " + std::to_string(count * 4) +
                              " bytes but " + path.string() + " has " + std::to_string(bytes));
      }
      t.data.resize(count);
      std::ifstream f(path, std::ios::binary);
      if (!f.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(bytes))) {
        throw IoError("failed reading " + path.string());
      }
      swap_if_big_endian(t.data);
      set.insert(name, std::move(t));
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("activation manifest schema violation: ") + e.what());
  }
}

void write_activations(const ActivationSet& set, const std::filesystem::path& manifest_path) {
  const auto base = manifest_path.parent_path();
  if (!base.empty()) std::filesystem::create_directories(base);
  nlohmann::json tensors = nlohmann::json::array();
  std::set<std::string> used;
  for (const auto& [name, t] : set.entries()) {
    std::string file = file_stem_for(name) + ".f32";
    for (int i = 2; !used.insert(file).second; ++i) file = file_stem_for(name) + "." + std::to_string(i) + ".f32";
    std::vector<float> data = t.data;
    swap_if_big_endian(data);
    std::ofstream out(base / file, std::ios::binary);
    if (!out || !out.write(reinterpret_cast<const char*>(data.data()),
                           static_cast<std::streamsize>(data.size() * sizeof(float)))) {
      throw IoError("cannot write tensor file " + (base / file).string());
    }
    tensors.push_back({{"name", name},
                       {"shape", t.shape},
                       {"dtype", "f32"},
                       {"byte_order", "le"},
                       {"file", file}});
  }
  nlohmann::json doc{{"version", 1}, {"batch_size", set.batch_size()}, {"tensors", std::move(tensors)}};
  std::ofstream out(manifest_path);
  if (!out) throw IoError("cannot write activation manifest " + manifest_path.string());
  out << doc.dump(1) << '\n';
}

FlatView layer_view(const ActivationSet& set, std::string_view node_id) {
  const Tensor& t = set.at(node_id);
  const auto cols = static_cast<std::size_t>(t.sample_size());
  return {std::span<const float>(t.data), static_cast<std::size_t>(t.batch()), cols, cols};
}

FlatView channel_view(const Tensor& t, std::int64_t channel) {
  if (channel < 0 || channel >= t.channels()) {
    throw ValidationError("channel index " + std::to_string(channel) + " out of range [0, " +
                          std::to_string(t.channels()) + ")");
  }
  const auto hw = static_cast<std::size_t>(t.spatial());
  const auto stride = static_cast<std::size_t>(t.sample_size());
  const auto rows = static_cast<std::size_t>(t.batch());
  std::span<const float> all(t.data);
  // Span from the first row of the channel to the end of its last row.
  const std::size_t first = static_cast<std::size_t>(channel) * hw;
  return {all.subspan(first, (rows - 1) * stride + hw), rows, hw, stride};
}

FlatView channel_view(const ActivationSet& set, std::string_view node_id, std::int64_t channel) {
  return channel_view(set.at(node_id), channel);
}

}  // namespace hscp
