#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hscp/graph.hpp"

namespace hscp {

struct ReinitMarker {
  std::string id;
  std::string scheme = "kaiming";
  Shape input_shape;
  friend bool operator==(const ReinitMarker&, const ReinitMarker&) = default;
};

struct LayerStage {
  std::vector<std::vector<std::string>> clusters;  // each in topological order
  std::vector<std::string> retained;
  std::vector<std::string> removed;
  std::vector<ReinitMarker> reinitialized;
  friend bool operator==(const LayerStage&, const LayerStage&) = default;
};

/// Either a global keep-ratio (k_i = max(1, round(r * c_i))) or explicit
/// per-node cluster counts. Nodes absent from `per_node` keep every channel.
struct ChannelSpec {
  std::optional<double> keep_ratio;
  std::map<std::string, std::int64_t> per_node;

  static ChannelSpec ratio(double r) { return ChannelSpec{r, {}}; }
  std::int64_t clusters_for(const std::string& node, std::int64_t channels) const;
  friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

struct PlanMetadata {
  std::int64_t k = 0;
  ChannelSpec channel_spec;
  std::uint64_t seed = 42;
  friend bool operator==(const PlanMetadata&, const PlanMetadata&) = default;
};

struct PruningPlan {
  std::string graph_sha256;
  LayerStage layer_stage;
  std::map<std::string, std::vector<std::int64_t>> channel_stage;  // node -> kept, ascending
  PlanMetadata metadata;
  friend bool operator==(const PruningPlan&, const PruningPlan&) = default;
};

/// Plan that removes nothing and keeps every channel of every channel-prunable node.
PruningPlan identity_plan(const ModelGraph& graph);

/// Checks every PruningPlan invariant against the graph it was computed for
/// (hash excluded). Throws ValidationError.
void validate_plan(const ModelGraph& graph, const PruningPlan& plan);

nlohmann::json plan_to_json(const PruningPlan& plan);
PruningPlan plan_from_json(const nlohmann::json& doc);

/// Serialized form is deterministic: identical plans give identical bytes.
std::string serialize_plan(const PruningPlan& plan);
void write_plan(const PruningPlan& plan, const std::filesystem::path& path);

/// Reads a plan and validates it against `graph`, including the graph hash.
PruningPlan read_plan(const std::filesystem::path& path, const ModelGraph& graph);

}  // namespace hscp
