#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace hscp {

struct PruningPlan;

enum class NodeKind {
  conv2d,
  depthwise_conv2d,
  linear,
  batch_norm,
  relu,
  add,
  concat,
  pool,
  global_pool,
  channel_shuffle,
  classifier,
  slice,  // contiguous channel range [offset, offset + out_channels) of its input
};

std::string_view to_string(NodeKind kind);
NodeKind node_kind_from_string(std::string_view name);

struct Extent2 {
  std::int64_t h = 1;
  std::int64_t w = 1;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

/// Activation shape of a single sample: channels x height x width.
struct Shape {
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
  std::int64_t elements() const { return c * h * w; }
};

std::string to_string(const Shape& shape);

struct Node {
  std::string id;
  NodeKind kind = NodeKind::conv2d;
  std::int64_t out_channels = 1;
  Extent2 kernel{1, 1};
  Extent2 stride{1, 1};
  Extent2 padding{0, 0};
  std::int64_t groups = 1;
  std::int64_t offset = 0;  // slice only
  bool has_bias = false;
  bool prunable = false;
  bool channel_prunable = false;
  // Id of the prunable unit this node belongs to; a unit's output node names itself.
  std::string unit;
  // Weight re-initialization scheme required before fine-tuning, empty if none.
  std::string reinit;
  // Inserted projection whose output width follows its add siblings.
  bool adaptive = false;

  friend bool operator==(const Node&, const Node&) = default;
};

struct Edge {
  std::string from;
  std::string to;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// A typed DAG of layers. Edge order defines input order (relevant for concat).
struct ModelGraph {
  int version = 1;
  Shape input_shape;
  std::int64_t class_count = 0;
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::vector<std::vector<std::string>> coupling_groups;

  const Node* find(std::string_view id) const;
  Node* find(std::string_view id);

  friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

/// Adjacency lookups over a graph. Holds indices into graph.nodes; does not own
/// the graph and is invalidated by any structural edit.
class GraphIndex {
 public:
  explicit GraphIndex(const ModelGraph& graph);

  std::size_t index_of(std::string_view id) const;
  bool contains(std::string_view id) const;
  const std::vector<std::size_t>& producers(std::size_t node) const { return producers_[node]; }
  const std::vector<std::size_t>& consumers(std::size_t node) const { return consumers_[node]; }
  /// Kahn order; ties resolved by declaration order so the result is stable.
  const std::vector<std::size_t>& topological_order() const { return order_; }
  std::size_t topological_rank(std::size_t node) const { return rank_[node]; }
  /// Members of the unit whose output node is `unit_id`, in declaration order.
  std::vector<std::size_t> unit_members(std::string_view unit_id) const;

 private:
  std::map<std::string, std::size_t, std::less<>> ids_;
  std::vector<std::vector<std::size_t>> producers_;
  std::vector<std::vector<std::size_t>> consumers_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> rank_;
  const ModelGraph* graph_;
};

ModelGraph graph_from_json(const nlohmann::json& doc);
nlohmann::json graph_to_json(const ModelGraph& graph);

/// Parses and validates a graph file. Throws IoError / ValidationError.
ModelGraph load_graph(const std::filesystem::path& path);
void save_graph(const ModelGraph& graph, const std::filesystem::path& path);

/// Checks every structural invariant and propagates shapes at graph.input_shape.
void validate(const ModelGraph& graph);

/// Hex SHA-256 of the canonical (compact, key-sorted) JSON form.
std::string graph_sha256(const ModelGraph& graph);

/// Output shape of every node (indexed like graph.nodes) for the given input.
/// Throws ValidationError naming the node when a kernel or stride does not fit.
std::vector<Shape> propagate_shapes(const ModelGraph& graph, const Shape& input);

/// Prunable unit output ids in topological order.
std::vector<std::string> prunable_units(const ModelGraph& graph);

/// Channel-prunable node ids in topological order.
std::vector<std::string> channel_prunable_nodes(const ModelGraph& graph);

struct NodeCost {
  std::string id;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

struct CostReport {
  std::int64_t params = 0;
  std::int64_t flops = 0;  // multiply-accumulates
  std::vector<NodeCost> per_node;
};

CostReport count_cost(const ModelGraph& graph, const Shape& input);
inline CostReport count_cost(const ModelGraph& graph) { return count_cost(graph, graph.input_shape); }

/// A retained layer whose input interface changed when upstream units were removed.
struct ReinitTarget {
  std::string id;     // unit id, or node id for a layer outside any unit
  Shape input_shape;  // shape it now receives
  friend bool operator==(const ReinitTarget&, const ReinitTarget&) = default;
};

struct UnitRemoval {
  ModelGraph graph;
  std::vector<ReinitTarget> reinit;  // topological order
};

/// Deletes whole units, re-stitching every consumer of a removed unit to that
/// unit's entry producer. A retained successor that now sees a different
/// input shape absorbs the difference: its entry convolutions take the
/// missing stride factor, and any other entry path (identity skip, channel
/// split) is routed through an inserted 1x1 projection + batch norm.
UnitRemoval remove_units(const ModelGraph& graph, const std::vector<std::string>& removed);

/// Narrows output channels to the kept index sets; downstream input widths follow.
ModelGraph apply_channel_stage(const ModelGraph& graph,
                               const std::map<std::string, std::vector<std::int64_t>>& kept);

/// Layer stage (remove_units) then channel stage; the result passes validate().
ModelGraph apply_plan(const ModelGraph& graph, const PruningPlan& plan);

}  // namespace hscp
