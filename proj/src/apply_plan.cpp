#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>

#include "graph_internal.hpp"
#include "hscp/error.hpp"
#include "hscp/graph.hpp"
#include "hscp/plan.hpp"

namespace hscp {
namespace {

constexpr const char* kScheme = "kaiming";

struct EntryMismatch {
  std::string target;     // unit id or node id
  std::string entry;      // producer feeding the target after re-stitching
  Shape original_input;   // what the target used to receive
  std::vector<std::string> consumers;  // target nodes fed directly by the entry
  std::size_t rank = 0;
};

std::string unique_id(const ModelGraph& graph, const std::string& base) {
  if (graph.find(base) == nullptr) return base;
  for (int i = 2;; ++i) {
    std::string candidate = base + "." + std::to_string(i);
    if (graph.find(candidate) == nullptr) return candidate;
  }
}

/// Output shape of `node`, computed from derived widths only. Tolerates stale
/// stored widths on derived-width kinds while a removal is being repaired.
Shape shape_of(const ModelGraph& graph, const GraphIndex& index, std::vector<std::optional<Shape>>& memo,
               std::size_t node) {
  if (memo[node]) return *memo[node];
  std::vector<Shape> inputs;
  if (index.producers(node).empty()) {
    inputs.push_back(graph.input_shape);
  } else {
    for (std::size_t p : index.producers(node)) inputs.push_back(shape_of(graph, index, memo, p));
  }
  memo[node] = detail::infer_shape(graph.nodes[node], inputs);
  return *memo[node];
}

std::int64_t stride_factor(std::int64_t now, std::int64_t before) {
  if (now <= before) return 1;
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(now) / static_cast<double>(before)));
}

/// Inserts conv(1x1, stride) + batch_norm fed by `entry` and re-routes the
/// edges entry -> consumer through it.
void insert_projection(ModelGraph& graph, const std::string& entry, const std::vector<std::string>& consumers,
                       const std::string& base, const std::string& unit, std::int64_t width, Extent2 stride) {
  Node proj;
  proj.id = unique_id(graph, base + ".reinit_proj");
  proj.kind = NodeKind::conv2d;
  proj.out_channels = width;
  proj.stride = stride;
  proj.unit = unit;
  proj.reinit = kScheme;
  proj.adaptive = true;
  Node bn;
  bn.id = unique_id(graph, base + ".reinit_proj_bn");
  bn.kind = NodeKind::batch_norm;
  bn.out_channels = width;
  bn.unit = unit;
  bn.reinit = kScheme;

  const std::set<std::string> rerouted(consumers.begin(), consumers.end());
  for (Edge& e : graph.edges) {
    if (e.from == entry && rerouted.count(e.to)) e.from = bn.id;
  }
  graph.edges.push_back({entry, proj.id});
  graph.edges.push_back({proj.id, bn.id});

  auto pos = std::find_if(graph.nodes.begin(), graph.nodes.end(),
                          [&](const Node& n) { return rerouted.count(n.id) > 0; });
  pos = graph.nodes.insert(pos, std::move(bn));
  graph.nodes.insert(pos, std::move(proj));
}

/// Returns the id of the layer that now carries re-initialized weights.
std::string repair_target(ModelGraph& graph, const EntryMismatch& m, const Shape& now) {
  const Extent2 factor{stride_factor(now.h, m.original_input.h), stride_factor(now.w, m.original_input.w)};
  const Node* target_node = graph.find(m.target);
  const bool is_unit = target_node != nullptr && target_node->prunable;

  if (is_unit) {
    std::vector<std::string> needs_projection;
    for (const std::string& id : m.consumers) {
      Node* n = graph.find(id);
      if (n->kind == NodeKind::conv2d && n->groups == 1) {
        n->stride.h *= factor.h;
        n->stride.w *= factor.w;
      } else {
        needs_projection.push_back(id);
      }
    }
    for (Node& n : graph.nodes) {
      if (n.unit == m.target || n.id == m.target) n.reinit = kScheme;
    }
    if (!needs_projection.empty()) {
      insert_projection(graph, m.entry, needs_projection, m.target, m.target, m.original_input.c, factor);
    }
    return m.target;
  }

  // A layer outside any unit. Width changes pass through normalization,
  // activation and pooling to the next weighted layer, which absorbs them.
  Node* consumer = graph.find(m.consumers.front());
  if (consumer->kind == NodeKind::conv2d && consumer->groups == 1) {
    consumer->stride.h *= factor.h;
    consumer->stride.w *= factor.w;
    consumer->reinit = kScheme;
    return consumer->id;
  }
  if (consumer->kind == NodeKind::linear || consumer->kind == NodeKind::classifier) {
    consumer->reinit = kScheme;
    return consumer->id;
  }
  const GraphIndex index(graph);
  bool spatial_collapsed = false;
  std::size_t cur = index.index_of(consumer->id);
  for (;;) {
    const Node& n = graph.nodes[cur];
    const bool passthrough = n.kind == NodeKind::batch_norm || n.kind == NodeKind::relu ||
                             n.kind == NodeKind::pool || n.kind == NodeKind::global_pool;
    if (!passthrough || !n.unit.empty() || index.consumers(cur).size() != 1) break;
    spatial_collapsed = spatial_collapsed || n.kind == NodeKind::global_pool;
    cur = index.consumers(cur).front();
  }
  Node& absorber = graph.nodes[cur];
  const bool weighted = absorber.unit.empty() && ((absorber.kind == NodeKind::conv2d && absorber.groups == 1) ||
                                                  absorber.kind == NodeKind::linear ||
                                                  absorber.kind == NodeKind::classifier);
  if (weighted && cur != index.index_of(consumer->id)) {
    if (absorber.kind == NodeKind::conv2d && !spatial_collapsed) {
      absorber.stride.h *= factor.h;
      absorber.stride.w *= factor.w;
    }
    absorber.reinit = kScheme;
    return absorber.id;
  }
  insert_projection(graph, m.entry, m.consumers, m.target, "", m.original_input.c, factor);
  return m.target;
}

}  // namespace

UnitRemoval remove_units(const ModelGraph& graph, const std::vector<std::string>& removed) {
  const GraphIndex index(graph);
  const std::vector<Shape> original = propagate_shapes(graph, graph.input_shape);
  const std::size_t n = graph.nodes.size();

  std::vector<std::size_t> outputs;
  for (const std::string& id : removed) {
    if (!index.contains(id)) throw ValidationError("plan references unknown unit '" + id + "'");
    const std::size_t i = index.index_of(id);
    if (!graph.nodes[i].prunable) throw ValidationError("node '" + id + "' is not a prunable unit");
    if (std::find(outputs.begin(), outputs.end(), i) != outputs.end()) {
      throw ValidationError("unit '" + id + "' removed twice");
    }
    outputs.push_back(i);
  }
  std::sort(outputs.begin(), outputs.end(),
            [&](std::size_t a, std::size_t b) { return index.topological_rank(a) < index.topological_rank(b); });

  std::vector<bool> dead(n, false);
  std::map<std::size_t, std::size_t> replacement;  // removed unit output -> its entry producer
  for (std::size_t out : outputs) {
    const auto members = index.unit_members(graph.nodes[out].id);
    const std::set<std::size_t> member_set(members.begin(), members.end());
    std::optional<std::size_t> entry;
    for (std::size_t m : members) {
      for (std::size_t p : index.producers(m)) {
        if (!member_set.count(p)) entry = p;
      }
      dead[m] = true;
    }
    replacement[out] = *entry;
  }
  auto resolve = [&](std::size_t i) {
    while (replacement.count(i)) i = replacement.at(i);
    return i;
  };

  UnitRemoval result;
  ModelGraph& g = result.graph;
  g.version = graph.version;
  g.input_shape = graph.input_shape;
  g.class_count = graph.class_count;
  for (std::size_t i = 0; i < n; ++i) {
    if (!dead[i]) g.nodes.push_back(graph.nodes[i]);
  }

  std::map<std::string, EntryMismatch> mismatches;
  for (const Edge& e : graph.edges) {
    const std::size_t from = index.index_of(e.from);
    const std::size_t to = index.index_of(e.to);
    if (dead[to]) continue;
    if (!dead[from]) {
      g.edges.push_back(e);
      continue;
    }
    const std::size_t entry = resolve(from);
    g.edges.push_back({graph.nodes[entry].id, e.to});
    const Node& consumer = graph.nodes[to];
    const std::string target = consumer.unit.empty() ? consumer.id : consumer.unit;
    auto& m = mismatches[target];
    m.target = target;
    m.entry = graph.nodes[entry].id;
    m.original_input = original[from];
    m.consumers.push_back(consumer.id);
    m.rank = std::max(m.rank, index.topological_rank(to));
  }

  for (const auto& group : graph.coupling_groups) {
    std::vector<std::string> alive;
    for (const auto& id : group) {
      if (!dead[index.index_of(id)]) alive.push_back(id);
    }
    if (alive.size() >= 2) g.coupling_groups.push_back(std::move(alive));
  }

  std::vector<EntryMismatch> ordered;
  for (auto& [_, m] : mismatches) ordered.push_back(std::move(m));
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.rank < b.rank; });

  for (const EntryMismatch& m : ordered) {
    const GraphIndex current(g);
    std::vector<std::optional<Shape>> memo(g.nodes.size());
    const Shape now = shape_of(g, current, memo, current.index_of(m.entry));
    if (now == m.original_input) continue;
    result.reinit.push_back({repair_target(g, m, now), now});
  }

  try {
    detail::rewrite_widths(g);
    validate(g);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("layer removal leaves an invalid graph: ") + e.what());
  }
  return result;
}

ModelGraph apply_channel_stage(const ModelGraph& graph,
                               const std::map<std::string, std::vector<std::int64_t>>& kept) {
  ModelGraph g = graph;
  for (const auto& [id, indices] : kept) {
    Node* node = g.find(id);
    if (node == nullptr) throw ValidationError("channel stage references unknown node '" + id + "'");
    if (!node->channel_prunable) throw ValidationError("node '" + id + "' is not channel_prunable");
    if (indices.empty()) throw ValidationError("node '" + id + "' keeps no channels");
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] < 0 || indices[i] >= node->out_channels) {
        throw ValidationError("node '" + id + "' keeps channel " + std::to_string(indices[i]) +
                              " outside [0, " + std::to_string(node->out_channels) + ")");
      }
      if (i > 0 && indices[i] <= indices[i - 1]) {
        throw ValidationError("kept channels of '" + id + "' must be strictly ascending");
      }
    }
  }
  for (const auto& group : g.coupling_groups) {
    const std::vector<std::int64_t>* reference = nullptr;
    std::string reference_id;
    std::size_t present = 0;
    for (const auto& id : group) {
      auto it = kept.find(id);
      if (it == kept.end()) continue;
      ++present;
      if (reference != nullptr && *reference != it->second) {
        throw ValidationError("coupling violation: '" + reference_id + "' and '" + id +
                              "' keep different channel sets");
      }
      reference = &it->second;
      reference_id = id;
    }
    if (present != 0 && present != group.size()) {
      throw ValidationError("coupling violation: group containing '" + group.front() +
                            "' is only partially channel-pruned");
    }
  }
  for (const auto& [id, indices] : kept) g.find(id)->out_channels = static_cast<std::int64_t>(indices.size());

  try {
    detail::rewrite_widths(g);
    validate(g);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("channel stage leaves an invalid graph: ") + e.what());
  }
  return g;
}

ModelGraph apply_plan(const ModelGraph& graph, const PruningPlan& plan) {
  for (const auto& id : plan.layer_stage.retained) {
    if (graph.find(id) == nullptr) throw ValidationError("plan references unknown unit '" + id + "'");
  }
  UnitRemoval removal = remove_units(graph, plan.layer_stage.removed);

  std::set<std::string> expected, declared;
  for (const auto& t : removal.reinit) expected.insert(t.id);
  for (const auto& m : plan.layer_stage.reinitialized) declared.insert(m.id);
  if (expected != declared) {
    std::string list;
    for (const auto& id : expected) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("reinitialization markers do not match the removed units; expected [" + list + "]");
  }
  return apply_channel_stage(removal.graph, plan.channel_stage);
}

}  // namespace hscp
